/*
 * Copyright (c) cqkv Contributors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace cq {

/// A channels x tokens matrix of key or value activations, channel-major
/// (one channel's token values are contiguous). Optionally carries a
/// same-shape gradient matrix. Immutable by convention once built.
struct ActivationMatrix {
    size_t channels = 0;
    size_t tokens = 0;
    std::vector<float> values;     // channels * tokens, channel-major
    std::vector<float> gradients;  // empty, or channels * tokens

    ActivationMatrix() = default;
    ActivationMatrix(size_t channels_, size_t tokens_)
        : channels(channels_), tokens(tokens_), values(channels_ * tokens_, 0.0f) {}

    bool has_gradients() const { return !gradients.empty(); }

    float at(size_t ch, size_t tok) const { return values[ch * tokens + tok]; }
    float& at(size_t ch, size_t tok) { return values[ch * tokens + tok]; }
    float grad_at(size_t ch, size_t tok) const { return gradients[ch * tokens + tok]; }

    const float* channel(size_t ch) const { return values.data() + ch * tokens; }

    // Throws invalid_spec if a shape or finiteness invariant is violated.
    void validate() const;
};

/// Parameters for synthetic correlated activations: each token column is
/// M*z + eps with z an r-dim standard normal, M a fixed channels x r mixing
/// matrix, eps isotropic noise.
struct SynthSpec {
    size_t channels = 0;
    size_t tokens = 0;
    size_t latent_rank = 1;
    double noise_sigma = 0.0;
    double mixing_scale = 1.0;
    uint64_t seed = 0;

    void validate() const;
};

/// Model shape for cache-size accounting (layers l, kv heads h, head
/// channels c, max context n).
struct ModelDims {
    size_t layers = 1;
    size_t kv_heads = 1;
    size_t head_channels = 1;
    size_t max_context = 1;

    void validate() const;
};

// ACTD binary dump (little-endian throughout):
//   "ACTD" | u16 version=1 | u16 flags (bit0 = gradients) |
//   u64 channels | u64 tokens |
//   values payload  (channels*tokens f32, channel-major) |
//   gradients payload (same layout, only when flag set)
// No padding, no checksum.
uint64_t save_activations(const ActivationMatrix& matrix, std::ostream& sink);
ActivationMatrix load_activations(std::istream& source);
uint64_t save_activations_file(const ActivationMatrix& matrix, const std::string& path);
ActivationMatrix load_activations_file(const std::string& path);

// Deterministic synthetic activations. Stream layout (single xoshiro256**
// stream seeded with spec.seed): mixing matrix entries row-major first,
// then per token column the r latent draws followed by the channels noise
// draws. Noise draws are always consumed, even at noise_sigma == 0.
ActivationMatrix synth_correlated(const SynthSpec& spec);

// Synthetic gradients for Fisher experiments: every entry is drawn
// N(0, base_scale^2); a salient_fraction subset of token columns (chosen
// by the documented stream, without replacement) is drawn
// N(0, salient_scale^2) instead. Gradient stream is derive_seed(seed, 1)
// so it never perturbs the value stream. Returns the salient token ids.
std::vector<size_t> attach_synthetic_gradients(ActivationMatrix& matrix,
                                               double salient_fraction,
                                               double salient_scale,
                                               double base_scale,
                                               uint64_t seed);

// ceil(b*n*l*2*h*c * bits_per_fpn / 8) bytes for a cache of n tokens at
// batch size b. Throws domain_error if n exceeds dims.max_context.
uint64_t kv_cache_bytes(const ModelDims& dims, uint64_t batch, uint64_t tokens,
                        double bits_per_fpn);

}  // namespace cq
