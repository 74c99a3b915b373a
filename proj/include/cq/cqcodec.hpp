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
#include <string_view>
#include <vector>

#include "cq/actdata.hpp"

namespace cq {

enum class LearningMode : uint8_t {
    uniform = 0,  // every token column weighs 1
    fisher = 1,   // token columns weighed by summed squared gradients
};

/// Coupled-quantization configuration: c contiguous channels share one
/// b-bit code. Notation "CQ-<c>c<b>b"; bits per FPN is exactly b/c.
struct CQConfig {
    uint32_t channels_per_group = 1;    // c
    uint32_t bits_per_code = 8;         // b, in [1,16]
    LearningMode mode = LearningMode::uniform;
    uint32_t kmeans_iters = 100;
    uint64_t seed = 0;

    size_t codebook_entries() const { return size_t{1} << bits_per_code; }
    std::string notation() const;  // "CQ-4c8b"

    // Accepts "<c>c<b>b", optionally prefixed "CQ-". Anything else throws
    // parse_error. Mode/iters/seed keep their defaults.
    static CQConfig parse_notation(std::string_view text);

    void validate() const;
};

/// Per-group centroid sets: num_groups groups of 2^b centroids, each of
/// dimension c, group-major then centroid-major. Group g covers contiguous
/// channels [g*c, g*c + c).
struct Codebook {
    CQConfig config;
    size_t num_groups = 0;
    std::vector<float> centroids;        // num_groups * 2^b * c
    std::vector<uint8_t> fisher_fallback;  // per group: 1 if all-zero Fisher
                                           // weights forced uniform weighting

    size_t channels() const { return num_groups * config.channels_per_group; }

    const float* centroid(size_t group, size_t code) const {
        const size_t c = config.channels_per_group;
        return centroids.data() + (group * config.codebook_entries() + code) * c;
    }

    // FNV-1a over (c, b, mode, num_groups, centroid f32 LE bytes); ties a
    // quantized cache to the codebook that produced it.
    uint64_t hash() const;
};

/// Bit-packed code streams, one per group, byte-aligned. Within a group the
/// tokens' b-bit codes are laid out consecutively, little-endian bit order
/// inside each byte. Code bits (excluding alignment padding) total
/// num_groups * tokens * b.
struct QuantizedCache {
    uint32_t channels_per_group = 0;
    uint32_t bits_per_code = 0;
    size_t num_groups = 0;
    size_t tokens = 0;
    uint64_t codebook_hash = 0;
    std::vector<uint8_t> payload;  // num_groups * group_stride_bytes()

    size_t group_stride_bytes() const {
        return (tokens * bits_per_code + 7) / 8;
    }
    uint64_t payload_code_bits() const {
        return static_cast<uint64_t>(num_groups) * tokens * bits_per_code;
    }

    uint32_t code_at(size_t group, size_t token) const;
    void set_code(size_t group, size_t token, uint32_t code);
};

/// Optional per-group diagnostics from codebook learning.
struct LearnReport {
    std::vector<double> group_objective;
    std::vector<size_t> group_iterations;
    double total_objective = 0.0;
};

// Learns one centroid set per channel group with weighted k-means
// (k = 2^b, k-means++ init). Group g runs with seed derive_seed(seed, g).
// Uniform mode weighs every token column 1; fisher mode weighs it by the
// group's summed squared gradients for that token, falling back to uniform
// (flagged) when a group's weights are all zero. threads = 0 means
// hardware concurrency; groups are independent jobs, so the result does not
// depend on the thread count.
Codebook learn_codebook(const ActivationMatrix& matrix, const CQConfig& config,
                        LearnReport* report = nullptr, size_t threads = 1);

// Nearest centroid per group-column in squared L2, ties to the lowest code.
QuantizedCache quantize(const ActivationMatrix& matrix, const Codebook& codebook);

// Rebuilds each group-column from its coded centroid. Never carries
// gradients. Throws codec_error on hash or payload mismatch.
ActivationMatrix dequantize(const QuantizedCache& cache, const Codebook& codebook);

// Squared Frobenius norm of (original - reconstructed), f64 accumulation.
double quantization_error(const ActivationMatrix& original,
                          const ActivationMatrix& reconstructed);

// weight[g][t] = sum over the group's channels of gradients[ch][t]^2,
// group-major. Exposed so the Fisher weighting is inspectable on its own.
std::vector<double> fisher_weights(const ActivationMatrix& matrix, const CQConfig& config);

double bits_per_fpn(const CQConfig& config);  // exactly b / c

// Centroid parameter count l * 2 * h * c_head * 2^b (independent of the
// coupling width). Requires head_channels divisible by c.
uint64_t codebook_param_count(const ModelDims& dims, const CQConfig& config);

// Centroid storage in bytes at a given precision (16 for the conventional
// fp16 accounting, 32 for this artifact's on-disk representation).
uint64_t codebook_storage_bytes(const ModelDims& dims, const CQConfig& config,
                                size_t bits_per_entry);

// CQCB file: "CQCB" | u16 version=1 | u16 c | u16 b | u8 mode | u8 reserved |
// u64 num_groups | centroids (group-major, centroid-major f32 LE) |
// fisher-fallback bitset (ceil(num_groups/8) bytes, LSB-first).
uint64_t save_codebook(const Codebook& codebook, std::ostream& sink);
Codebook load_codebook(std::istream& source);
uint64_t save_codebook_file(const Codebook& codebook, const std::string& path);
Codebook load_codebook_file(const std::string& path);

// CQQC file: "CQQC" | u16 version=1 | u16 c | u16 b | u64 num_groups |
// u64 tokens | u64 codebook hash | per-group byte-aligned code payload.
uint64_t save_cache(const QuantizedCache& cache, std::ostream& sink);
QuantizedCache load_cache(std::istream& source);
uint64_t save_cache_file(const QuantizedCache& cache, const std::string& path);
QuantizedCache load_cache_file(const std::string& path);

}  // namespace cq
