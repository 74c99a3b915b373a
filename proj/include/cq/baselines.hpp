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

#include <cstdint>
#include <optional>

#include "cq/actdata.hpp"
#include "cq/cqcodec.hpp"

namespace cq {

enum class QuantAxis : uint8_t {
    per_channel,  // one slice per channel (optionally chunked along tokens)
    per_token,    // one slice per token column (optionally chunked along channels)
};

/// Asymmetric min-max affine integer quantizer config. group_size, when
/// set, subdivides each slice into chunks of that length and must divide
/// the slice length.
struct UniformQuantConfig {
    uint32_t bits = 4;  // in [1,8]
    QuantAxis axis = QuantAxis::per_channel;
    std::optional<size_t> group_size;

    void validate() const;
};

struct ChannelwiseResult {
    Codebook codebook;
    QuantizedCache codes;
    ActivationMatrix reconstruction;
};

// Non-uniform channel-wise quantization: per-channel scalar centroid sets.
// A thin wrapper over the coupled codec at c=1, so equivalence with
// CQ-1c<bits>b holds bit-for-bit by construction.
ChannelwiseResult channelwise_nonuniform(const ActivationMatrix& matrix,
                                         uint32_t bits, uint64_t seed,
                                         uint32_t kmeans_iters = 100);

struct UniformIntResult {
    ActivationMatrix reconstruction;
    std::vector<uint8_t> codes;  // one per entry, channel-major
    uint64_t code_bits = 0;      // entries * bits
    uint64_t side_info_bytes = 0;  // per-slice (min, scale) as two f32
    size_t num_slices = 0;
};

// Per slice: scale = (max-min)/(2^bits - 1), zero point at min,
// code = round_half_away_from_zero((x - min)/scale),
// reconstruction = min + code*scale. A constant slice reconstructs exactly.
UniformIntResult uniform_int(const ActivationMatrix& matrix,
                             const UniformQuantConfig& config);

}  // namespace cq
