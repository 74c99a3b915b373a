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

#include "cq/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "cq/errors.hpp"

namespace cq {

void UniformQuantConfig::validate() const {
    if (bits < 1 || bits > 8) {
        throw invalid_spec("uniform int config: bits must be in [1,8], got " +
                           std::to_string(bits));
    }
    if (group_size && *group_size == 0) {
        throw invalid_spec("uniform int config: group_size must be positive when set");
    }
}

ChannelwiseResult channelwise_nonuniform(const ActivationMatrix& matrix, uint32_t bits,
                                         uint64_t seed, uint32_t kmeans_iters) {
    CQConfig config;
    config.channels_per_group = 1;
    config.bits_per_code = bits;
    config.mode = LearningMode::uniform;
    config.kmeans_iters = kmeans_iters;
    config.seed = seed;
    config.validate();

    ChannelwiseResult result;
    result.codebook = learn_codebook(matrix, config);
    result.codes = quantize(matrix, result.codebook);
    result.reconstruction = dequantize(result.codes, result.codebook);
    return result;
}

namespace {

// Quantize one contiguous run of `len` values laid out with stride
// `stride` starting at `first`. Indices are into the channel-major value
// array, so per-channel slices have stride 1 and per-token slices stride
// `tokens`.
void quantize_slice(const ActivationMatrix& matrix, size_t first, size_t stride, size_t len,
                    uint32_t bits, UniformIntResult& out) {
    float lo = matrix.values[first];
    float hi = lo;
    for (size_t i = 1; i < len; ++i) {
        const float v = matrix.values[first + i * stride];
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    const uint32_t levels = (1u << bits) - 1u;
    const double scale = (static_cast<double>(hi) - static_cast<double>(lo)) / levels;

    for (size_t i = 0; i < len; ++i) {
        const size_t idx = first + i * stride;
        uint32_t code = 0;
        if (scale > 0.0) {
            const double t = (static_cast<double>(matrix.values[idx]) - lo) / scale;
            const double rounded = std::round(t);  // half away from zero; t >= 0 here
            code = static_cast<uint32_t>(std::min<double>(rounded, levels));
        }
        out.codes[idx] = static_cast<uint8_t>(code);
        out.reconstruction.values[idx] = static_cast<float>(lo + code * scale);
    }
    out.num_slices += 1;
}

}  // namespace

UniformIntResult uniform_int(const ActivationMatrix& matrix, const UniformQuantConfig& config) {
    config.validate();
    matrix.validate();

    const size_t slice_len =
        config.axis == QuantAxis::per_channel ? matrix.tokens : matrix.channels;
    size_t chunk = slice_len;
    if (config.group_size) {
        if (slice_len % *config.group_size != 0) {
            throw shape_error("uniform_int: group_size " + std::to_string(*config.group_size) +
                              " does not divide slice length " + std::to_string(slice_len));
        }
        chunk = *config.group_size;
    }

    UniformIntResult result;
    result.reconstruction = ActivationMatrix(matrix.channels, matrix.tokens);
    result.codes.assign(matrix.values.size(), 0);
    result.code_bits = static_cast<uint64_t>(matrix.values.size()) * config.bits;

    if (config.axis == QuantAxis::per_channel) {
        for (size_t ch = 0; ch < matrix.channels; ++ch) {
            for (size_t start = 0; start < matrix.tokens; start += chunk) {
                quantize_slice(matrix, ch * matrix.tokens + start, 1, chunk, config.bits,
                               result);
            }
        }
    } else {
        for (size_t tok = 0; tok < matrix.tokens; ++tok) {
            for (size_t start = 0; start < matrix.channels; start += chunk) {
                quantize_slice(matrix, start * matrix.tokens + tok, matrix.tokens, chunk,
                               config.bits, result);
            }
        }
    }
    result.side_info_bytes = static_cast<uint64_t>(result.num_slices) * 2 * sizeof(float);
    return result;
}

}  // namespace cq
