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

#include "cq/actdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>

#include "bytes.hpp"
#include "cq/errors.hpp"
#include "cq/rng.hpp"

namespace cq {

using detail::append_f32_payload;
using detail::get_u16;
using detail::get_u64;
using detail::put_u16;
using detail::put_u64;

namespace {

constexpr char kMagic[4] = {'A', 'C', 'T', 'D'};
constexpr uint16_t kVersion = 1;
constexpr uint16_t kFlagGradients = 1;

void read_exact(std::istream& in, unsigned char* dst, size_t n, uint64_t offset,
                const char* what) {
    detail::read_exact(in, dst, n, offset, "ACTD", what);
}

std::vector<float> read_f32_payload(std::istream& in, size_t count, uint64_t offset,
                                    const char* what) {
    return detail::read_f32_payload(in, count, offset, "ACTD", what);
}

void check_finite(const std::vector<float>& data, uint64_t payload_offset, const char* what) {
    for (size_t i = 0; i < data.size(); ++i) {
        if (!std::isfinite(data[i])) {
            throw parse_error(std::string("ACTD: non-finite ") + what + " value at offset " +
                              std::to_string(payload_offset + i * 4));
        }
    }
}

}  // namespace

void ActivationMatrix::validate() const {
    if (channels == 0 || tokens == 0) {
        throw invalid_spec("activation matrix: channels and tokens must be positive");
    }
    if (values.size() != channels * tokens) {
        throw invalid_spec("activation matrix: values size " + std::to_string(values.size()) +
                           " != channels*tokens " + std::to_string(channels * tokens));
    }
    for (float v : values) {
        if (!std::isfinite(v)) throw invalid_spec("activation matrix: non-finite value");
    }
    if (!gradients.empty()) {
        if (gradients.size() != channels * tokens) {
            throw invalid_spec("activation matrix: gradient shape mismatch");
        }
        for (float g : gradients) {
            if (!std::isfinite(g)) throw invalid_spec("activation matrix: non-finite gradient");
        }
    }
}

void SynthSpec::validate() const {
    if (channels == 0 || tokens == 0) throw invalid_spec("synth spec: empty shape");
    if (latent_rank < 1) throw invalid_spec("synth spec: latent_rank must be >= 1");
    if (latent_rank > channels) {
        throw invalid_spec("synth spec: latent_rank " + std::to_string(latent_rank) +
                           " exceeds channels " + std::to_string(channels));
    }
    if (!(noise_sigma >= 0.0)) throw invalid_spec("synth spec: noise_sigma must be >= 0");
    if (!(mixing_scale > 0.0)) throw invalid_spec("synth spec: mixing_scale must be > 0");
}

void ModelDims::validate() const {
    if (layers < 1 || kv_heads < 1 || head_channels < 1 || max_context < 1) {
        throw invalid_spec("model dims: all fields must be >= 1");
    }
}

uint64_t save_activations(const ActivationMatrix& matrix, std::ostream& sink) {
    matrix.validate();
    std::string buf;
    buf.reserve(24 + matrix.values.size() * 4 + matrix.gradients.size() * 4);
    buf.append(kMagic, 4);
    put_u16(buf, kVersion);
    put_u16(buf, matrix.has_gradients() ? kFlagGradients : 0);
    put_u64(buf, matrix.channels);
    put_u64(buf, matrix.tokens);
    append_f32_payload(buf, matrix.values);
    if (matrix.has_gradients()) append_f32_payload(buf, matrix.gradients);

    sink.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!sink) {
        throw io_error("ACTD: write failure near byte offset " + std::to_string(buf.size()));
    }
    return buf.size();
}

ActivationMatrix load_activations(std::istream& source) {
    unsigned char header[24];
    read_exact(source, header, sizeof(header), 0, "header");
    if (std::memcmp(header, kMagic, 4) != 0) {
        throw parse_error("ACTD: bad magic at offset 0");
    }
    const uint16_t version = get_u16(header + 4);
    if (version != kVersion) {
        throw parse_error("ACTD: unsupported version " + std::to_string(version) +
                          " (field at offset 4)");
    }
    const uint16_t flags = get_u16(header + 6);
    if (flags & ~kFlagGradients) {
        throw parse_error("ACTD: unknown flags (field at offset 6)");
    }
    ActivationMatrix m;
    m.channels = get_u64(header + 8);
    m.tokens = get_u64(header + 16);
    if (m.channels == 0 || m.tokens == 0) {
        throw parse_error("ACTD: zero channels or tokens in header");
    }
    const size_t count = m.channels * m.tokens;
    uint64_t offset = 24;
    m.values = read_f32_payload(source, count, offset, "values payload");
    check_finite(m.values, offset, "values");
    offset += count * 4;
    if (flags & kFlagGradients) {
        m.gradients = read_f32_payload(source, count, offset, "gradients payload");
        check_finite(m.gradients, offset, "gradients");
    }
    return m;
}

uint64_t save_activations_file(const ActivationMatrix& matrix, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("cannot open for write: " + path);
    return save_activations(matrix, out);
}

ActivationMatrix load_activations_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open for read: " + path);
    return load_activations(in);
}

ActivationMatrix synth_correlated(const SynthSpec& spec) {
    spec.validate();
    GaussianSampler gauss(spec.seed);

    // Fixed mixing matrix, drawn first, row-major (channel-major).
    const size_t r = spec.latent_rank;
    std::vector<double> mixing(spec.channels * r);
    for (double& entry : mixing) entry = spec.mixing_scale * gauss.next();

    ActivationMatrix m(spec.channels, spec.tokens);
    std::vector<double> latent(r);
    for (size_t tok = 0; tok < spec.tokens; ++tok) {
        for (size_t l = 0; l < r; ++l) latent[l] = gauss.next();
        for (size_t ch = 0; ch < spec.channels; ++ch) {
            double acc = 0.0;
            const double* row = mixing.data() + ch * r;
            for (size_t l = 0; l < r; ++l) acc += row[l] * latent[l];
            acc += spec.noise_sigma * gauss.next();
            m.at(ch, tok) = static_cast<float>(acc);
        }
    }
    return m;
}

std::vector<size_t> attach_synthetic_gradients(ActivationMatrix& matrix,
                                               double salient_fraction,
                                               double salient_scale,
                                               double base_scale,
                                               uint64_t seed) {
    if (!(salient_fraction >= 0.0 && salient_fraction <= 1.0)) {
        throw invalid_spec("gradient synthesis: salient_fraction must be in [0,1]");
    }
    const uint64_t lane = derive_seed(seed, 1);
    Xoshiro256ss rng(lane);
    GaussianSampler gauss(derive_seed(seed, 2));

    // Partial Fisher-Yates to pick the salient token subset.
    const size_t n_salient =
        static_cast<size_t>(std::ceil(salient_fraction * static_cast<double>(matrix.tokens)));
    std::vector<size_t> order(matrix.tokens);
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (size_t i = 0; i < n_salient && i + 1 < order.size(); ++i) {
        const size_t j = i + static_cast<size_t>(rng.next() % (order.size() - i));
        std::swap(order[i], order[j]);
    }
    std::vector<size_t> salient(order.begin(), order.begin() + n_salient);
    std::vector<uint8_t> is_salient(matrix.tokens, 0);
    for (size_t t : salient) is_salient[t] = 1;

    matrix.gradients.assign(matrix.channels * matrix.tokens, 0.0f);
    for (size_t ch = 0; ch < matrix.channels; ++ch) {
        for (size_t tok = 0; tok < matrix.tokens; ++tok) {
            const double scale = is_salient[tok] ? salient_scale : base_scale;
            matrix.gradients[ch * matrix.tokens + tok] = static_cast<float>(scale * gauss.next());
        }
    }
    std::sort(salient.begin(), salient.end());
    return salient;
}

uint64_t kv_cache_bytes(const ModelDims& dims, uint64_t batch, uint64_t tokens,
                        double bits_per_fpn) {
    dims.validate();
    if (!(bits_per_fpn > 0.0)) throw invalid_spec("kv_cache_bytes: bits_per_fpn must be > 0");
    if (tokens > dims.max_context) {
        throw domain_error("kv_cache_bytes: tokens " + std::to_string(tokens) +
                           " exceeds max_context " + std::to_string(dims.max_context));
    }
    const double fpn = static_cast<double>(batch) * static_cast<double>(tokens) *
                       static_cast<double>(dims.layers) * 2.0 *
                       static_cast<double>(dims.kv_heads) *
                       static_cast<double>(dims.head_channels);
    return static_cast<uint64_t>(std::ceil(fpn * bits_per_fpn / 8.0));
}

}  // namespace cq
