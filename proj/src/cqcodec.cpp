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

#include "cq/cqcodec.hpp"

#include <atomic>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <istream>
#include <mutex>
#include <ostream>
#include <thread>

#include "bytes.hpp"
#include "cq/clustering.hpp"
#include "cq/errors.hpp"
#include "cq/rng.hpp"

namespace cq {

namespace {

constexpr char kCodebookMagic[4] = {'C', 'Q', 'C', 'B'};
constexpr char kCacheMagic[4] = {'C', 'Q', 'Q', 'C'};
constexpr uint16_t kVersion = 1;

double column_dist2(const float* col, const float* centroid, size_t dim) {
    double acc = 0.0;
    for (size_t d = 0; d < dim; ++d) {
        const double diff = static_cast<double>(col[d]) - static_cast<double>(centroid[d]);
        acc += diff * diff;
    }
    return acc;
}

uint64_t fnv1a(uint64_t h, const void* data, size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001B3ull;
    }
    return h;
}

// Run fn(g) for g in [0, n), fanning out across up to `threads` workers.
// Each g is an independent job, so the outcome is thread-count agnostic.
void parallel_groups(size_t n, size_t threads, const std::function<void(size_t)>& fn) {
    if (threads == 0) threads = std::max<size_t>(1, std::thread::hardware_concurrency());
    threads = std::min(threads, n);
    if (threads <= 1) {
        for (size_t g = 0; g < n; ++g) fn(g);
        return;
    }
    std::atomic<size_t> next{0};
    std::vector<std::thread> pool;
    std::exception_ptr first_error;
    std::mutex error_mutex;
    pool.reserve(threads);
    for (size_t t = 0; t < threads; ++t) {
        pool.emplace_back([&]() {
            for (;;) {
                const size_t g = next.fetch_add(1);
                if (g >= n) return;
                try {
                    fn(g);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (!first_error) first_error = std::current_exception();
                    return;
                }
            }
        });
    }
    for (auto& th : pool) th.join();
    if (first_error) std::rethrow_exception(first_error);
}

}  // namespace

void CQConfig::validate() const {
    if (channels_per_group < 1) throw invalid_spec("cq config: c must be >= 1");
    if (bits_per_code < 1 || bits_per_code > 16) {
        throw invalid_spec("cq config: b must be in [1,16], got " +
                           std::to_string(bits_per_code));
    }
    if (kmeans_iters < 1) throw invalid_spec("cq config: kmeans_iters must be >= 1");
}

std::string CQConfig::notation() const {
    return "CQ-" + std::to_string(channels_per_group) + "c" + std::to_string(bits_per_code) +
           "b";
}

CQConfig CQConfig::parse_notation(std::string_view text) {
    std::string_view body = text;
    if (body.substr(0, 3) == "CQ-") body.remove_prefix(3);
    // Grammar: <c>c<b>b, nothing else.
    const size_t cpos = body.find('c');
    if (cpos == std::string_view::npos || cpos == 0 || body.empty() || body.back() != 'b') {
        throw parse_error("cq notation: expected <c>c<b>b, got '" + std::string(text) + "'");
    }
    const std::string_view c_part = body.substr(0, cpos);
    const std::string_view b_part = body.substr(cpos + 1, body.size() - cpos - 2);
    uint32_t c = 0;
    uint32_t b = 0;
    auto cr = std::from_chars(c_part.data(), c_part.data() + c_part.size(), c);
    auto br = std::from_chars(b_part.data(), b_part.data() + b_part.size(), b);
    if (cr.ec != std::errc{} || cr.ptr != c_part.data() + c_part.size() ||
        br.ec != std::errc{} || br.ptr != b_part.data() + b_part.size() || b_part.empty()) {
        throw parse_error("cq notation: expected <c>c<b>b, got '" + std::string(text) + "'");
    }
    CQConfig config;
    config.channels_per_group = c;
    config.bits_per_code = b;
    config.validate();
    return config;
}

uint64_t Codebook::hash() const {
    uint64_t h = 0xCBF29CE484222325ull;
    const uint16_t c16 = static_cast<uint16_t>(config.channels_per_group);
    const uint16_t b16 = static_cast<uint16_t>(config.bits_per_code);
    const uint8_t mode8 = static_cast<uint8_t>(config.mode);
    unsigned char scalar[2];
    scalar[0] = static_cast<unsigned char>(c16 & 0xFF);
    scalar[1] = static_cast<unsigned char>(c16 >> 8);
    h = fnv1a(h, scalar, 2);
    scalar[0] = static_cast<unsigned char>(b16 & 0xFF);
    scalar[1] = static_cast<unsigned char>(b16 >> 8);
    h = fnv1a(h, scalar, 2);
    h = fnv1a(h, &mode8, 1);
    unsigned char groups[8];
    for (int i = 0; i < 8; ++i) groups[i] = static_cast<unsigned char>((num_groups >> (8 * i)) & 0xFF);
    h = fnv1a(h, groups, 8);
    for (float f : centroids) {
        uint32_t bits;
        std::memcpy(&bits, &f, 4);
        unsigned char le[4];
        for (int i = 0; i < 4; ++i) le[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xFF);
        h = fnv1a(h, le, 4);
    }
    return h;
}

uint32_t QuantizedCache::code_at(size_t group, size_t token) const {
    const size_t base = group * group_stride_bytes();
    size_t bitpos = token * bits_per_code;
    uint32_t value = 0;
    uint32_t filled = 0;
    while (filled < bits_per_code) {
        const size_t byte = base + bitpos / 8;
        const uint32_t off = bitpos % 8;
        const uint32_t take = std::min<uint32_t>(8 - off, bits_per_code - filled);
        const uint32_t chunk = (payload[byte] >> off) & ((1u << take) - 1u);
        value |= chunk << filled;
        filled += take;
        bitpos += take;
    }
    return value;
}

void QuantizedCache::set_code(size_t group, size_t token, uint32_t code) {
    const size_t base = group * group_stride_bytes();
    size_t bitpos = token * bits_per_code;
    uint32_t written = 0;
    while (written < bits_per_code) {
        const size_t byte = base + bitpos / 8;
        const uint32_t off = bitpos % 8;
        const uint32_t take = std::min<uint32_t>(8 - off, bits_per_code - written);
        const uint32_t mask = ((1u << take) - 1u);
        payload[byte] = static_cast<uint8_t>(
            (payload[byte] & ~(mask << off)) | (((code >> written) & mask) << off));
        written += take;
        bitpos += take;
    }
}

std::vector<double> fisher_weights(const ActivationMatrix& matrix, const CQConfig& config) {
    config.validate();
    if (!matrix.has_gradients()) {
        throw missing_gradient_error("fisher_weights: matrix carries no gradients");
    }
    const size_t c = config.channels_per_group;
    if (matrix.channels % c != 0) {
        throw shape_error("fisher_weights: channels " + std::to_string(matrix.channels) +
                          " not divisible by c " + std::to_string(c));
    }
    const size_t num_groups = matrix.channels / c;
    std::vector<double> weights(num_groups * matrix.tokens, 0.0);
    for (size_t g = 0; g < num_groups; ++g) {
        double* w = weights.data() + g * matrix.tokens;
        for (size_t d = 0; d < c; ++d) {
            const float* grad = matrix.gradients.data() + (g * c + d) * matrix.tokens;
            for (size_t tok = 0; tok < matrix.tokens; ++tok) {
                w[tok] += static_cast<double>(grad[tok]) * static_cast<double>(grad[tok]);
            }
        }
    }
    return weights;
}

Codebook learn_codebook(const ActivationMatrix& matrix, const CQConfig& config,
                        LearnReport* report, size_t threads) {
    config.validate();
    const size_t c = config.channels_per_group;
    if (matrix.channels % c != 0) {
        throw shape_error("learn_codebook: channels " + std::to_string(matrix.channels) +
                          " not divisible by c " + std::to_string(c));
    }
    if (config.mode == LearningMode::fisher && !matrix.has_gradients()) {
        throw missing_gradient_error("learn_codebook: fisher mode needs gradients in the dump");
    }

    const size_t num_groups = matrix.channels / c;
    const size_t k = config.codebook_entries();
    const size_t tokens = matrix.tokens;

    Codebook book;
    book.config = config;
    book.num_groups = num_groups;
    book.centroids.assign(num_groups * k * c, 0.0f);
    book.fisher_fallback.assign(num_groups, 0);

    std::vector<double> fisher;
    if (config.mode == LearningMode::fisher) fisher = fisher_weights(matrix, config);

    if (report) {
        report->group_objective.assign(num_groups, 0.0);
        report->group_iterations.assign(num_groups, 0);
        report->total_objective = 0.0;
    }

    std::vector<double> group_obj(num_groups, 0.0);

    parallel_groups(num_groups, threads, [&](size_t g) {
        PointSet points;
        points.dim = c;
        points.count = tokens;
        points.coords.resize(tokens * c);
        for (size_t d = 0; d < c; ++d) {
            const float* row = matrix.channel(g * c + d);
            for (size_t tok = 0; tok < tokens; ++tok) points.coords[tok * c + d] = row[tok];
        }
        if (config.mode == LearningMode::fisher) {
            points.weights.assign(fisher.begin() + g * tokens,
                                  fisher.begin() + (g + 1) * tokens);
            bool any = false;
            for (double w : points.weights) any |= (w > 0.0);
            if (!any) {
                points.weights.assign(tokens, 1.0);
                book.fisher_fallback[g] = 1;
            }
        } else {
            points.weights.assign(tokens, 1.0);
        }

        const ClusteringResult res =
            weighted_kmeans(points, k, config.kmeans_iters, derive_seed(config.seed, g));
        float* dst = book.centroids.data() + g * k * c;
        for (size_t i = 0; i < k * c; ++i) dst[i] = static_cast<float>(res.centroids[i]);
        group_obj[g] = res.objective;
        if (report) report->group_iterations[g] = res.iterations_run;
    });

    if (report) {
        report->group_objective = group_obj;
        for (double o : group_obj) report->total_objective += o;
    }
    return book;
}

QuantizedCache quantize(const ActivationMatrix& matrix, const Codebook& codebook) {
    if (matrix.channels != codebook.channels()) {
        throw shape_error("quantize: matrix channels " + std::to_string(matrix.channels) +
                          " != codebook channels " + std::to_string(codebook.channels()));
    }
    const size_t c = codebook.config.channels_per_group;
    const size_t k = codebook.config.codebook_entries();

    QuantizedCache cache;
    cache.channels_per_group = codebook.config.channels_per_group;
    cache.bits_per_code = codebook.config.bits_per_code;
    cache.num_groups = codebook.num_groups;
    cache.tokens = matrix.tokens;
    cache.codebook_hash = codebook.hash();
    cache.payload.assign(cache.num_groups * cache.group_stride_bytes(), 0);

    std::vector<float> column(c);
    for (size_t g = 0; g < cache.num_groups; ++g) {
        for (size_t tok = 0; tok < matrix.tokens; ++tok) {
            for (size_t d = 0; d < c; ++d) column[d] = matrix.at(g * c + d, tok);
            uint32_t best = 0;
            double bestd = column_dist2(column.data(), codebook.centroid(g, 0), c);
            for (size_t code = 1; code < k; ++code) {
                const double d2 = column_dist2(column.data(), codebook.centroid(g, code), c);
                if (d2 < bestd) {
                    bestd = d2;
                    best = static_cast<uint32_t>(code);
                }
            }
            cache.set_code(g, tok, best);
        }
    }
    return cache;
}

ActivationMatrix dequantize(const QuantizedCache& cache, const Codebook& codebook) {
    if (cache.channels_per_group != codebook.config.channels_per_group ||
        cache.bits_per_code != codebook.config.bits_per_code ||
        cache.num_groups != codebook.num_groups) {
        throw codec_error("dequantize: cache/codebook config mismatch");
    }
    if (cache.codebook_hash != codebook.hash()) {
        throw codec_error("dequantize: codebook hash mismatch");
    }
    if (cache.payload.size() != cache.num_groups * cache.group_stride_bytes()) {
        throw codec_error("dequantize: payload length " + std::to_string(cache.payload.size()) +
                          " != expected " +
                          std::to_string(cache.num_groups * cache.group_stride_bytes()));
    }
    const size_t c = codebook.config.channels_per_group;
    ActivationMatrix out(codebook.channels(), cache.tokens);
    for (size_t g = 0; g < cache.num_groups; ++g) {
        for (size_t tok = 0; tok < cache.tokens; ++tok) {
            const float* centroid = codebook.centroid(g, cache.code_at(g, tok));
            for (size_t d = 0; d < c; ++d) out.at(g * c + d, tok) = centroid[d];
        }
    }
    return out;
}

double quantization_error(const ActivationMatrix& original,
                          const ActivationMatrix& reconstructed) {
    if (original.channels != reconstructed.channels || original.tokens != reconstructed.tokens) {
        throw shape_error("quantization_error: shape mismatch");
    }
    double acc = 0.0;
    for (size_t i = 0; i < original.values.size(); ++i) {
        const double d = static_cast<double>(original.values[i]) -
                         static_cast<double>(reconstructed.values[i]);
        acc += d * d;
    }
    return acc;
}

double bits_per_fpn(const CQConfig& config) {
    config.validate();
    return static_cast<double>(config.bits_per_code) /
           static_cast<double>(config.channels_per_group);
}

uint64_t codebook_param_count(const ModelDims& dims, const CQConfig& config) {
    dims.validate();
    config.validate();
    if (dims.head_channels % config.channels_per_group != 0) {
        throw shape_error("codebook_param_count: head_channels " +
                          std::to_string(dims.head_channels) + " not divisible by c " +
                          std::to_string(config.channels_per_group));
    }
    return static_cast<uint64_t>(dims.layers) * 2ull * dims.kv_heads * dims.head_channels *
           (uint64_t{1} << config.bits_per_code);
}

uint64_t codebook_storage_bytes(const ModelDims& dims, const CQConfig& config,
                                size_t bits_per_entry) {
    const uint64_t params = codebook_param_count(dims, config);
    return (params * bits_per_entry + 7) / 8;
}

uint64_t save_codebook(const Codebook& codebook, std::ostream& sink) {
    std::string buf;
    buf.append(kCodebookMagic, 4);
    detail::put_u16(buf, kVersion);
    detail::put_u16(buf, static_cast<uint16_t>(codebook.config.channels_per_group));
    detail::put_u16(buf, static_cast<uint16_t>(codebook.config.bits_per_code));
    buf.push_back(static_cast<char>(codebook.config.mode));
    buf.push_back('\0');  // reserved
    detail::put_u64(buf, codebook.num_groups);
    detail::append_f32_payload(buf, codebook.centroids);
    // Fallback flags, LSB-first bitset.
    const size_t flag_bytes = (codebook.num_groups + 7) / 8;
    std::string flags(flag_bytes, '\0');
    for (size_t g = 0; g < codebook.num_groups; ++g) {
        if (codebook.fisher_fallback[g]) flags[g / 8] |= static_cast<char>(1u << (g % 8));
    }
    buf += flags;

    sink.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!sink) throw io_error("CQCB: write failure near byte offset " + std::to_string(buf.size()));
    return buf.size();
}

Codebook load_codebook(std::istream& source) {
    unsigned char header[20];
    detail::read_exact(source, header, sizeof(header), 0, "CQCB", "header");
    if (std::memcmp(header, kCodebookMagic, 4) != 0) throw parse_error("CQCB: bad magic at offset 0");
    const uint16_t version = detail::get_u16(header + 4);
    if (version != kVersion) {
        throw parse_error("CQCB: unsupported version " + std::to_string(version));
    }
    Codebook book;
    book.config.channels_per_group = detail::get_u16(header + 6);
    book.config.bits_per_code = detail::get_u16(header + 8);
    const uint8_t mode = header[10];
    if (mode > 1) throw parse_error("CQCB: unknown learning mode " + std::to_string(mode));
    book.config.mode = static_cast<LearningMode>(mode);
    book.config.validate();
    book.num_groups = detail::get_u64(header + 12);
    if (book.num_groups == 0) throw parse_error("CQCB: zero groups in header");

    const size_t n_centroids =
        book.num_groups * book.config.codebook_entries() * book.config.channels_per_group;
    book.centroids = detail::read_f32_payload(source, n_centroids, 20, "CQCB", "centroid payload");
    for (float f : book.centroids) {
        if (!std::isfinite(f)) throw parse_error("CQCB: non-finite centroid value");
    }
    const size_t flag_bytes = (book.num_groups + 7) / 8;
    std::vector<unsigned char> flags(flag_bytes);
    detail::read_exact(source, flags.data(), flag_bytes, 20 + n_centroids * 4, "CQCB",
                       "fallback bitset");
    book.fisher_fallback.assign(book.num_groups, 0);
    for (size_t g = 0; g < book.num_groups; ++g) {
        book.fisher_fallback[g] = (flags[g / 8] >> (g % 8)) & 1u;
    }
    return book;
}

uint64_t save_cache(const QuantizedCache& cache, std::ostream& sink) {
    std::string buf;
    buf.append(kCacheMagic, 4);
    detail::put_u16(buf, kVersion);
    detail::put_u16(buf, static_cast<uint16_t>(cache.channels_per_group));
    detail::put_u16(buf, static_cast<uint16_t>(cache.bits_per_code));
    detail::put_u64(buf, cache.num_groups);
    detail::put_u64(buf, cache.tokens);
    detail::put_u64(buf, cache.codebook_hash);
    buf.append(reinterpret_cast<const char*>(cache.payload.data()), cache.payload.size());

    sink.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!sink) throw io_error("CQQC: write failure near byte offset " + std::to_string(buf.size()));
    return buf.size();
}

QuantizedCache load_cache(std::istream& source) {
    unsigned char header[34];
    detail::read_exact(source, header, sizeof(header), 0, "CQQC", "header");
    if (std::memcmp(header, kCacheMagic, 4) != 0) throw parse_error("CQQC: bad magic at offset 0");
    const uint16_t version = detail::get_u16(header + 4);
    if (version != kVersion) {
        throw parse_error("CQQC: unsupported version " + std::to_string(version));
    }
    QuantizedCache cache;
    cache.channels_per_group = detail::get_u16(header + 6);
    cache.bits_per_code = detail::get_u16(header + 8);
    cache.num_groups = detail::get_u64(header + 10);
    cache.tokens = detail::get_u64(header + 18);
    cache.codebook_hash = detail::get_u64(header + 26);
    if (cache.channels_per_group == 0 || cache.bits_per_code == 0 || cache.bits_per_code > 16) {
        throw parse_error("CQQC: bad c/b fields in header");
    }
    if (cache.num_groups == 0) throw parse_error("CQQC: zero groups in header");
    const size_t payload_bytes = cache.num_groups * cache.group_stride_bytes();
    cache.payload.resize(payload_bytes);
    detail::read_exact(source, cache.payload.data(), payload_bytes, 34, "CQQC", "code payload");
    return cache;
}

uint64_t save_codebook_file(const Codebook& codebook, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("cannot open for write: " + path);
    return save_codebook(codebook, out);
}

Codebook load_codebook_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open for read: " + path);
    return load_codebook(in);
}

uint64_t save_cache_file(const QuantizedCache& cache, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("cannot open for write: " + path);
    return save_cache(cache, out);
}

QuantizedCache load_cache_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open for read: " + path);
    return load_cache(in);
}

}  // namespace cq
