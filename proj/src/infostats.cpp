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

#include "cq/infostats.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <map>
#include <ostream>
#include <unordered_map>

#include "cq/errors.hpp"

namespace cq {

namespace {

// -sum p*log2(p) over occupied cells, cells visited in ascending key order
// so the result is independent of token ordering.
double entropy_from_counts(std::vector<std::pair<uint64_t, uint64_t>>& cells, uint64_t total) {
    std::sort(cells.begin(), cells.end());
    const double n = static_cast<double>(total);
    double h = 0.0;
    for (const auto& [key, count] : cells) {
        const double p = static_cast<double>(count) / n;
        h -= p * std::log2(p);
    }
    return h;
}

double entropy_of_group(const DiscretizedMatrix& m, std::span<const size_t> group) {
    const size_t bits_per_index =
        static_cast<size_t>(std::bit_width(static_cast<uint64_t>(m.num_bins - 1)));
    if (group.size() * bits_per_index <= 64) {
        std::unordered_map<uint64_t, uint64_t> hist;
        hist.reserve(m.tokens);
        for (size_t tok = 0; tok < m.tokens; ++tok) {
            uint64_t key = 0;
            for (size_t i = 0; i < group.size(); ++i) {
                key |= static_cast<uint64_t>(m.channel(group[i])[tok]) << (i * bits_per_index);
            }
            ++hist[key];
        }
        std::vector<std::pair<uint64_t, uint64_t>> cells(hist.begin(), hist.end());
        return entropy_from_counts(cells, m.tokens);
    }
    // Wide-bin fallback: ordered map keyed by the index tuple itself.
    std::map<std::vector<uint16_t>, uint64_t> hist;
    std::vector<uint16_t> key(group.size());
    for (size_t tok = 0; tok < m.tokens; ++tok) {
        for (size_t i = 0; i < group.size(); ++i) key[i] = m.channel(group[i])[tok];
        ++hist[key];
    }
    const double n = static_cast<double>(m.tokens);
    double h = 0.0;
    for (const auto& [tuple, count] : hist) {
        const double p = static_cast<double>(count) / n;
        h -= p * std::log2(p);
    }
    return h;
}

double stddev_of(const std::vector<double>& xs, double mean) {
    if (xs.empty()) return 0.0;
    double acc = 0.0;
    for (double x : xs) acc += (x - mean) * (x - mean);
    return std::sqrt(acc / static_cast<double>(xs.size()));
}

double mean_of(const std::vector<double>& xs) {
    if (xs.empty()) return 0.0;
    double acc = 0.0;
    for (double x : xs) acc += x;
    return acc / static_cast<double>(xs.size());
}

}  // namespace

BinningSpec fit_bins(const ActivationMatrix& matrix, size_t num_bins) {
    if (matrix.channels == 0 || matrix.tokens == 0) {
        throw invalid_spec("fit_bins: empty matrix");
    }
    if (num_bins < 2) throw invalid_spec("fit_bins: num_bins must be >= 2");
    BinningSpec spec;
    spec.num_bins = num_bins;
    spec.mins.resize(matrix.channels);
    spec.maxs.resize(matrix.channels);
    for (size_t ch = 0; ch < matrix.channels; ++ch) {
        const float* row = matrix.channel(ch);
        float lo = row[0];
        float hi = row[0];
        for (size_t tok = 1; tok < matrix.tokens; ++tok) {
            lo = std::min(lo, row[tok]);
            hi = std::max(hi, row[tok]);
        }
        spec.mins[ch] = lo;
        spec.maxs[ch] = hi;
    }
    return spec;
}

DiscretizedMatrix discretize(const ActivationMatrix& matrix, const BinningSpec& bins) {
    if (bins.channels() != matrix.channels) {
        throw shape_error("discretize: binning spec covers " + std::to_string(bins.channels()) +
                          " channels, matrix has " + std::to_string(matrix.channels));
    }
    DiscretizedMatrix out;
    out.channels = matrix.channels;
    out.tokens = matrix.tokens;
    out.num_bins = bins.num_bins;
    out.indices.resize(matrix.channels * matrix.tokens);
    const double nb = static_cast<double>(bins.num_bins);
    const auto top = static_cast<uint16_t>(bins.num_bins - 1);
    for (size_t ch = 0; ch < matrix.channels; ++ch) {
        uint16_t* dst = out.indices.data() + ch * matrix.tokens;
        if (bins.is_degenerate(ch)) {
            std::fill(dst, dst + matrix.tokens, uint16_t{0});
            continue;
        }
        const double lo = bins.mins[ch];
        const double width = static_cast<double>(bins.maxs[ch]) - lo;
        const float* row = matrix.channel(ch);
        for (size_t tok = 0; tok < matrix.tokens; ++tok) {
            const double raw = std::floor((static_cast<double>(row[tok]) - lo) * nb / width);
            const double clamped = std::clamp(raw, 0.0, static_cast<double>(top));
            dst[tok] = static_cast<uint16_t>(clamped);
        }
    }
    return out;
}

double joint_entropy(const DiscretizedMatrix& indices, std::span<const size_t> channel_group) {
    if (channel_group.empty()) throw domain_error("joint_entropy: empty channel group");
    if (channel_group.size() > kMaxJointGroup) {
        throw domain_error("joint_entropy: group size " + std::to_string(channel_group.size()) +
                           " exceeds limit " + std::to_string(kMaxJointGroup));
    }
    for (size_t ch : channel_group) {
        if (ch >= indices.channels) {
            throw shape_error("joint_entropy: channel " + std::to_string(ch) + " out of range");
        }
    }
    return entropy_of_group(indices, channel_group);
}

double marginal_entropy(const DiscretizedMatrix& indices, size_t channel) {
    const size_t group[1] = {channel};
    return joint_entropy(indices, group);
}

std::vector<EntropyReport> entropy_sweep(const ActivationMatrix& matrix,
                                         std::span<const size_t> group_sizes,
                                         size_t num_bins) {
    const BinningSpec bins = fit_bins(matrix, num_bins);
    const DiscretizedMatrix disc = discretize(matrix, bins);

    std::vector<double> marginal(matrix.channels);
    for (size_t ch = 0; ch < matrix.channels; ++ch) {
        marginal[ch] = marginal_entropy(disc, ch);
    }

    std::vector<EntropyReport> reports;
    reports.reserve(group_sizes.size());
    for (size_t g : group_sizes) {
        EntropyReport rep;
        rep.group_size = g;
        if (g == 0 || g > kMaxJointGroup) {
            throw domain_error("entropy_sweep: unsupported group size " + std::to_string(g));
        }
        rep.num_groups = matrix.channels / g;
        rep.dropped_channels = matrix.channels - rep.num_groups * g;
        for (size_t i = 0; i < rep.num_groups; ++i) {
            std::vector<size_t> group(g);
            for (size_t d = 0; d < g; ++d) group[d] = i * g + d;
            if (g == 1) {
                rep.joint_bits.push_back(marginal[group[0]]);
            } else {
                rep.joint_bits.push_back(entropy_of_group(disc, group));
            }
            double sum = 0.0;
            for (size_t ch : group) sum += marginal[ch];
            rep.sum_marginal_bits.push_back(sum);
        }
        rep.joint_mean = mean_of(rep.joint_bits);
        rep.joint_stddev = stddev_of(rep.joint_bits, rep.joint_mean);
        rep.sum_marginal_mean = mean_of(rep.sum_marginal_bits);
        rep.sum_marginal_stddev = stddev_of(rep.sum_marginal_bits, rep.sum_marginal_mean);
        reports.push_back(std::move(rep));
    }
    return reports;
}

CorrelationMatrix correlation_matrix(const ActivationMatrix& matrix, size_t channel_limit) {
    if (channel_limit > matrix.channels) {
        throw shape_error("correlation_matrix: channel_limit " + std::to_string(channel_limit) +
                          " exceeds channels " + std::to_string(matrix.channels));
    }
    if (matrix.tokens < 2) throw domain_error("correlation_matrix: need at least 2 tokens");

    const size_t n = channel_limit;
    const size_t t = matrix.tokens;
    CorrelationMatrix corr;
    corr.n = n;
    corr.coeff.assign(n * n, 0.0);
    corr.degenerate.assign(n, 0);

    std::vector<double> mean(n), var(n);
    for (size_t i = 0; i < n; ++i) {
        const float* row = matrix.channel(i);
        double acc = 0.0;
        for (size_t tok = 0; tok < t; ++tok) acc += row[tok];
        mean[i] = acc / static_cast<double>(t);
        double v = 0.0;
        for (size_t tok = 0; tok < t; ++tok) {
            const double d = row[tok] - mean[i];
            v += d * d;
        }
        var[i] = v;
        corr.degenerate[i] = (v == 0.0) ? 1 : 0;
    }
    for (size_t i = 0; i < n; ++i) {
        corr.coeff[i * n + i] = 1.0;
        for (size_t j = i + 1; j < n; ++j) {
            double r = 0.0;
            if (!corr.degenerate[i] && !corr.degenerate[j]) {
                const float* a = matrix.channel(i);
                const float* b = matrix.channel(j);
                double cov = 0.0;
                for (size_t tok = 0; tok < t; ++tok) {
                    cov += (a[tok] - mean[i]) * (b[tok] - mean[j]);
                }
                r = std::clamp(cov / std::sqrt(var[i] * var[j]), -1.0, 1.0);
            }
            corr.coeff[i * n + j] = r;
            corr.coeff[j * n + i] = r;
        }
    }
    return corr;
}

void write_entropy_csv(std::ostream& out, std::span<const EntropyReport> reports) {
    out << "group_size,group_index,joint_bits,sum_marginal_bits\n";
    char buf[64];
    for (const EntropyReport& rep : reports) {
        for (size_t i = 0; i < rep.num_groups; ++i) {
            out << rep.group_size << ',' << i << ',';
            std::snprintf(buf, sizeof(buf), "%.10g", rep.joint_bits[i]);
            out << buf << ',';
            std::snprintf(buf, sizeof(buf), "%.10g", rep.sum_marginal_bits[i]);
            out << buf << '\n';
        }
    }
}

void write_correlation_csv(std::ostream& out, const CorrelationMatrix& corr) {
    char buf[64];
    for (size_t i = 0; i < corr.n; ++i) {
        for (size_t j = 0; j < corr.n; ++j) {
            std::snprintf(buf, sizeof(buf), "%.10g", corr.at(i, j));
            out << buf << (j + 1 == corr.n ? '\n' : ',');
        }
    }
}

}  // namespace cq
