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
#include <span>
#include <vector>

#include "cq/actdata.hpp"

namespace cq {

// Largest channel group a joint histogram will be built for. Beyond this
// the empirical table is data-starved.
inline constexpr size_t kMaxJointGroup = 8;

/// Equal-width binning fitted per channel on [min, max] of the calibration
/// values. A channel whose min equals its max is degenerate: all its mass
/// lands in bin 0 and its marginal entropy is 0.
struct BinningSpec {
    size_t num_bins = 16;
    std::vector<float> mins;  // per channel
    std::vector<float> maxs;  // per channel

    size_t channels() const { return mins.size(); }
    bool is_degenerate(size_t ch) const { return !(maxs[ch] > mins[ch]); }
};

/// Bin indices for a whole matrix, channel-major like the source values.
struct DiscretizedMatrix {
    size_t channels = 0;
    size_t tokens = 0;
    size_t num_bins = 0;
    std::vector<uint16_t> indices;  // channels * tokens

    const uint16_t* channel(size_t ch) const { return indices.data() + ch * tokens; }
};

/// Entropy estimates for one group size of a sweep.
struct EntropyReport {
    size_t group_size = 0;
    size_t num_groups = 0;
    size_t dropped_channels = 0;           // trailing channels not covered
    std::vector<double> joint_bits;        // per group
    std::vector<double> sum_marginal_bits; // per group
    double joint_mean = 0.0;
    double joint_stddev = 0.0;
    double sum_marginal_mean = 0.0;
    double sum_marginal_stddev = 0.0;
};

struct CorrelationMatrix {
    size_t n = 0;
    std::vector<double> coeff;       // n * n, symmetric, unit diagonal
    std::vector<uint8_t> degenerate; // per channel: 1 when zero-variance

    double at(size_t i, size_t j) const { return coeff[i * n + j]; }
};

BinningSpec fit_bins(const ActivationMatrix& matrix, size_t num_bins);

// index = clamp(floor((x - min) * num_bins / (max - min)), 0, num_bins - 1);
// out-of-range values clamp to the boundary bins.
DiscretizedMatrix discretize(const ActivationMatrix& matrix, const BinningSpec& bins);

// Plug-in estimate -sum p*log2(p) over the occupied cells of the group's
// empirical joint histogram. Throws domain_error when the group is empty or
// larger than kMaxJointGroup.
double joint_entropy(const DiscretizedMatrix& indices, std::span<const size_t> channel_group);

// Marginal entropy of a single channel (dense histogram path).
double marginal_entropy(const DiscretizedMatrix& indices, size_t channel);

// For each group size: non-overlapping groups of contiguous channels,
// trailing remainder channels dropped and recorded. Reports per-group joint
// entropy and sum of marginals, with mean/stddev across groups.
std::vector<EntropyReport> entropy_sweep(const ActivationMatrix& matrix,
                                         std::span<const size_t> group_sizes,
                                         size_t num_bins);

// Pearson coefficients over the first channel_limit channels. Zero-variance
// channels get zero off-diagonals and a degeneracy flag; the diagonal is
// exactly 1.
CorrelationMatrix correlation_matrix(const ActivationMatrix& matrix, size_t channel_limit);

// CSV, one row per group: group_size,group_index,joint_bits,sum_marginal_bits
void write_entropy_csv(std::ostream& out, std::span<const EntropyReport> reports);
// CSV matrix of coefficients, one row per channel.
void write_correlation_csv(std::ostream& out, const CorrelationMatrix& corr);

}  // namespace cq
