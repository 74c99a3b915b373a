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

#include "cq/clustering.hpp"

#include <cmath>
#include <cstring>
#include <deque>
#include <string>
#include <unordered_set>

#include "cq/errors.hpp"
#include "cq/rng.hpp"

namespace cq {

namespace {

double dist2(const float* p, const double* c, size_t dim) {
    double acc = 0.0;
    for (size_t d = 0; d < dim; ++d) {
        const double diff = static_cast<double>(p[d]) - c[d];
        acc += diff * diff;
    }
    return acc;
}

// Bit-pattern key for exact-equality distinctness; -0.0 folded into +0.0.
std::string point_key(const float* p, size_t dim) {
    std::string key(dim * 4, '\0');
    for (size_t d = 0; d < dim; ++d) {
        float v = p[d];
        if (v == 0.0f) v = 0.0f;  // canonicalize -0.0
        uint32_t bits;
        std::memcpy(&bits, &v, 4);
        std::memcpy(key.data() + d * 4, &bits, 4);
    }
    return key;
}

// Indices (first-seen order) of the distinct positive-weight points.
std::vector<size_t> distinct_positive_points(const PointSet& points) {
    std::unordered_set<std::string> seen;
    std::vector<size_t> firsts;
    for (size_t j = 0; j < points.count; ++j) {
        if (!(points.weights[j] > 0.0)) continue;
        if (seen.insert(point_key(points.point(j), points.dim)).second) {
            firsts.push_back(j);
        }
    }
    return firsts;
}

// Inverse-CDF draw over per-point masses: first index whose prefix sum
// strictly exceeds u * total. Zero-mass points are unreachable.
size_t sample_index(const std::vector<double>& masses, double u) {
    double total = 0.0;
    for (double m : masses) total += m;
    const double target = u * total;
    double prefix = 0.0;
    for (size_t i = 0; i < masses.size(); ++i) {
        prefix += masses[i];
        if (prefix > target) return i;
    }
    // Rounding pushed the target past every bucket; take the last positive one.
    for (size_t i = masses.size(); i-- > 0;) {
        if (masses[i] > 0.0) return i;
    }
    return 0;
}

std::vector<double> pp_init_impl(const PointSet& points, size_t k, uint64_t seed) {
    const size_t dim = points.dim;
    Xoshiro256ss rng(seed);
    std::vector<double> centroids(k * dim);

    std::vector<double> masses(points.weights);
    size_t first = sample_index(masses, rng.next_double());
    for (size_t d = 0; d < dim; ++d) centroids[d] = points.point(first)[d];

    std::vector<double> near2(points.count);
    for (size_t j = 0; j < points.count; ++j) {
        near2[j] = dist2(points.point(j), centroids.data(), dim);
    }
    for (size_t c = 1; c < k; ++c) {
        for (size_t j = 0; j < points.count; ++j) masses[j] = points.weights[j] * near2[j];
        const size_t pick = sample_index(masses, rng.next_double());
        double* dst = centroids.data() + c * dim;
        for (size_t d = 0; d < dim; ++d) dst[d] = points.point(pick)[d];
        for (size_t j = 0; j < points.count; ++j) {
            const double d2 = dist2(points.point(j), dst, dim);
            if (d2 < near2[j]) near2[j] = d2;
        }
    }
    return centroids;
}

}  // namespace

void PointSet::validate() const {
    if (dim == 0 || count == 0) throw invalid_spec("point set: empty");
    if (coords.size() != count * dim) throw invalid_spec("point set: coords size mismatch");
    if (weights.size() != count) throw invalid_spec("point set: weights size mismatch");
    bool any_positive = false;
    for (double w : weights) {
        if (!std::isfinite(w) || w < 0.0) throw invalid_spec("point set: bad weight");
        any_positive |= (w > 0.0);
    }
    for (float v : coords) {
        if (!std::isfinite(v)) throw invalid_spec("point set: non-finite coordinate");
    }
    if (!any_positive) throw invalid_spec("point set: all weights zero");
}

std::vector<double> kmeans_pp_init(const PointSet& points, size_t k, uint64_t seed) {
    points.validate();
    if (k < 1) throw invalid_spec("kmeans_pp_init: k must be >= 1");
    const size_t distinct = distinct_positive_points(points).size();
    if (k > distinct) {
        throw degenerate_input("kmeans_pp_init: k " + std::to_string(k) + " exceeds " +
                               std::to_string(distinct) + " distinct positive-weight points");
    }
    return pp_init_impl(points, k, seed);
}

ClusteringResult weighted_kmeans(const PointSet& points, size_t k, size_t max_iters,
                                 uint64_t seed) {
    points.validate();
    if (k < 1) throw invalid_spec("weighted_kmeans: k must be >= 1");
    if (max_iters < 1) throw invalid_spec("weighted_kmeans: max_iters must be >= 1");

    const size_t dim = points.dim;
    const size_t count = points.count;

    ClusteringResult result;
    result.k = k;
    result.dim = dim;
    result.assignments.assign(count, 0);

    const std::vector<size_t> firsts = distinct_positive_points(points);
    if (k > firsts.size()) {
        // Distinct-point shortfall: every distinct point becomes a centroid,
        // trailing slots duplicate the last one.
        result.centroids.assign(k * dim, 0.0);
        for (size_t c = 0; c < k; ++c) {
            const size_t src = firsts[std::min(c, firsts.size() - 1)];
            for (size_t d = 0; d < dim; ++d) {
                result.centroids[c * dim + d] = points.point(src)[d];
            }
        }
        double obj = 0.0;
        for (size_t j = 0; j < count; ++j) {
            uint32_t best = 0;
            double bestd = dist2(points.point(j), result.centroids.data(), dim);
            for (size_t c = 1; c < k; ++c) {
                const double d2 = dist2(points.point(j), result.centroid(c), dim);
                if (d2 < bestd) {
                    bestd = d2;
                    best = static_cast<uint32_t>(c);
                }
            }
            result.assignments[j] = best;
            obj += points.weights[j] * bestd;
        }
        result.objective = obj;
        result.iterations_run = 0;
        result.objective_trace.push_back(obj);
        return result;
    }

    result.centroids = pp_init_impl(points, k, seed);

    std::vector<uint32_t> prev(count, UINT32_MAX);
    std::vector<double> sums(k * dim);
    std::vector<double> wsum(k);

    // Weighted-mean update over the current assignments. Empty clusters
    // grab the positive-weight point farthest (weighted) from its own
    // centroid; each point may be claimed once per pass.
    const auto update_centroids = [&]() {
        std::fill(sums.begin(), sums.end(), 0.0);
        std::fill(wsum.begin(), wsum.end(), 0.0);
        for (size_t j = 0; j < count; ++j) {
            const double w = points.weights[j];
            const float* p = points.point(j);
            double* s = sums.data() + result.assignments[j] * dim;
            for (size_t d = 0; d < dim; ++d) s[d] += w * static_cast<double>(p[d]);
            wsum[result.assignments[j]] += w;
        }
        std::deque<size_t> empties;
        for (size_t c = 0; c < k; ++c) {
            if (wsum[c] > 0.0) {
                for (size_t d = 0; d < dim; ++d) {
                    result.centroids[c * dim + d] = sums[c * dim + d] / wsum[c];
                }
            } else {
                empties.push_back(c);
            }
        }
        std::vector<uint8_t> claimed(count, 0);
        while (!empties.empty()) {
            const size_t c = empties.front();
            empties.pop_front();
            size_t best_j = count;
            double best_val = -1.0;
            for (size_t j = 0; j < count; ++j) {
                if (claimed[j] || !(points.weights[j] > 0.0)) continue;
                const double val =
                    points.weights[j] *
                    dist2(points.point(j), result.centroid(result.assignments[j]), dim);
                if (val > best_val) {
                    best_val = val;
                    best_j = j;
                }
            }
            if (best_j == count) continue;  // nothing left to claim
            claimed[best_j] = 1;
            const size_t old = result.assignments[best_j];
            const double w = points.weights[best_j];
            const float* p = points.point(best_j);
            for (size_t d = 0; d < dim; ++d) {
                sums[old * dim + d] -= w * static_cast<double>(p[d]);
                sums[c * dim + d] = w * static_cast<double>(p[d]);
                result.centroids[c * dim + d] = static_cast<double>(p[d]);
            }
            wsum[old] -= w;
            wsum[c] = w;
            result.assignments[best_j] = static_cast<uint32_t>(c);
            if (wsum[old] > 0.0) {
                for (size_t d = 0; d < dim; ++d) {
                    result.centroids[old * dim + d] = sums[old * dim + d] / wsum[old];
                }
            } else {
                empties.push_back(old);
            }
        }
    };

    bool converged = false;
    for (size_t iter = 1; iter <= max_iters; ++iter) {
        // Assignment pass; the recorded objective uses exactly these
        // distances so the trace comparison is arithmetic-order stable.
        double obj = 0.0;
        for (size_t j = 0; j < count; ++j) {
            const float* p = points.point(j);
            uint32_t best = 0;
            double bestd = dist2(p, result.centroids.data(), dim);
            for (size_t c = 1; c < k; ++c) {
                const double d2 = dist2(p, result.centroid(c), dim);
                if (d2 < bestd) {
                    bestd = d2;
                    best = static_cast<uint32_t>(c);
                }
            }
            result.assignments[j] = best;
            obj += points.weights[j] * bestd;
        }
        result.objective_trace.push_back(obj);
        result.objective = obj;
        result.iterations_run = iter;

        if (result.assignments == prev) {
            converged = true;
            break;
        }
        prev = result.assignments;
        if (iter < max_iters) update_centroids();
    }

    if (!converged) {
        // Budget exhausted mid-stream: bring centroids back in line with the
        // final assignments and restate the objective against them, so the
        // result satisfies the weighted-mean and objective invariants.
        update_centroids();
        double obj = 0.0;
        for (size_t j = 0; j < count; ++j) {
            obj += points.weights[j] *
                   dist2(points.point(j), result.centroid(result.assignments[j]), dim);
        }
        result.objective = obj;
    }
    return result;
}

}  // namespace cq
