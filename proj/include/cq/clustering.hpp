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
#include <vector>

namespace cq {

/// A weighted point set: count points of dimension dim, point-major f32
/// coordinates, nonnegative f64 weights (at least one strictly positive).
struct PointSet {
    size_t dim = 0;
    size_t count = 0;
    std::vector<float> coords;    // count * dim
    std::vector<double> weights;  // count

    const float* point(size_t i) const { return coords.data() + i * dim; }

    void validate() const;
};

struct ClusteringResult {
    size_t k = 0;
    size_t dim = 0;
    std::vector<double> centroids;        // k * dim
    std::vector<uint32_t> assignments;    // count, values in [0,k)
    double objective = 0.0;               // weighted sum of squared distances
    size_t iterations_run = 0;
    std::vector<double> objective_trace;  // objective after each assignment pass

    const double* centroid(size_t c) const { return centroids.data() + c * dim; }
};

// k-means++ seeding. First centroid sampled proportionally to weight, each
// later one proportionally to weight * squared distance to the nearest
// already-chosen centroid. Inverse-CDF sampling over prefix sums with the
// "first bucket strictly past the target" rule, so boundary ties resolve to
// the lowest index. Throws degenerate_input if k exceeds the number of
// distinct positive-weight points.
std::vector<double> kmeans_pp_init(const PointSet& points, size_t k, uint64_t seed);

// Lloyd iterations with weighted centroid updates. Stops when assignments
// are unchanged or after max_iters. Nearest-centroid ties break toward the
// lowest centroid index. An empty cluster is reseeded to the positive-weight
// point currently farthest (weighted squared distance) from its own
// centroid; that point is reassigned on the spot so a later empty cluster
// picks a different one.
//
// If k exceeds the number of distinct positive-weight points, returns a
// zero-objective result whose centroids are the distinct points (first-seen
// order) with trailing slots duplicating the last; no error is raised.
//
// All distances, sums and objectives accumulate in doubles, points in
// ascending index order, so the recorded objective trace is exactly
// non-increasing.
ClusteringResult weighted_kmeans(const PointSet& points, size_t k,
                                 size_t max_iters, uint64_t seed);

}  // namespace cq
