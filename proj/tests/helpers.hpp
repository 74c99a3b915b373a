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

// Shared test oracles and plumbing. The oracles here are deliberately
// independent re-derivations (exhaustive search, textbook Jacobi sweeps)
// rather than calls back into the library under test.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace testutil {

inline std::string read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

inline void write_file_bytes(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

// Fresh scratch directory per call; never cleaned up (the suite runs in a
// throwaway environment and keeping artifacts aids post-mortems).
inline std::string make_temp_dir() {
    std::string tmpl = "/tmp/cqkv_test_XXXXXX";
    char* dir = mkdtemp(tmpl.data());
    if (dir == nullptr) throw std::runtime_error("mkdtemp failed");
    return dir;
}

// Exhaustive weighted k-means oracle: tries every assignment of n points to
// k clusters (k^n of them) and returns the minimal total weighted squared
// distance to per-cluster weighted means. Usable up to roughly k^n ~ 10^7.
inline double brute_force_kmeans_objective(const std::vector<double>& points,
                                           const std::vector<double>& weights, size_t dim,
                                           size_t k) {
    const size_t n = points.size() / dim;
    std::vector<size_t> assign(n, 0);
    std::vector<double> mean(k * dim);
    std::vector<double> wsum(k);
    double best = std::numeric_limits<double>::infinity();
    uint64_t total = 1;
    for (size_t i = 0; i < n; ++i) {
        total *= k;
        if (total > 20'000'000ull) throw std::runtime_error("oracle instance too large");
    }
    for (uint64_t code = 0; code < total; ++code) {
        uint64_t rest = code;
        for (size_t i = 0; i < n; ++i) {
            assign[i] = rest % k;
            rest /= k;
        }
        std::fill(mean.begin(), mean.end(), 0.0);
        std::fill(wsum.begin(), wsum.end(), 0.0);
        for (size_t i = 0; i < n; ++i) {
            wsum[assign[i]] += weights[i];
            for (size_t d = 0; d < dim; ++d) mean[assign[i] * dim + d] += weights[i] * points[i * dim + d];
        }
        for (size_t c = 0; c < k; ++c) {
            if (wsum[c] > 0.0) {
                for (size_t d = 0; d < dim; ++d) mean[c * dim + d] /= wsum[c];
            }
        }
        double obj = 0.0;
        for (size_t i = 0; i < n; ++i) {
            for (size_t d = 0; d < dim; ++d) {
                const double diff = points[i * dim + d] - mean[assign[i] * dim + d];
                obj += weights[i] * diff * diff;
            }
            if (obj >= best) break;
        }
        best = std::min(best, obj);
    }
    return best;
}

// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, descending.
// Classic textbook form; plenty for the small covariance matrices the tests
// feed it.
inline std::vector<double> symmetric_eigenvalues(std::vector<double> a, size_t n) {
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (size_t p = 0; p < n; ++p) {
            for (size_t q = p + 1; q < n; ++q) off += a[p * n + q] * a[p * n + q];
        }
        if (off < 1e-24) break;
        for (size_t p = 0; p < n; ++p) {
            for (size_t q = p + 1; q < n; ++q) {
                const double apq = a[p * n + q];
                if (std::abs(apq) < 1e-300) continue;
                const double theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                const double t = (theta >= 0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (size_t i = 0; i < n; ++i) {
                    const double aip = a[i * n + p];
                    const double aiq = a[i * n + q];
                    a[i * n + p] = c * aip - s * aiq;
                    a[i * n + q] = s * aip + c * aiq;
                }
                for (size_t i = 0; i < n; ++i) {
                    const double api = a[p * n + i];
                    const double aqi = a[q * n + i];
                    a[p * n + i] = c * api - s * aqi;
                    a[q * n + i] = s * api + c * aqi;
                }
            }
        }
    }
    std::vector<double> eig(n);
    for (size_t i = 0; i < n; ++i) eig[i] = a[i * n + i];
    std::sort(eig.rbegin(), eig.rend());
    return eig;
}

}  // namespace testutil
