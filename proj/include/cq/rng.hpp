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

#include <cmath>
#include <cstdint>

namespace cq {

// All randomness in this project flows through xoshiro256** seeded via
// splitmix64, so streams are identical across platforms and runs.

// splitmix64 finalizer. Also used as the documented mixer for deriving
// per-lane seeds (one lane per channel group, per gradient stream, ...).
inline uint64_t mix64(uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

// Deterministic sub-seed: lane i of a base seed.
inline uint64_t derive_seed(uint64_t seed, uint64_t lane) {
    return mix64(seed ^ mix64(lane + 1));
}

class Xoshiro256ss {
public:
    explicit Xoshiro256ss(uint64_t seed) {
        // splitmix64 state expansion, per the generator's reference seeding.
        uint64_t x = seed;
        for (auto& word : state_) {
            x += 0x9E3779B97F4A7C15ull;
            uint64_t z = x;
            z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
            z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
            word = z ^ (z >> 31);
        }
    }

    uint64_t next() {
        const uint64_t result = rotl(state_[1] * 5, 7) * 9;
        const uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // Uniform double in [0,1), 53-bit resolution.
    double next_double() {
        return static_cast<double>(next() >> 11) * 0x1.0p-53;
    }

private:
    static uint64_t rotl(uint64_t v, int k) {
        return (v << k) | (v >> (64 - k));
    }
    uint64_t state_[4];
};

// Standard normal draws via Box-Muller on the xoshiro stream. Two uniforms
// per pair; the second variate is cached. u1 is mapped to (0,1] so the log
// never sees zero.
class GaussianSampler {
public:
    explicit GaussianSampler(uint64_t seed) : rng_(seed) {}

    double next() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        const double u1 = 1.0 - rng_.next_double();  // (0,1]
        const double u2 = rng_.next_double();        // [0,1)
        const double radius = std::sqrt(-2.0 * std::log(u1));
        const double angle = 2.0 * 3.14159265358979323846 * u2;
        spare_ = radius * std::sin(angle);
        have_spare_ = true;
        return radius * std::cos(angle);
    }

private:
    Xoshiro256ss rng_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

}  // namespace cq
