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

// Internal little-endian encode/decode helpers shared by the file formats.

#pragma once

#include <bit>
#include <cstdint>
#include <istream>
#include <string>
#include <vector>

#include "cq/errors.hpp"

namespace cq::detail {

inline void put_u16(std::string& buf, uint16_t v) {
    buf.push_back(static_cast<char>(v & 0xFF));
    buf.push_back(static_cast<char>((v >> 8) & 0xFF));
}

inline void put_u64(std::string& buf, uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void append_f32_payload(std::string& buf, const std::vector<float>& data) {
    for (float f : data) {
        const uint32_t bits = std::bit_cast<uint32_t>(f);
        for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
    }
}

inline uint16_t get_u16(const unsigned char* p) {
    return static_cast<uint16_t>(p[0] | (p[1] << 8));
}

inline uint64_t get_u64(const unsigned char* p) {
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(p[i]) << (8 * i);
    return v;
}

// Reads exactly n bytes or throws parse_error naming the failing offset.
inline void read_exact(std::istream& in, unsigned char* dst, size_t n, uint64_t offset,
                       const char* format, const char* what) {
    in.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (static_cast<size_t>(in.gcount()) != n) {
        throw parse_error(std::string(format) + ": truncated at offset " +
                          std::to_string(offset + static_cast<uint64_t>(in.gcount())) +
                          " while reading " + what);
    }
}

inline std::vector<float> read_f32_payload(std::istream& in, size_t count, uint64_t offset,
                                           const char* format, const char* what) {
    std::vector<float> out(count);
    std::vector<unsigned char> raw(count * 4);
    read_exact(in, raw.data(), raw.size(), offset, format, what);
    for (size_t i = 0; i < count; ++i) {
        uint32_t bits = 0;
        for (int b = 0; b < 4; ++b) bits |= static_cast<uint32_t>(raw[i * 4 + b]) << (8 * b);
        out[i] = std::bit_cast<float>(bits);
    }
    return out;
}

}  // namespace cq::detail
