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

#include <stdexcept>
#include <string>

namespace cq {

// Error taxonomy. Each class maps to a distinct CLI exit code (see tools/).

// Invalid generation/config parameters (e.g. latent_rank > channels).
struct invalid_spec : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Read/write failure on a byte sink or source.
struct io_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed file contents: bad magic, unsupported version, truncation,
// non-finite payload values. Message names the failing field or offset.
struct parse_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Dimension disagreement between two objects that must match.
struct shape_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Fisher-mode operation on a matrix without gradients.
struct missing_gradient_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Codebook/cache mismatch: config hash, payload length, version.
struct codec_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Argument outside the operation's domain (group too large, token count
// beyond max_context, ...).
struct domain_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Clustering input cannot support the requested k (fewer distinct
// positive-weight points than centroids requested).
struct degenerate_input : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace cq
