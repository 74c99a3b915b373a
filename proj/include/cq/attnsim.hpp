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
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "cq/actdata.hpp"
#include "cq/baselines.hpp"
#include "cq/cqcodec.hpp"

namespace cq {

/// Which codec the decode simulator stores its cached keys/values through.
/// Textual ids: "none", "cq:<c>c<b>b[:fisher]", "int:<bits>[:gs<N>][:token]".
struct CodecSpec {
    enum class Kind { none, coupled, uniform_int } kind = Kind::none;
    CQConfig cq;
    UniformQuantConfig intq;

    std::string id() const;
    static CodecSpec parse(std::string_view text);  // throws parse_error
};

/// One simulated attention head decoding over tokens steps. Queries are
/// never quantized; cached keys are stored through the codec pre-RoPE and
/// rotated after dequantization, values are stored through the codec
/// directly.
struct DecodeScenario {
    ActivationMatrix queries;  // head_channels x tokens
    ActivationMatrix keys;     // head_channels x tokens
    ActivationMatrix values;   // head_channels x tokens
    bool rope_enabled = false;
    double rope_base = 10000.0;
    bool scale_scores = false;  // optional 1/sqrt(d); off to follow the
                                // plain K^T q form
    CodecSpec codec;
    uint64_t codec_seed = 0;  // seed for codec calibration

    void validate() const;
};

struct DecodeStep {
    double exact_out_norm = 0.0;
    double rel_l2_err = 0.0;
    double weight_tv_dist = 0.0;  // total variation between the two
                                  // attention weight vectors
};

struct DecodeReport {
    std::string codec_id;
    bool rope_enabled = false;
    bool scale_scores = false;
    size_t head_channels = 0;
    std::vector<DecodeStep> steps;
    std::vector<double> exact_outputs;  // steps * head_channels
    std::vector<double> quant_outputs;  // steps * head_channels
    double max_rel_err = 0.0;
    double mean_rel_err = 0.0;
    double max_weight_tv = 0.0;
    double max_softmax_sum_err = 0.0;  // |sum(weights) - 1| over exact steps
};

// Rotate channel pairs (2i, 2i+1) by angle theta_i * position with
// theta_i = base^(-2i / head_channels). Norm-preserving; position 0 is the
// identity. Throws invalid_spec on odd length.
void rope_rotate(std::span<double> embedding, size_t position, double base);

// One decode step: scores = K^T q (optionally scaled by 1/sqrt(dim)),
// weights = softmax with max subtraction, output = V * weights. All in f64.
// keys/values are dim x t column-major (column = token), matching the
// caller's cache layout.
std::vector<double> attention_step(std::span<const double> query,
                                   const std::vector<std::vector<double>>& key_columns,
                                   const std::vector<std::vector<double>>& value_columns,
                                   bool scale_scores = false);

// Runs the exact f32 path and the quantized-cache path over steps
// t = 1..tokens and reports per-step divergence. Codec calibration happens
// once, on the scenario's full key/value matrices.
DecodeReport run_decode(const DecodeScenario& scenario);

// CSV: step,exact_out_norm,rel_l2_err,weight_tv_dist
void write_decode_csv(std::ostream& out, const DecodeReport& report);
// Stable-key-order JSON summary (config echo plus max/mean fields).
std::string decode_summary_json(const DecodeReport& report);

}  // namespace cq
