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

#include "cq/attnsim.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <ostream>

#include "cq/errors.hpp"
#include "cq/rng.hpp"
#include "json.hpp"

namespace cq {

namespace {

std::vector<std::string_view> split_colon(std::string_view text) {
    std::vector<std::string_view> parts;
    while (true) {
        const size_t pos = text.find(':');
        if (pos == std::string_view::npos) {
            parts.push_back(text);
            return parts;
        }
        parts.push_back(text.substr(0, pos));
        text.remove_prefix(pos + 1);
    }
}

uint64_t parse_uint(std::string_view text, const char* what) {
    uint64_t value = 0;
    auto res = std::from_chars(text.data(), text.data() + text.size(), value);
    if (res.ec != std::errc{} || res.ptr != text.data() + text.size() || text.empty()) {
        throw parse_error(std::string("codec id: bad ") + what + " '" + std::string(text) + "'");
    }
    return value;
}

}  // namespace

std::string CodecSpec::id() const {
    switch (kind) {
        case Kind::none:
            return "none";
        case Kind::coupled: {
            std::string s = "cq:" + std::to_string(cq.channels_per_group) + "c" +
                            std::to_string(cq.bits_per_code) + "b";
            if (cq.mode == LearningMode::fisher) s += ":fisher";
            return s;
        }
        case Kind::uniform_int: {
            std::string s = "int:" + std::to_string(intq.bits);
            if (intq.group_size) s += ":gs" + std::to_string(*intq.group_size);
            if (intq.axis == QuantAxis::per_token) s += ":token";
            return s;
        }
    }
    throw invalid_spec("codec id: unknown kind");
}

CodecSpec CodecSpec::parse(std::string_view text) {
    CodecSpec spec;
    if (text == "none") {
        spec.kind = Kind::none;
        return spec;
    }
    const auto parts = split_colon(text);
    if (parts[0] == "cq") {
        if (parts.size() < 2 || parts.size() > 3) {
            throw parse_error("codec id: expected cq:<c>c<b>b[:fisher], got '" +
                              std::string(text) + "'");
        }
        spec.kind = Kind::coupled;
        spec.cq = CQConfig::parse_notation(parts[1]);
        if (parts.size() == 3) {
            if (parts[2] != "fisher") {
                throw parse_error("codec id: unknown cq option '" + std::string(parts[2]) + "'");
            }
            spec.cq.mode = LearningMode::fisher;
        }
        return spec;
    }
    if (parts[0] == "int") {
        if (parts.size() < 2) {
            throw parse_error("codec id: expected int:<bits>[:gs<N>][:token], got '" +
                              std::string(text) + "'");
        }
        spec.kind = Kind::uniform_int;
        spec.intq.bits = static_cast<uint32_t>(parse_uint(parts[1], "bit width"));
        for (size_t i = 2; i < parts.size(); ++i) {
            if (parts[i] == "token") {
                spec.intq.axis = QuantAxis::per_token;
            } else if (parts[i].substr(0, 2) == "gs") {
                spec.intq.group_size = parse_uint(parts[i].substr(2), "group size");
            } else {
                throw parse_error("codec id: unknown int option '" + std::string(parts[i]) + "'");
            }
        }
        spec.intq.validate();
        return spec;
    }
    throw parse_error("codec id: unknown codec '" + std::string(text) + "'");
}

void DecodeScenario::validate() const {
    queries.validate();
    keys.validate();
    values.validate();
    if (queries.channels != keys.channels || queries.channels != values.channels ||
        queries.tokens != keys.tokens || queries.tokens != values.tokens) {
        throw shape_error("decode scenario: queries/keys/values shapes differ");
    }
    if (queries.tokens == 0) throw invalid_spec("decode scenario: needs at least one token");
    if (rope_enabled && queries.channels % 2 != 0) {
        throw invalid_spec("decode scenario: rotary embedding needs an even channel count");
    }
    switch (codec.kind) {
        case CodecSpec::Kind::none:
            break;
        case CodecSpec::Kind::coupled:
            codec.cq.validate();
            break;
        case CodecSpec::Kind::uniform_int:
            codec.intq.validate();
            break;
    }
}

void rope_rotate(std::span<double> embedding, size_t position, double base) {
    if (embedding.size() % 2 != 0) {
        throw invalid_spec("rope_rotate: embedding length must be even, got " +
                           std::to_string(embedding.size()));
    }
    const double d = static_cast<double>(embedding.size());
    for (size_t i = 0; 2 * i < embedding.size(); ++i) {
        const double theta = std::pow(base, -2.0 * static_cast<double>(i) / d);
        const double angle = theta * static_cast<double>(position);
        const double cs = std::cos(angle);
        const double sn = std::sin(angle);
        const double x0 = embedding[2 * i];
        const double x1 = embedding[2 * i + 1];
        embedding[2 * i] = x0 * cs - x1 * sn;
        embedding[2 * i + 1] = x0 * sn + x1 * cs;
    }
}

namespace {

std::vector<double> softmax_weights(std::span<const double> query,
                                    const std::vector<std::vector<double>>& key_columns,
                                    bool scale_scores) {
    const size_t t = key_columns.size();
    std::vector<double> scores(t);
    for (size_t i = 0; i < t; ++i) {
        const auto& key = key_columns[i];
        double acc = 0.0;
        for (size_t d = 0; d < query.size(); ++d) acc += key[d] * query[d];
        scores[i] = acc;
    }
    if (scale_scores) {
        const double inv = 1.0 / std::sqrt(static_cast<double>(query.size()));
        for (double& s : scores) s *= inv;
    }
    double m = scores[0];
    for (double s : scores) m = std::max(m, s);
    double norm = 0.0;
    for (double& s : scores) {
        s = std::exp(s - m);
        norm += s;
    }
    for (double& s : scores) s /= norm;
    return scores;
}

std::vector<double> weighted_value_sum(const std::vector<double>& weights,
                                       const std::vector<std::vector<double>>& value_columns,
                                       size_t dim) {
    std::vector<double> out(dim, 0.0);
    for (size_t i = 0; i < weights.size(); ++i) {
        const auto& col = value_columns[i];
        for (size_t d = 0; d < dim; ++d) out[d] += weights[i] * col[d];
    }
    return out;
}

// Stores the matrix through the configured codec and hands back the lossy
// reconstruction; the identity codec hands back a copy.
ActivationMatrix codec_reconstruct(const ActivationMatrix& matrix, const CodecSpec& spec,
                                   uint64_t seed) {
    switch (spec.kind) {
        case CodecSpec::Kind::none:
            return matrix;
        case CodecSpec::Kind::coupled: {
            CQConfig config = spec.cq;
            config.seed = seed;
            const Codebook book = learn_codebook(matrix, config);
            return dequantize(quantize(matrix, book), book);
        }
        case CodecSpec::Kind::uniform_int:
            return uniform_int(matrix, spec.intq).reconstruction;
    }
    throw invalid_spec("codec_reconstruct: unknown kind");
}

std::vector<double> matrix_column(const ActivationMatrix& matrix, size_t token) {
    std::vector<double> column(matrix.channels);
    for (size_t ch = 0; ch < matrix.channels; ++ch) column[ch] = matrix.at(ch, token);
    return column;
}

double l2_norm(std::span<const double> v) {
    double acc = 0.0;
    for (double x : v) acc += x * x;
    return std::sqrt(acc);
}

}  // namespace

std::vector<double> attention_step(std::span<const double> query,
                                   const std::vector<std::vector<double>>& key_columns,
                                   const std::vector<std::vector<double>>& value_columns,
                                   bool scale_scores) {
    if (key_columns.empty() || key_columns.size() != value_columns.size()) {
        throw shape_error("attention_step: key/value column counts differ or are empty");
    }
    for (const auto& col : key_columns) {
        if (col.size() != query.size()) {
            throw shape_error("attention_step: key column dim != query dim");
        }
    }
    const std::vector<double> weights = softmax_weights(query, key_columns, scale_scores);
    return weighted_value_sum(weights, value_columns, value_columns[0].size());
}

DecodeReport run_decode(const DecodeScenario& scenario) {
    scenario.validate();
    const size_t dim = scenario.keys.channels;
    const size_t tokens = scenario.keys.tokens;

    // Keys go through the codec before any rotation; rotation is applied to
    // the reconstruction as each column enters the cache.
    const ActivationMatrix keys_hat =
        codec_reconstruct(scenario.keys, scenario.codec, scenario.codec_seed);
    const ActivationMatrix values_hat =
        codec_reconstruct(scenario.values, scenario.codec, derive_seed(scenario.codec_seed, 1));

    DecodeReport report;
    report.codec_id = scenario.codec.id();
    report.rope_enabled = scenario.rope_enabled;
    report.scale_scores = scenario.scale_scores;
    report.head_channels = dim;
    report.steps.reserve(tokens);
    report.exact_outputs.reserve(tokens * dim);
    report.quant_outputs.reserve(tokens * dim);

    std::vector<std::vector<double>> exact_keys, exact_values;
    std::vector<std::vector<double>> quant_keys, quant_values;
    exact_keys.reserve(tokens);
    exact_values.reserve(tokens);
    quant_keys.reserve(tokens);
    quant_values.reserve(tokens);

    double rel_sum = 0.0;
    for (size_t t = 0; t < tokens; ++t) {
        std::vector<double> ek = matrix_column(scenario.keys, t);
        std::vector<double> qk = matrix_column(keys_hat, t);
        if (scenario.rope_enabled) {
            rope_rotate(ek, t, scenario.rope_base);
            rope_rotate(qk, t, scenario.rope_base);
        }
        exact_keys.push_back(std::move(ek));
        quant_keys.push_back(std::move(qk));
        exact_values.push_back(matrix_column(scenario.values, t));
        quant_values.push_back(matrix_column(values_hat, t));

        std::vector<double> query = matrix_column(scenario.queries, t);
        if (scenario.rope_enabled) rope_rotate(query, t, scenario.rope_base);

        std::vector<double> w_exact = softmax_weights(query, exact_keys, scenario.scale_scores);
        std::vector<double> w_quant = softmax_weights(query, quant_keys, scenario.scale_scores);
        std::vector<double> out_exact = weighted_value_sum(w_exact, exact_values, dim);
        std::vector<double> out_quant = weighted_value_sum(w_quant, quant_values, dim);

        DecodeStep step;
        step.exact_out_norm = l2_norm(out_exact);
        std::vector<double> diff(dim);
        for (size_t d = 0; d < dim; ++d) diff[d] = out_exact[d] - out_quant[d];
        const double dn = l2_norm(diff);
        // Relative to the exact norm; falls back to the absolute error when
        // the exact output vanishes.
        step.rel_l2_err = step.exact_out_norm > 0.0 ? dn / step.exact_out_norm : dn;
        double tv = 0.0;
        double wsum = 0.0;
        for (size_t i = 0; i < w_exact.size(); ++i) {
            tv += std::abs(w_exact[i] - w_quant[i]);
            wsum += w_exact[i];
        }
        step.weight_tv_dist = 0.5 * tv;
        report.max_softmax_sum_err = std::max(report.max_softmax_sum_err, std::abs(wsum - 1.0));

        report.max_rel_err = std::max(report.max_rel_err, step.rel_l2_err);
        report.max_weight_tv = std::max(report.max_weight_tv, step.weight_tv_dist);
        rel_sum += step.rel_l2_err;
        report.steps.push_back(step);
        report.exact_outputs.insert(report.exact_outputs.end(), out_exact.begin(),
                                    out_exact.end());
        report.quant_outputs.insert(report.quant_outputs.end(), out_quant.begin(),
                                    out_quant.end());
    }
    report.mean_rel_err = rel_sum / static_cast<double>(tokens);
    return report;
}

void write_decode_csv(std::ostream& out, const DecodeReport& report) {
    out << "step,exact_out_norm,rel_l2_err,weight_tv_dist\n";
    char line[160];
    for (size_t i = 0; i < report.steps.size(); ++i) {
        const DecodeStep& s = report.steps[i];
        std::snprintf(line, sizeof(line), "%zu,%.10g,%.10g,%.10g\n", i + 1, s.exact_out_norm,
                      s.rel_l2_err, s.weight_tv_dist);
        out << line;
    }
    if (!out) throw io_error("decode csv: write failure");
}

std::string decode_summary_json(const DecodeReport& report) {
    nlohmann::ordered_json j;
    j["codec"] = report.codec_id;
    j["rope"] = report.rope_enabled;
    j["scale_scores"] = report.scale_scores;
    j["head_channels"] = report.head_channels;
    j["steps"] = report.steps.size();
    j["max_rel_err"] = report.max_rel_err;
    j["mean_rel_err"] = report.mean_rel_err;
    j["max_weight_tv"] = report.max_weight_tv;
    j["max_softmax_sum_err"] = report.max_softmax_sum_err;
    return j.dump(2);
}

}  // namespace cq
