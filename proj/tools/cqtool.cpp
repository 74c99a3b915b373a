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

// cqtool: command-line front end for the coupled-quantization KV-cache
// toolkit. Subcommands: gen, calibrate, quantize, dequantize, stats,
// simulate, size, info.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numeric>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cq/attnsim.hpp"
#include "cq/baselines.hpp"
#include "cq/cqcodec.hpp"
#include "cq/errors.hpp"
#include "cq/infostats.hpp"
#include "json.hpp"

namespace {

// Exit codes, one per documented error class.
enum ExitCode {
    kOk = 0,
    kUnexpected = 1,
    kInvalidSpec = 2,
    kIo = 3,
    kParse = 4,
    kShape = 5,
    kMissingGradient = 6,
    kCodec = 7,
    kDomain = 8,
    kDegenerate = 9,
};

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw cq::io_error("cannot open for write: " + path);
    out << text;
    if (!out) throw cq::io_error("write failure: " + path);
}

// ---------------------------------------------------------------- gen ----

struct GenArgs {
    cq::SynthSpec spec;
    bool gradients = false;
    double salient_fraction = 0.05;
    double salient_scale = 10.0;
    double base_scale = 1.0;
    std::string output;
};

int run_gen(const GenArgs& args) {
    cq::ActivationMatrix matrix = cq::synth_correlated(args.spec);
    size_t salient = 0;
    if (args.gradients) {
        salient = cq::attach_synthetic_gradients(matrix, args.salient_fraction,
                                                 args.salient_scale, args.base_scale,
                                                 args.spec.seed)
                      .size();
    }
    const uint64_t bytes = cq::save_activations_file(matrix, args.output);
    std::cout << "wrote " << args.output << " (" << bytes << " bytes)\n"
              << "shape: " << matrix.channels << " channels x " << matrix.tokens
              << " tokens\n"
              << "gradients: " << (args.gradients ? "yes" : "no");
    if (args.gradients) std::cout << " (salient tokens: " << salient << ")";
    std::cout << "\nseed: " << args.spec.seed << "\n";
    return kOk;
}

// ---------------------------------------------------------- calibrate ----

struct CalibrateArgs {
    std::string input;
    std::string notation = "1c8b";
    bool fisher = false;
    uint32_t kmeans_iters = 100;
    uint64_t seed = 0;
    size_t threads = 0;
    std::string output;
};

int run_calibrate(const CalibrateArgs& args) {
    cq::CQConfig config = cq::CQConfig::parse_notation(args.notation);
    config.mode = args.fisher ? cq::LearningMode::fisher : cq::LearningMode::uniform;
    config.kmeans_iters = args.kmeans_iters;
    config.seed = args.seed;

    const cq::ActivationMatrix matrix = cq::load_activations_file(args.input);
    cq::LearnReport report;
    const auto t0 = std::chrono::steady_clock::now();
    const cq::Codebook book = cq::learn_codebook(matrix, config, &report, args.threads);
    const auto t1 = std::chrono::steady_clock::now();
    const double seconds = std::chrono::duration<double>(t1 - t0).count();

    const uint64_t bytes = cq::save_codebook_file(book, args.output);
    const auto [min_it, max_it] = std::minmax_element(report.group_objective.begin(),
                                                      report.group_objective.end());
    const size_t fallbacks = static_cast<size_t>(std::count(
        book.fisher_fallback.begin(), book.fisher_fallback.end(), uint8_t{1}));
    std::cout << "wrote " << args.output << " (" << bytes << " bytes)\n"
              << "config: " << config.notation() << " "
              << (config.mode == cq::LearningMode::fisher ? "fisher" : "uniform") << ", "
              << book.num_groups << " groups x " << config.codebook_entries()
              << " centroids\n"
              << "objective: total=" << fmt_double(report.total_objective)
              << " min=" << fmt_double(*min_it) << " max=" << fmt_double(*max_it) << "\n";
    if (config.mode == cq::LearningMode::fisher) {
        std::cout << "uniform fallbacks: " << fallbacks << "\n";
    }
    std::cout << "seed: " << config.seed << "\n"
              << "learning time: " << fmt_double(seconds) << " s\n";
    return kOk;
}

// ----------------------------------------------------------- quantize ----

struct QuantizeArgs {
    std::string input;
    std::string codebook;
    std::string output;
};

int run_quantize(const QuantizeArgs& args) {
    const cq::ActivationMatrix matrix = cq::load_activations_file(args.input);
    const cq::Codebook book = cq::load_codebook_file(args.codebook);
    const cq::QuantizedCache cache = cq::quantize(matrix, book);
    const uint64_t bytes = cq::save_cache_file(cache, args.output);
    std::cout << "wrote " << args.output << " (" << bytes << " bytes)\n"
              << "config: " << book.config.notation()
              << "  bits_per_fpn: " << fmt_double(cq::bits_per_fpn(book.config)) << "\n"
              << "payload: " << cache.payload.size() << " bytes ("
              << cache.payload_code_bits() << " code bits)\n";
    return kOk;
}

// --------------------------------------------------------- dequantize ----

struct DequantizeArgs {
    std::string input;
    std::string codebook;
    std::string output;
    std::string ref;
};

int run_dequantize(const DequantizeArgs& args) {
    const cq::QuantizedCache cache = cq::load_cache_file(args.input);
    const cq::Codebook book = cq::load_codebook_file(args.codebook);
    const cq::ActivationMatrix matrix = cq::dequantize(cache, book);
    const uint64_t bytes = cq::save_activations_file(matrix, args.output);
    std::cout << "wrote " << args.output << " (" << bytes << " bytes)\n"
              << "shape: " << matrix.channels << " channels x " << matrix.tokens
              << " tokens\n";
    if (!args.ref.empty()) {
        const cq::ActivationMatrix original = cq::load_activations_file(args.ref);
        const double sse = cq::quantization_error(original, matrix);
        const double rmse = std::sqrt(sse / static_cast<double>(original.values.size()));
        std::cout << "reconstruction error: sse=" << fmt_double(sse)
                  << " rmse=" << fmt_double(rmse) << "\n";
    }
    return kOk;
}

// -------------------------------------------------------------- stats ----

struct StatsArgs {
    std::string input;
    std::vector<size_t> group_sizes{1, 2, 4};
    size_t bins = 16;
    size_t channel_limit = 0;  // 0 = whole matrix
    std::string entropy_csv;
    std::string correlation_csv;
};

int run_stats(const StatsArgs& args) {
    const cq::ActivationMatrix matrix = cq::load_activations_file(args.input);
    const auto reports = cq::entropy_sweep(matrix, args.group_sizes, args.bins);
    for (const auto& r : reports) {
        std::cout << "group_size " << r.group_size << ": groups=" << r.num_groups
                  << " joint_mean=" << fmt_double(r.joint_mean)
                  << " sum_marginal_mean=" << fmt_double(r.sum_marginal_mean);
        if (r.dropped_channels > 0) std::cout << " dropped=" << r.dropped_channels;
        std::cout << "\n";
    }
    if (!args.entropy_csv.empty()) {
        std::ofstream out(args.entropy_csv, std::ios::binary);
        if (!out) throw cq::io_error("cannot open for write: " + args.entropy_csv);
        cq::write_entropy_csv(out, reports);
        std::cout << "wrote " << args.entropy_csv << "\n";
    }
    if (!args.correlation_csv.empty()) {
        const size_t limit =
            args.channel_limit == 0 ? matrix.channels : args.channel_limit;
        const cq::CorrelationMatrix corr = cq::correlation_matrix(matrix, limit);
        std::ofstream out(args.correlation_csv, std::ios::binary);
        if (!out) throw cq::io_error("cannot open for write: " + args.correlation_csv);
        cq::write_correlation_csv(out, corr);
        std::cout << "wrote " << args.correlation_csv << " (" << corr.n << "x" << corr.n
                  << ")\n";
    }
    return kOk;
}

// ----------------------------------------------------------- simulate ----

struct SimulateArgs {
    std::string queries;
    std::string keys;
    std::string values;
    std::vector<std::string> codecs{"none"};
    bool rope = false;
    double rope_base = 10000.0;
    bool scale_scores = false;
    uint64_t seed = 0;
    std::string out_dir;
    std::string summary;
};

std::string sanitize_codec_id(std::string id) {
    std::replace(id.begin(), id.end(), ':', '_');
    return id;
}

int run_simulate(const SimulateArgs& args) {
    cq::DecodeScenario scenario;
    scenario.queries = cq::load_activations_file(args.queries);
    scenario.keys = cq::load_activations_file(args.keys);
    scenario.values = cq::load_activations_file(args.values);
    scenario.rope_enabled = args.rope;
    scenario.rope_base = args.rope_base;
    scenario.scale_scores = args.scale_scores;
    scenario.codec_seed = args.seed;

    nlohmann::ordered_json summary;
    summary["rope"] = args.rope;
    summary["scale_scores"] = args.scale_scores;
    summary["seed"] = args.seed;
    summary["codecs"] = nlohmann::ordered_json::array();

    std::vector<std::pair<double, std::string>> ranking;
    for (const std::string& codec_text : args.codecs) {
        scenario.codec = cq::CodecSpec::parse(codec_text);
        const cq::DecodeReport report = cq::run_decode(scenario);
        summary["head_channels"] = report.head_channels;
        summary["steps"] = report.steps.size();

        std::cout << report.codec_id << ": mean_rel_err=" << fmt_double(report.mean_rel_err)
                  << " max_rel_err=" << fmt_double(report.max_rel_err)
                  << " max_weight_tv=" << fmt_double(report.max_weight_tv) << "\n";
        if (!args.out_dir.empty()) {
            const std::string path =
                args.out_dir + "/decode_" + sanitize_codec_id(report.codec_id) + ".csv";
            std::ofstream out(path, std::ios::binary);
            if (!out) throw cq::io_error("cannot open for write: " + path);
            cq::write_decode_csv(out, report);
            std::cout << "wrote " << path << "\n";
        }
        summary["codecs"].push_back(nlohmann::ordered_json::parse(
            cq::decode_summary_json(report)));
        ranking.emplace_back(report.mean_rel_err, report.codec_id);
    }

    std::stable_sort(ranking.begin(), ranking.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    summary["ranking"] = nlohmann::ordered_json::array();
    std::cout << "ranking (mean_rel_err ascending):";
    for (const auto& [err, id] : ranking) {
        summary["ranking"].push_back(id);
        std::cout << " " << id;
    }
    std::cout << "\n";

    if (!args.summary.empty()) {
        write_text_file(args.summary, summary.dump(2) + "\n");
        std::cout << "wrote " << args.summary << "\n";
    }
    return kOk;
}

// --------------------------------------------------------------- size ----

struct SizeArgs {
    cq::ModelDims dims;
    size_t max_context = 0;  // 0 = fit to --tokens
    std::string notation;
    uint64_t batch = 1;
    uint64_t tokens = 0;
    double bits = 16.0;
    bool json = false;
};

int run_size(const SizeArgs& args) {
    cq::ModelDims dims = args.dims;
    dims.max_context =
        args.max_context != 0 ? args.max_context : std::max<uint64_t>(args.tokens, 1);

    nlohmann::ordered_json j;
    j["layers"] = dims.layers;
    j["kv_heads"] = dims.kv_heads;
    j["head_dim"] = dims.head_channels;

    if (!args.json) {
        std::cout << "model: layers=" << dims.layers << " kv_heads=" << dims.kv_heads
                  << " head_dim=" << dims.head_channels << "\n";
    }
    double cq_bits = 0.0;
    if (!args.notation.empty()) {
        const cq::CQConfig config = cq::CQConfig::parse_notation(args.notation);
        cq_bits = cq::bits_per_fpn(config);
        const uint64_t params = cq::codebook_param_count(dims, config);
        const uint64_t book_bytes = cq::codebook_storage_bytes(dims, config, 16);
        j["codec"] = config.notation();
        j["bits_per_fpn"] = cq_bits;
        j["codebook_params"] = params;
        j["codebook_bytes_fp16"] = book_bytes;
        if (!args.json) {
            std::cout << "codec: " << config.notation()
                      << "  bits_per_fpn: " << fmt_double(cq_bits) << "\n"
                      << "codebook params: " << params << "\n"
                      << "codebook bytes (fp16): " << book_bytes << "\n";
        }
    }
    if (args.tokens > 0) {
        const uint64_t base_bytes = cq::kv_cache_bytes(dims, args.batch, args.tokens, args.bits);
        j["batch"] = args.batch;
        j["tokens"] = args.tokens;
        j["bits"] = args.bits;
        j["cache_bytes"] = base_bytes;
        if (!args.json) {
            std::cout << "cache bytes (batch=" << args.batch << ", tokens=" << args.tokens
                      << ", bits=" << fmt_double(args.bits) << "): " << base_bytes << "\n";
        }
        if (!args.notation.empty()) {
            const uint64_t cq_bytes = cq::kv_cache_bytes(dims, args.batch, args.tokens, cq_bits);
            j["cq_cache_bytes"] = cq_bytes;
            if (!args.json) {
                std::cout << "cache bytes (batch=" << args.batch << ", tokens=" << args.tokens
                          << ", " << args.notation << "): " << cq_bytes << "\n";
            }
        }
    }
    if (args.json) std::cout << j.dump(2) << "\n";
    return kOk;
}

// --------------------------------------------------------------- info ----

int run_info(const std::string& path) {
    std::ifstream probe(path, std::ios::binary);
    if (!probe) throw cq::io_error("cannot open for read: " + path);
    char magic[4] = {};
    probe.read(magic, 4);
    if (probe.gcount() != 4) throw cq::parse_error(path + ": shorter than a format magic");
    probe.close();

    const std::string tag(magic, 4);
    if (tag == "ACTD") {
        const cq::ActivationMatrix m = cq::load_activations_file(path);
        double lo = m.values.empty() ? 0.0 : m.values[0];
        double hi = lo;
        double sum = 0.0;
        for (float v : m.values) {
            lo = std::min(lo, static_cast<double>(v));
            hi = std::max(hi, static_cast<double>(v));
            sum += v;
        }
        std::cout << "format: ACTD activation dump\n"
                  << "shape: " << m.channels << " channels x " << m.tokens << " tokens\n"
                  << "gradients: " << (m.has_gradients() ? "yes" : "no") << "\n"
                  << "values: min=" << fmt_double(lo) << " max=" << fmt_double(hi)
                  << " mean=" << fmt_double(sum / static_cast<double>(m.values.size()))
                  << "\n";
    } else if (tag == "CQCB") {
        const cq::Codebook book = cq::load_codebook_file(path);
        const size_t fallbacks = static_cast<size_t>(std::count(
            book.fisher_fallback.begin(), book.fisher_fallback.end(), uint8_t{1}));
        char hash[32];
        std::snprintf(hash, sizeof(hash), "%016llx",
                      static_cast<unsigned long long>(book.hash()));
        std::cout << "format: CQCB codebook\n"
                  << "config: " << book.config.notation() << " "
                  << (book.config.mode == cq::LearningMode::fisher ? "fisher" : "uniform")
                  << "\n"
                  << "groups: " << book.num_groups << " x "
                  << book.config.codebook_entries() << " centroids ("
                  << book.channels() << " channels)\n"
                  << "uniform fallbacks: " << fallbacks << "\n"
                  << "hash: " << hash << "\n";
    } else if (tag == "CQQC") {
        const cq::QuantizedCache cache = cq::load_cache_file(path);
        char hash[32];
        std::snprintf(hash, sizeof(hash), "%016llx",
                      static_cast<unsigned long long>(cache.codebook_hash));
        std::cout << "format: CQQC quantized cache\n"
                  << "config: " << cache.channels_per_group << "c" << cache.bits_per_code
                  << "b\n"
                  << "groups: " << cache.num_groups << ", tokens: " << cache.tokens << "\n"
                  << "payload: " << cache.payload.size() << " bytes ("
                  << cache.payload_code_bits() << " code bits)\n"
                  << "codebook hash: " << hash << "\n";
    } else {
        throw cq::parse_error(path + ": unknown format magic");
    }
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"coupled-quantization KV-cache toolkit"};
    app.require_subcommand(1);

    GenArgs gen;
    CLI::App* gen_cmd = app.add_subcommand("gen", "generate synthetic correlated activations");
    gen_cmd->add_option("--channels", gen.spec.channels, "channel count")->required();
    gen_cmd->add_option("--tokens", gen.spec.tokens, "token count")->required();
    gen_cmd->add_option("--rank", gen.spec.latent_rank, "latent rank (default 1)");
    gen_cmd->add_option("--noise", gen.spec.noise_sigma, "isotropic noise sigma (default 0)");
    gen_cmd->add_option("--scale", gen.spec.mixing_scale, "mixing matrix scale (default 1)");
    gen_cmd->add_option("--seed", gen.spec.seed, "generation seed (default 0)");
    gen_cmd->add_flag("--gradients", gen.gradients, "attach synthetic gradients");
    gen_cmd->add_option("--salient-fraction", gen.salient_fraction,
                        "fraction of tokens with large gradients (default 0.05)");
    gen_cmd->add_option("--salient-scale", gen.salient_scale,
                        "gradient sigma on salient tokens (default 10)");
    gen_cmd->add_option("--base-scale", gen.base_scale,
                        "gradient sigma elsewhere (default 1)");
    gen_cmd->add_option("-o,--output", gen.output, "output .actd path")->required();

    CalibrateArgs cal;
    CLI::App* cal_cmd = app.add_subcommand("calibrate", "learn a codebook from a dump");
    cal_cmd->add_option("input", cal.input, "input .actd path")->required();
    cal_cmd->add_option("--cq", cal.notation, "coupling config, e.g. 4c8b")->required();
    cal_cmd->add_flag("--fisher", cal.fisher, "weigh token columns by squared gradients");
    cal_cmd->add_option("--kmeans-iters", cal.kmeans_iters, "max Lloyd iterations (default 100)");
    cal_cmd->add_option("--seed", cal.seed, "clustering seed (default 0)");
    cal_cmd->add_option("--threads", cal.threads, "worker cap, 0 = hardware (default 0)");
    cal_cmd->add_option("-o,--output", cal.output, "output .cqcb path")->required();

    QuantizeArgs qz;
    CLI::App* qz_cmd = app.add_subcommand("quantize", "encode a dump against a codebook");
    qz_cmd->add_option("input", qz.input, "input .actd path")->required();
    qz_cmd->add_option("--codebook", qz.codebook, "codebook .cqcb path")->required();
    qz_cmd->add_option("-o,--output", qz.output, "output .cqqc path")->required();

    DequantizeArgs dq;
    CLI::App* dq_cmd = app.add_subcommand("dequantize", "decode a cache back to activations");
    dq_cmd->add_option("input", dq.input, "input .cqqc path")->required();
    dq_cmd->add_option("--codebook", dq.codebook, "codebook .cqcb path")->required();
    dq_cmd->add_option("--ref", dq.ref, "original .actd to report reconstruction error");
    dq_cmd->add_option("-o,--output", dq.output, "output .actd path")->required();

    StatsArgs st;
    CLI::App* st_cmd = app.add_subcommand("stats", "entropy and correlation reports");
    st_cmd->add_option("input", st.input, "input .actd path")->required();
    st_cmd->add_option("--group-sizes", st.group_sizes, "channel group sizes (default 1,2,4)")
        ->delimiter(',');
    st_cmd->add_option("--bins", st.bins, "bins per channel (default 16)");
    st_cmd->add_option("--channel-limit", st.channel_limit,
                       "correlation over the first N channels (default all)");
    st_cmd->add_option("--entropy-csv", st.entropy_csv, "write entropy sweep CSV here");
    st_cmd->add_option("--correlation-csv", st.correlation_csv, "write correlation CSV here");

    SimulateArgs sim;
    CLI::App* sim_cmd = app.add_subcommand("simulate", "single-head attention decode");
    sim_cmd->add_option("--queries", sim.queries, "query .actd path")->required();
    sim_cmd->add_option("--keys", sim.keys, "key .actd path")->required();
    sim_cmd->add_option("--values", sim.values, "value .actd path")->required();
    sim_cmd->add_option("--codec", sim.codecs,
                        "codec id: none | cq:<c>c<b>b[:fisher] | int:<bits>[:gs<N>][:token] "
                        "(repeatable, default none)");
    sim_cmd->add_flag("--rope", sim.rope, "rotate keys/queries by token position");
    sim_cmd->add_option("--rope-base", sim.rope_base, "rotation base (default 10000)");
    sim_cmd->add_flag("--scale-scores", sim.scale_scores, "scale scores by 1/sqrt(dim)");
    sim_cmd->add_option("--seed", sim.seed, "codec calibration seed (default 0)");
    sim_cmd->add_option("--out-dir", sim.out_dir, "write per-codec step CSVs here");
    sim_cmd->add_option("--summary", sim.summary, "write comparison summary JSON here");

    SizeArgs sz;
    CLI::App* sz_cmd = app.add_subcommand("size", "cache and codebook size accounting");
    sz_cmd->add_option("--layers", sz.dims.layers, "transformer layers")->required();
    sz_cmd->add_option("--kv-heads", sz.dims.kv_heads, "KV heads per layer")->required();
    sz_cmd->add_option("--head-dim", sz.dims.head_channels, "channels per head")->required();
    sz_cmd->add_option("--max-context", sz.max_context, "context limit (default: --tokens)");
    sz_cmd->add_option("--cq", sz.notation, "coupling config, e.g. 2c8b");
    sz_cmd->add_option("--batch", sz.batch, "batch size (default 1)");
    sz_cmd->add_option("--tokens", sz.tokens, "cached token count");
    sz_cmd->add_option("--bits", sz.bits, "uncompressed bits per FPN (default 16)");
    sz_cmd->add_flag("--json", sz.json, "print a JSON report instead of text");

    std::string info_path;
    CLI::App* info_cmd = app.add_subcommand("info", "describe an ACTD/CQCB/CQQC file");
    info_cmd->add_option("input", info_path, "file to describe")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kInvalidSpec;
    }

    try {
        if (gen_cmd->parsed()) return run_gen(gen);
        if (cal_cmd->parsed()) return run_calibrate(cal);
        if (qz_cmd->parsed()) return run_quantize(qz);
        if (dq_cmd->parsed()) return run_dequantize(dq);
        if (st_cmd->parsed()) return run_stats(st);
        if (sim_cmd->parsed()) return run_simulate(sim);
        if (sz_cmd->parsed()) return run_size(sz);
        if (info_cmd->parsed()) return run_info(info_path);
    } catch (const cq::invalid_spec& e) {
        std::cerr << "error (invalid spec): " << e.what() << "\n";
        return kInvalidSpec;
    } catch (const cq::io_error& e) {
        std::cerr << "error (io): " << e.what() << "\n";
        return kIo;
    } catch (const cq::parse_error& e) {
        std::cerr << "error (parse): " << e.what() << "\n";
        return kParse;
    } catch (const cq::shape_error& e) {
        std::cerr << "error (shape): " << e.what() << "\n";
        return kShape;
    } catch (const cq::missing_gradient_error& e) {
        std::cerr << "error (missing gradients): " << e.what() << "\n";
        return kMissingGradient;
    } catch (const cq::codec_error& e) {
        std::cerr << "error (codec): " << e.what() << "\n";
        return kCodec;
    } catch (const cq::domain_error& e) {
        std::cerr << "error (domain): " << e.what() << "\n";
        return kDomain;
    } catch (const cq::degenerate_input& e) {
        std::cerr << "error (degenerate input): " << e.what() << "\n";
        return kDegenerate;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUnexpected;
    }
    return kOk;
}
