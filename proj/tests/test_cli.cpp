// End-to-end runs of the installed binary. Each case shells out to cqtool
// with a scratch directory and checks artifacts and exit codes.

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <string>

#include "cq/actdata.hpp"
#include "cq/cqcodec.hpp"
#include "doctest.h"
#include "helpers.hpp"
#include "json.hpp"

namespace {

const std::string kTool = CQTOOL_PATH;

int run(const std::string& args) {
    const std::string cmd = kTool + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

bool exists(const std::string& path) { return std::ifstream(path).good(); }

}  // namespace

TEST_CASE("gen writes a loadable dump and is flag-deterministic") {
    const std::string dir = testutil::make_temp_dir();
    CHECK(run("gen --channels 16 --tokens 100 --rank 2 --noise 0.1 --seed 7 -o " + dir +
              "/a.actd") == 0);
    const cq::ActivationMatrix m = cq::load_activations_file(dir + "/a.actd");
    CHECK(m.channels == 16);
    CHECK(m.tokens == 100);
    CHECK(!m.has_gradients());

    CHECK(run("gen --channels 16 --tokens 100 --rank 2 --noise 0.1 --seed 7 -o " + dir +
              "/b.actd") == 0);
    CHECK(testutil::read_file_bytes(dir + "/a.actd") ==
          testutil::read_file_bytes(dir + "/b.actd"));

    CHECK(run("gen --channels 16 --tokens 100 --rank 2 --noise 0.1 --seed 8 -o " + dir +
              "/c.actd") == 0);
    CHECK(testutil::read_file_bytes(dir + "/a.actd") !=
          testutil::read_file_bytes(dir + "/c.actd"));

    CHECK(run("gen --channels 16 --tokens 100 --gradients --seed 7 -o " + dir +
              "/g.actd") == 0);
    CHECK(cq::load_activations_file(dir + "/g.actd").has_gradients());
}

TEST_CASE("calibrate-quantize-dequantize pipeline round-trips on exact-fit data") {
    const std::string dir = testutil::make_temp_dir();
    // rank 1, no noise, 4 distinct-ish columns? simpler: tokens < 2^b so the
    // codebook memorizes the data and the round trip is lossless
    REQUIRE(run("gen --channels 8 --tokens 50 --rank 2 --noise 0.05 --seed 3 -o " + dir +
                "/kv.actd") == 0);
    CHECK(run("calibrate " + dir + "/kv.actd --cq 4c6b --seed 1 -o " + dir + "/cb.cqcb") == 0);
    CHECK(run("quantize " + dir + "/kv.actd --codebook " + dir + "/cb.cqcb -o " + dir +
              "/kv.cqqc") == 0);
    CHECK(run("dequantize " + dir + "/kv.cqqc --codebook " + dir + "/cb.cqcb --ref " + dir +
              "/kv.actd -o " + dir + "/rec.actd") == 0);

    const cq::ActivationMatrix orig = cq::load_activations_file(dir + "/kv.actd");
    const cq::ActivationMatrix rec = cq::load_activations_file(dir + "/rec.actd");
    CHECK(rec.values == orig.values);  // 50 tokens < 64 entries: memorized

    CHECK(run("info " + dir + "/kv.actd") == 0);
    CHECK(run("info " + dir + "/cb.cqcb") == 0);
    CHECK(run("info " + dir + "/kv.cqqc") == 0);
}

TEST_CASE("documented failures map to distinct exit codes") {
    const std::string dir = testutil::make_temp_dir();
    REQUIRE(run("gen --channels 8 --tokens 64 --rank 1 --seed 2 -o " + dir + "/kv.actd") == 0);

    // invalid generation spec
    CHECK(run("gen --channels 4 --tokens 8 --rank 9 --seed 1 -o " + dir + "/x.actd") == 2);
    // missing input file
    CHECK(run("info " + dir + "/absent.actd") == 3);
    // corrupt file
    testutil::write_file_bytes(dir + "/junk.actd", "ACTDjunkjunk");
    CHECK(run("info " + dir + "/junk.actd") == 4);
    // indivisible coupling width
    CHECK(run("calibrate " + dir + "/kv.actd --cq 3c4b --seed 1 -o " + dir + "/cb.cqcb") == 5);
    // fisher without gradients
    CHECK(run("calibrate " + dir + "/kv.actd --cq 4c4b --fisher --seed 1 -o " + dir +
              "/cb.cqcb") == 6);
    // codebook/cache mismatch
    REQUIRE(run("calibrate " + dir + "/kv.actd --cq 4c4b --seed 1 -o " + dir + "/cb1.cqcb") ==
            0);
    REQUIRE(run("calibrate " + dir + "/kv.actd --cq 4c4b --seed 2 -o " + dir + "/cb2.cqcb") ==
            0);
    REQUIRE(run("quantize " + dir + "/kv.actd --codebook " + dir + "/cb1.cqcb -o " + dir +
                "/kv.cqqc") == 0);
    CHECK(run("dequantize " + dir + "/kv.cqqc --codebook " + dir + "/cb2.cqcb -o " + dir +
              "/rec.actd") == 7);
    // out-of-domain analysis parameters
    CHECK(run("stats " + dir + "/kv.actd --group-sizes 9") == 8);
    // bad usage
    CHECK(run("quantize") == 2);
    CHECK(run("frobnicate") == 2);
}

TEST_CASE("stats writes the requested reports") {
    const std::string dir = testutil::make_temp_dir();
    REQUIRE(run("gen --channels 12 --tokens 256 --rank 2 --noise 0.1 --seed 5 -o " + dir +
                "/kv.actd") == 0);
    CHECK(run("stats " + dir + "/kv.actd --group-sizes 1,2,4 --bins 8 --entropy-csv " + dir +
              "/ent.csv --channel-limit 6 --correlation-csv " + dir + "/corr.csv") == 0);
    REQUIRE(exists(dir + "/ent.csv"));
    REQUIRE(exists(dir + "/corr.csv"));
    const std::string ent = testutil::read_file_bytes(dir + "/ent.csv");
    CHECK(ent.rfind("group_size,group_index,joint_bits,sum_marginal_bits\n", 0) == 0);
    // 12 + 6 + 3 data rows after the header
    CHECK(std::count(ent.begin(), ent.end(), '\n') == 22);
    const std::string corr = testutil::read_file_bytes(dir + "/corr.csv");
    CHECK(std::count(corr.begin(), corr.end(), '\n') == 6);
}

TEST_CASE("simulate emits per-codec reports and a ranked summary") {
    const std::string dir = testutil::make_temp_dir();
    REQUIRE(run("gen --channels 8 --tokens 80 --rank 2 --noise 0.1 --seed 11 -o " + dir +
                "/q.actd") == 0);
    REQUIRE(run("gen --channels 8 --tokens 80 --rank 2 --noise 0.1 --seed 12 -o " + dir +
                "/k.actd") == 0);
    REQUIRE(run("gen --channels 8 --tokens 80 --rank 2 --noise 0.1 --seed 13 -o " + dir +
                "/v.actd") == 0);
    CHECK(run("simulate --queries " + dir + "/q.actd --keys " + dir + "/k.actd --values " +
              dir + "/v.actd --codec none --codec int:2 --rope --seed 4 --out-dir " + dir +
              " --summary " + dir + "/summary.json") == 0);
    REQUIRE(exists(dir + "/decode_none.csv"));
    REQUIRE(exists(dir + "/decode_int_2.csv"));
    const auto summary =
        nlohmann::json::parse(testutil::read_file_bytes(dir + "/summary.json"));
    REQUIRE(summary["codecs"].size() == 2);
    CHECK(summary["codecs"][0]["codec"] == "none");
    CHECK(summary["codecs"][0]["max_rel_err"].get<double>() == 0.0);
    CHECK(summary["codecs"][1]["codec"] == "int:2");
    CHECK(summary["codecs"][1]["mean_rel_err"].get<double>() > 0.0);
    // identity must rank first
    CHECK(summary["ranking"][0] == "none");
}

TEST_CASE("size reports the accounting numbers as JSON") {
    const std::string dir = testutil::make_temp_dir();
    const std::string cmd = kTool +
                            " size --layers 32 --kv-heads 32 --head-dim 128 --cq 2c8b"
                            " --batch 1 --tokens 2048 --bits 16 --json > " +
                            dir + "/size.json 2>/dev/null";
    REQUIRE(WEXITSTATUS(std::system(cmd.c_str())) == 0);
    const auto j = nlohmann::json::parse(testutil::read_file_bytes(dir + "/size.json"));
    CHECK(j["codebook_params"] == 67108864);
    CHECK(j["bits_per_fpn"] == 4.0);
    CHECK(j["cache_bytes"] == 1073741824);
    CHECK(j["cq_cache_bytes"] == 268435456);

    // Mistral-shaped head count
    const std::string cmd2 = kTool +
                             " size --layers 32 --kv-heads 8 --head-dim 128 --cq 2c8b --json > " +
                             dir + "/size2.json 2>/dev/null";
    REQUIRE(WEXITSTATUS(std::system(cmd2.c_str())) == 0);
    const auto j2 = nlohmann::json::parse(testutil::read_file_bytes(dir + "/size2.json"));
    CHECK(j2["codebook_params"] == 16777216);
}
