#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <vector>

#include "cq/errors.hpp"
#include "cq/infostats.hpp"
#include "cq/rng.hpp"
#include "doctest.h"

namespace {

cq::ActivationMatrix from_rows(const std::vector<std::vector<float>>& rows) {
    cq::ActivationMatrix m(rows.size(), rows[0].size());
    for (size_t ch = 0; ch < rows.size(); ++ch) {
        for (size_t t = 0; t < rows[ch].size(); ++t) m.at(ch, t) = rows[ch][t];
    }
    return m;
}

cq::ActivationMatrix correlated_matrix(size_t channels, size_t tokens, size_t rank,
                                       double noise, uint64_t seed) {
    cq::SynthSpec spec;
    spec.channels = channels;
    spec.tokens = tokens;
    spec.latent_rank = rank;
    spec.noise_sigma = noise;
    spec.seed = seed;
    return cq::synth_correlated(spec);
}

}  // namespace

TEST_CASE("bin fitting records per-channel ranges and degeneracy") {
    const cq::ActivationMatrix m =
        from_rows({{1.0f, 3.0f, 2.0f, -1.0f}, {5.0f, 5.0f, 5.0f, 5.0f}});
    const cq::BinningSpec bins = cq::fit_bins(m, 8);
    CHECK(bins.num_bins == 8);
    CHECK(bins.mins[0] == -1.0f);
    CHECK(bins.maxs[0] == 3.0f);
    CHECK(!bins.is_degenerate(0));
    CHECK(bins.mins[1] == 5.0f);
    CHECK(bins.maxs[1] == 5.0f);
    CHECK(bins.is_degenerate(1));
}

TEST_CASE("discretization follows the clamped floor rule") {
    cq::BinningSpec bins;
    bins.num_bins = 4;
    bins.mins = {0.0f};
    bins.maxs = {1.0f};
    cq::ActivationMatrix m(1, 7);
    const float xs[7] = {0.0f, 0.24f, 0.25f, 0.5f, 0.99f, 1.0f, 2.0f};
    std::copy(xs, xs + 7, m.values.begin());
    const cq::DiscretizedMatrix d = cq::discretize(m, bins);
    CHECK(d.indices[0] == 0);
    CHECK(d.indices[1] == 0);
    CHECK(d.indices[2] == 1);
    CHECK(d.indices[3] == 2);
    CHECK(d.indices[4] == 3);
    CHECK(d.indices[5] == 3);  // the max lands in the top bin, not past it
    CHECK(d.indices[6] == 3);  // out of range clamps

    // below-range values clamp to bin 0
    m.values[0] = -5.0f;
    CHECK(cq::discretize(m, bins).indices[0] == 0);

    // degenerate channel puts everything in bin 0
    cq::BinningSpec flat;
    flat.num_bins = 4;
    flat.mins = {2.0f};
    flat.maxs = {2.0f};
    cq::ActivationMatrix c(1, 3);
    std::fill(c.values.begin(), c.values.end(), 2.0f);
    const cq::DiscretizedMatrix dflat = cq::discretize(c, flat);
    CHECK(dflat.indices == std::vector<uint16_t>{0, 0, 0});
}

TEST_CASE("entropy of hand-built histograms") {
    // four tokens split evenly over two cells: exactly 1 bit
    const cq::ActivationMatrix m = from_rows({{0.0f, 0.0f, 1.0f, 1.0f},
                                              {0.0f, 1.0f, 0.0f, 1.0f},
                                              {0.0f, 0.0f, 1.0f, 1.0f},
                                              {0.0f, 0.0f, 0.0f, 1.0f}});
    const cq::BinningSpec bins = cq::fit_bins(m, 2);
    const cq::DiscretizedMatrix d = cq::discretize(m, bins);

    const size_t g0[] = {0};
    CHECK(cq::joint_entropy(d, g0) == doctest::Approx(1.0).epsilon(1e-12));
    // uniform over 4 joint cells: 2 bits
    const size_t g01[] = {0, 1};
    CHECK(cq::joint_entropy(d, g01) == doctest::Approx(2.0).epsilon(1e-12));
    // channel 2 duplicates channel 0: the pair carries only 1 bit
    const size_t g02[] = {0, 2};
    CHECK(cq::joint_entropy(d, g02) == doctest::Approx(1.0).epsilon(1e-12));
    // 3/4 vs 1/4 split: 2 - 0.75*log2(3) bits
    const size_t g3[] = {3};
    CHECK(cq::joint_entropy(d, g3) ==
          doctest::Approx(2.0 - 0.75 * std::log2(3.0)).epsilon(1e-12));
    // marginal API agrees with the size-1 group bit for bit
    CHECK(cq::marginal_entropy(d, 3) == cq::joint_entropy(d, g3));

    // fully dependent pair: joint equals the marginal, gap is 1 bit
    const double sum02 = cq::marginal_entropy(d, 0) + cq::marginal_entropy(d, 2);
    CHECK(sum02 - cq::joint_entropy(d, g02) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("joint entropy rejects out-of-domain groups") {
    const cq::ActivationMatrix m = correlated_matrix(10, 64, 2, 0.1, 3);
    const cq::DiscretizedMatrix d = cq::discretize(m, cq::fit_bins(m, 4));
    CHECK_THROWS_AS(cq::joint_entropy(d, std::vector<size_t>{}), cq::domain_error);
    std::vector<size_t> too_big(cq::kMaxJointGroup + 1);
    std::iota(too_big.begin(), too_big.end(), 0);
    CHECK_THROWS_AS(cq::joint_entropy(d, too_big), cq::domain_error);
    CHECK_THROWS_AS(cq::joint_entropy(d, std::vector<size_t>{99}), cq::shape_error);

    // the largest supported group still works
    std::vector<size_t> max_group(cq::kMaxJointGroup);
    std::iota(max_group.begin(), max_group.end(), 0);
    CHECK(cq::joint_entropy(d, max_group) >= 0.0);
}

TEST_CASE("entropy is exactly invariant under token permutation") {
    const cq::ActivationMatrix m = correlated_matrix(6, 512, 2, 0.2, 11);
    const cq::BinningSpec bins = cq::fit_bins(m, 16);

    // reverse the token order; min/max and cell counts are unchanged
    cq::ActivationMatrix rev(m.channels, m.tokens);
    for (size_t ch = 0; ch < m.channels; ++ch) {
        for (size_t t = 0; t < m.tokens; ++t) rev.at(ch, t) = m.at(ch, m.tokens - 1 - t);
    }
    const cq::BinningSpec rbins = cq::fit_bins(rev, 16);
    CHECK(bins.mins == rbins.mins);
    CHECK(bins.maxs == rbins.maxs);

    const cq::DiscretizedMatrix d = cq::discretize(m, bins);
    const cq::DiscretizedMatrix rd = cq::discretize(rev, rbins);
    for (size_t g = 0; g + 2 <= m.channels; g += 2) {
        const size_t group[] = {g, g + 1};
        // bitwise identical, not merely close
        CHECK(cq::joint_entropy(d, group) == cq::joint_entropy(rd, group));
    }
    for (size_t ch = 0; ch < m.channels; ++ch) {
        CHECK(cq::marginal_entropy(d, ch) == cq::marginal_entropy(rd, ch));
    }
}

TEST_CASE("joint entropy is sub-additive and bounded") {
    for (uint64_t seed = 0; seed < 6; ++seed) {
        const size_t rank = 1 + seed % 4;
        const cq::ActivationMatrix m = correlated_matrix(8, 1024, rank, 0.05 * seed, 70 + seed);
        const cq::DiscretizedMatrix d = cq::discretize(m, cq::fit_bins(m, 16));
        for (size_t start = 0; start + 4 <= 8; start += 4) {
            std::vector<size_t> group{start, start + 1, start + 2, start + 3};
            const double joint = cq::joint_entropy(d, group);
            double sum = 0.0;
            for (size_t ch : group) sum += cq::marginal_entropy(d, ch);
            CHECK(joint <= sum + 1e-9);
            CHECK(joint >= 0.0);
            CHECK(joint <= 4.0 * std::log2(16.0) + 1e-9);
            // joint carries at least as much as any single member channel
            for (size_t ch : group) {
                CHECK(joint >= cq::marginal_entropy(d, ch) - 1e-9);
            }
        }
    }
}

TEST_CASE("entropy sweep partitions channels and reports moments") {
    const cq::ActivationMatrix m = correlated_matrix(7, 256, 2, 0.1, 19);
    const std::vector<size_t> sizes{1, 2, 3};
    const auto reports = cq::entropy_sweep(m, sizes, 8);
    REQUIRE(reports.size() == 3);

    CHECK(reports[0].num_groups == 7);
    CHECK(reports[0].dropped_channels == 0);
    CHECK(reports[1].num_groups == 3);
    CHECK(reports[1].dropped_channels == 1);
    CHECK(reports[2].num_groups == 2);
    CHECK(reports[2].dropped_channels == 1);

    for (const auto& rep : reports) {
        REQUIRE(rep.joint_bits.size() == rep.num_groups);
        REQUIRE(rep.sum_marginal_bits.size() == rep.num_groups);
        double mean = 0.0;
        for (double j : rep.joint_bits) mean += j;
        mean /= static_cast<double>(rep.num_groups);
        CHECK(rep.joint_mean == doctest::Approx(mean).epsilon(1e-12));
        double var = 0.0;
        for (double j : rep.joint_bits) var += (j - mean) * (j - mean);
        var /= static_cast<double>(rep.num_groups);
        CHECK(rep.joint_stddev == doctest::Approx(std::sqrt(var)).epsilon(1e-9));
        // at group size 1 both columns coincide exactly
        if (rep.group_size == 1) {
            CHECK(rep.joint_bits == rep.sum_marginal_bits);
        }
    }

    CHECK_THROWS_AS(cq::entropy_sweep(m, std::vector<size_t>{9}, 8), cq::domain_error);
    CHECK_THROWS_AS(cq::entropy_sweep(m, std::vector<size_t>{0}, 8), cq::domain_error);
}

TEST_CASE("correlation matrix on constructed dependencies") {
    const size_t tokens = 64;
    cq::Xoshiro256ss rng(55);
    cq::ActivationMatrix m(4, tokens);
    for (size_t t = 0; t < tokens; ++t) {
        const float x = static_cast<float>(rng.next_double() * 2.0 - 1.0);
        m.at(0, t) = x;
        m.at(1, t) = 2.0f * x + 1.0f;  // perfectly correlated
        m.at(2, t) = -x;               // perfectly anti-correlated
        m.at(3, t) = 7.0f;             // constant
    }
    const cq::CorrelationMatrix corr = cq::correlation_matrix(m, 4);
    CHECK(corr.n == 4);
    for (size_t i = 0; i < 4; ++i) CHECK(corr.at(i, i) == 1.0);
    CHECK(corr.at(0, 1) == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(corr.at(0, 2) == doctest::Approx(-1.0).epsilon(1e-9));
    CHECK(corr.at(1, 2) == doctest::Approx(-1.0).epsilon(1e-9));
    CHECK(corr.at(0, 3) == 0.0);
    CHECK(corr.degenerate == std::vector<uint8_t>{0, 0, 0, 1});
    for (size_t i = 0; i < 4; ++i) {
        for (size_t j = 0; j < 4; ++j) {
            CHECK(corr.at(i, j) == corr.at(j, i));
            CHECK(corr.at(i, j) <= 1.0);
            CHECK(corr.at(i, j) >= -1.0);
        }
    }

    CHECK_THROWS_AS(cq::correlation_matrix(m, 9), cq::shape_error);
    cq::ActivationMatrix one_tok(2, 1);
    CHECK_THROWS_AS(cq::correlation_matrix(one_tok, 2), cq::domain_error);

    // limit caps the computed block
    const cq::CorrelationMatrix head = cq::correlation_matrix(m, 2);
    CHECK(head.n == 2);
    CHECK(head.at(0, 1) == corr.at(0, 1));
}

TEST_CASE("report CSV layouts are stable") {
    const cq::ActivationMatrix m = from_rows({{0.0f, 0.0f, 1.0f, 1.0f},
                                              {0.0f, 1.0f, 0.0f, 1.0f}});
    const auto reports = cq::entropy_sweep(m, std::vector<size_t>{1, 2}, 2);
    std::ostringstream ent;
    cq::write_entropy_csv(ent, reports);
    CHECK(ent.str() ==
          "group_size,group_index,joint_bits,sum_marginal_bits\n"
          "1,0,1,1\n"
          "1,1,1,1\n"
          "2,0,2,2\n");

    cq::ActivationMatrix c(2, 4);
    for (size_t t = 0; t < 4; ++t) {
        c.at(0, t) = static_cast<float>(t);
        c.at(1, t) = static_cast<float>(t) * -1.0f;
    }
    const cq::CorrelationMatrix corr = cq::correlation_matrix(c, 2);
    std::ostringstream cc;
    cq::write_correlation_csv(cc, corr);
    CHECK(cc.str() == "1,-1\n-1,1\n");
}
