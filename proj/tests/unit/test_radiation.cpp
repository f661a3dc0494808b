#include <doctest.h>

#include <cmath>
#include <map>

#include "helpers.hpp"
#include "rademu/radiation.hpp"

using namespace rademu;
using namespace rademu::rad;

TEST_CASE("default error model matches the documented frequencies") {
    ErrorModelConfig m = ErrorModelConfig::defaults();
    CHECK_NOTHROW(m.validate());
    CHECK(m.multiplicity_pmf[2] == doctest::Approx(0.12));
    CHECK(m.multiplicity_pmf[3] == doctest::Approx(0.02));
    double tail = 0.0;
    for (int s = 4; s <= 8; ++s) tail += m.multiplicity_pmf[s];
    CHECK(tail == doctest::Approx(0.01));
    CHECK(m.multiplicity_pmf[1] == doctest::Approx(0.85));
    CHECK(m.wordline_prob == doctest::Approx(0.8));
}

TEST_CASE("model validation") {
    ErrorModelConfig m = ErrorModelConfig::defaults();
    m.wordline_prob = 0.7;  // no longer sums to 1 with bitline 0.2
    CHECK_THROWS_AS(m.validate(), ConfigError);
    m = ErrorModelConfig::defaults();
    m.multiplicity_pmf[1] += 0.5;
    CHECK_THROWS_AS(m.validate(), ConfigError);
}

TEST_CASE("degenerate pmfs pin the multiplicity") {
    Rng rng(1);
    ErrorModelConfig one = ErrorModelConfig::defaults();
    one.multiplicity_pmf.fill(0.0);
    one.multiplicity_pmf[1] = 1.0;
    for (int i = 0; i < 200; ++i) CHECK(sample_multiplicity(one, rng) == 1);

    ErrorModelConfig eight = ErrorModelConfig::defaults();
    eight.multiplicity_pmf.fill(0.0);
    eight.multiplicity_pmf[8] = 1.0;
    for (int i = 0; i < 200; ++i) CHECK(sample_multiplicity(eight, rng) == 8);
}

TEST_CASE("sampled multiplicities reproduce the pmf") {
    ErrorModelConfig m = ErrorModelConfig::defaults();
    Rng rng(2024);
    const int n = 100000;
    std::map<uint32_t, int> hist;
    for (int i = 0; i < n; ++i) ++hist[sample_multiplicity(m, rng)];
    CHECK(std::abs(hist[2] / double(n) - 0.12) < 0.01);
    CHECK(std::abs(hist[3] / double(n) - 0.02) < 0.005);
    int over3 = 0;
    for (int s = 4; s <= 8; ++s) over3 += hist[s];
    CHECK(std::abs(over3 / double(n) - 0.01) < 0.005);
}

TEST_CASE("clusters: degenerate and forced cases") {
    const dram::DramConfig cfg = testcfg::scaled();
    ErrorModelConfig m = ErrorModelConfig::defaults();
    Rng rng(5);

    dram::CellCoord ref;
    ref.row = 10;
    ref.column = 3;
    ref.bank = 1;

    FlipCluster single = sample_cluster(ref, 1, m, cfg, rng);
    CHECK(single.cells.size() == 1);
    CHECK(single.cells[0] == ref);

    // forced wordline growth: two cells in the same row, adjacent columns
    ErrorModelConfig wl = m;
    wl.wordline_prob = 1.0;
    wl.bitline_prob = 0.0;
    for (int i = 0; i < 100; ++i) {
        FlipCluster two = sample_cluster(ref, 2, wl, cfg, rng);
        REQUIRE(two.cells.size() == 2);
        CHECK(two.cells[1].row == ref.row);
        CHECK(two.cells[1].column == ref.column + 1);
    }
}

TEST_CASE("multiplicity beyond the clipped box is a model error") {
    const dram::DramConfig cfg = testcfg::scaled();
    ErrorModelConfig m = ErrorModelConfig::defaults();
    Rng rng(6);
    dram::CellCoord corner;
    corner.row = cfg.rows - 1;          // one row left
    corner.column = cfg.column_blocks() - 2;  // two columns left
    CHECK_THROWS_AS(sample_cluster(corner, 3, m, cfg, rng), ConfigError);

    ErrorModelConfig big = m;
    CHECK_THROWS_AS(sample_cluster(dram::CellCoord{}, 11, big, cfg, rng), ConfigError);
}

TEST_CASE("cluster invariants hold over many samples") {
    const dram::DramConfig cfg = testcfg::scaled();
    ErrorModelConfig m = ErrorModelConfig::defaults();
    Rng rng(7);
    for (int i = 0; i < 20000; ++i) {
        dram::CellCoord ref;
        ref.row = rng.uniform(cfg.rows);
        ref.column = rng.uniform(cfg.column_blocks());
        ref.channel = static_cast<uint32_t>(rng.uniform(cfg.channels));
        ref.rank = static_cast<uint32_t>(rng.uniform(cfg.ranks));
        ref.bank = static_cast<uint32_t>(rng.uniform(cfg.banks));
        ref.bit_in_block = static_cast<uint32_t>(rng.uniform(cfg.block_bits()));

        uint32_t mult = sample_multiplicity(m, rng);
        const uint64_t rows_left = std::min<uint64_t>(cfg.rows - ref.row, m.max_row_extent);
        const uint64_t cols_left =
            std::min<uint64_t>(cfg.column_blocks() - ref.column, m.max_col_extent);
        if (rows_left * cols_left < mult) continue;  // the injector resamples these

        FlipCluster cl = sample_cluster(ref, mult, m, cfg, rng);
        REQUIRE(cl.cells.size() == mult);
        for (size_t a = 0; a < cl.cells.size(); ++a) {
            const auto& c = cl.cells[a];
            CHECK(c.channel == ref.channel);
            CHECK(c.rank == ref.rank);
            CHECK(c.bank == ref.bank);
            CHECK(c.bit_in_block == ref.bit_in_block);
            CHECK(c.row >= ref.row);
            CHECK(c.row <= ref.row + 1);
            CHECK(c.column >= ref.column);
            CHECK(c.column < ref.column + 5);
            for (size_t b = a + 1; b < cl.cells.size(); ++b)
                CHECK(!(c == cl.cells[b]));  // all distinct
        }
        // connected under 8-adjacency: every cell after the first touches one
        for (size_t a = 1; a < cl.cells.size(); ++a) {
            bool adjacent = false;
            for (size_t b = 0; b < cl.cells.size(); ++b) {
                if (a == b) continue;
                const int64_t dr = static_cast<int64_t>(cl.cells[a].row) - static_cast<int64_t>(cl.cells[b].row);
                const int64_t dc =
                    static_cast<int64_t>(cl.cells[a].column) - static_cast<int64_t>(cl.cells[b].column);
                if (std::abs(dr) <= 1 && std::abs(dc) <= 1) adjacent = true;
            }
            CHECK(adjacent);
        }
    }
}

TEST_CASE("two-cell orientation ratio is 80:20") {
    const dram::DramConfig cfg = testcfg::scaled();
    ErrorModelConfig m = ErrorModelConfig::defaults();
    Rng rng(8);
    int same_row = 0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
        dram::CellCoord ref;
        // interior references so neither orientation is clipped
        ref.row = 1 + rng.uniform(cfg.rows - 2);
        ref.column = 1 + rng.uniform(cfg.column_blocks() - 6);
        FlipCluster two = sample_cluster(ref, 2, m, cfg, rng);
        same_row += (two.cells[1].row == ref.row);
    }
    CHECK(std::abs(same_row / double(n) - 0.8) < 0.02);
}

TEST_CASE("event mixes meet the budget exactly") {
    ErrorModelConfig m = ErrorModelConfig::defaults();
    Rng rng(9);

    CHECK(compose_event_mix(1, m, rng) == std::vector<uint32_t>{1});

    ErrorModelConfig singles = m;
    singles.multiplicity_pmf.fill(0.0);
    singles.multiplicity_pmf[1] = 1.0;
    CHECK(compose_event_mix(5, singles, rng) == std::vector<uint32_t>(5, 1));

    for (int trial = 0; trial < 500; ++trial) {
        const auto mix = compose_event_mix(200, m, rng);
        uint64_t sum = 0;
        for (uint32_t s : mix) {
            sum += s;
            CHECK(s >= 1);
            CHECK(s <= 8);
        }
        CHECK(sum == 200);
    }

    // size frequencies track the pmf over many draws
    std::map<uint32_t, uint64_t> hist;
    uint64_t events = 0;
    for (int trial = 0; trial < 2000; ++trial)
        for (uint32_t s : compose_event_mix(200, m, rng)) {
            ++hist[s];
            ++events;
        }
    CHECK(std::abs(hist[2] / double(events) - 0.12) < 0.01);
}

TEST_CASE("determinism: same seed, same stream") {
    ErrorModelConfig m = ErrorModelConfig::defaults();
    const dram::DramConfig cfg = testcfg::scaled();
    for (uint64_t seed : {1ULL, 99ULL}) {
        Rng a(seed), b(seed);
        for (int i = 0; i < 500; ++i)
            CHECK(sample_multiplicity(m, a) == sample_multiplicity(m, b));
        dram::CellCoord ref;
        ref.row = 5;
        ref.column = 5;
        FlipCluster ca = sample_cluster(ref, 4, m, cfg, a);
        FlipCluster cb = sample_cluster(ref, 4, m, cfg, b);
        REQUIRE(ca.cells.size() == cb.cells.size());
        for (size_t i = 0; i < ca.cells.size(); ++i) CHECK(ca.cells[i] == cb.cells[i]);
    }
}

TEST_CASE("expected daily errors") {
    // 40 MB footprint at the recorded per-bit daily rate
    const double bits = 40.0 * 8.0 * 1024.0 * 1024.0;
    const double expected = expected_daily_errors(bits, 4.76e-7);
    CHECK(std::abs(expected - 159.7) < 0.1);
    CHECK(expected_daily_errors(0.0, 4.76e-7) == 0.0);
    CHECK(expected_daily_errors(1.0, 1.0) == 1.0);
    CHECK_THROWS_AS(expected_daily_errors(-1.0, 1.0), std::invalid_argument);
}
