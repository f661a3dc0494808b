#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "rademu/dram.hpp"
#include "rademu/rng.hpp"

namespace rademu::rad {

// Statistical model of radiation-induced upsets: event multiplicity pmf plus
// the spatial growth parameters of multi-cell clusters.
struct ErrorModelConfig {
    // pmf over cluster sizes; index 0 unused, support is {1..8}.
    std::array<double, 9> multiplicity_pmf{};
    double wordline_prob = 0.8;
    double bitline_prob = 0.2;
    uint32_t max_row_extent = 2;   // rows {r0 .. r0+max_row_extent-1}
    uint32_t max_col_extent = 5;   // columns [c0, c0+max_col_extent-1]
    uint64_t rng_seed = 0;

    static ErrorModelConfig defaults();
    void validate() const;  // throws ConfigError
    uint32_t max_multiplicity() const;
};

// One upset event: a set of distinct cells sharing channel/rank/bank and
// bit position, confined to the extent box anchored at the reference.
struct FlipCluster {
    std::vector<dram::CellCoord> cells;
    dram::CellCoord reference;
    uint32_t multiplicity = 0;
};

uint32_t sample_multiplicity(const ErrorModelConfig& model, Rng& rng);

// Grows a connected cluster from `reference`. Each step prefers a wordline
// neighbor (same row, adjacent column) with wordline_prob, otherwise a
// bitline/diagonal neighbor. Throws ConfigError if the device-clipped extent
// box cannot hold `multiplicity` cells.
FlipCluster sample_cluster(const dram::CellCoord& reference, uint32_t multiplicity,
                           const ErrorModelConfig& model, const dram::DramConfig& cfg, Rng& rng);

// Cluster sizes summing exactly to total_bits; the remainder that no pmf
// draw fits is filled with single-bit events.
std::vector<uint32_t> compose_event_mix(uint64_t total_bits, const ErrorModelConfig& model,
                                        Rng& rng);

double expected_daily_errors(double footprint_bits, double rate_per_bit_per_day);

}  // namespace rademu::rad
