#include "rademu/radiation.hpp"

#include <algorithm>
#include <cmath>

namespace rademu::rad {

ErrorModelConfig ErrorModelConfig::defaults() {
    ErrorModelConfig m;
    // 2-bit 12%, 3-bit 2%, >3-bit 1% total spread uniformly over 4..8,
    // remainder single-bit.
    m.multiplicity_pmf = {0.0, 0.85, 0.12, 0.02, 0.002, 0.002, 0.002, 0.002, 0.002};
    return m;
}

uint32_t ErrorModelConfig::max_multiplicity() const {
    for (uint32_t s = 8; s >= 1; --s)
        if (multiplicity_pmf[s] > 0.0) return s;
    return 0;
}

void ErrorModelConfig::validate() const {
    double sum = 0.0;
    for (uint32_t s = 1; s <= 8; ++s) {
        if (multiplicity_pmf[s] < 0.0) throw ConfigError("error model: negative pmf mass");
        sum += multiplicity_pmf[s];
    }
    if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("error model: multiplicity pmf must sum to 1");
    if (std::abs(wordline_prob + bitline_prob - 1.0) > 1e-9)
        throw ConfigError("error model: wordline_prob + bitline_prob must equal 1");
    if (wordline_prob < 0.0 || bitline_prob < 0.0)
        throw ConfigError("error model: negative orientation probability");
    if (max_row_extent == 0 || max_col_extent == 0)
        throw ConfigError("error model: extent box must be non-empty");
    if (max_multiplicity() > max_row_extent * max_col_extent)
        throw ConfigError("error model: pmf support exceeds extent box capacity");
}

uint32_t sample_multiplicity(const ErrorModelConfig& model, Rng& rng) {
    const double u = rng.uniform_real();
    double cum = 0.0;
    for (uint32_t s = 1; s <= 8; ++s) {
        cum += model.multiplicity_pmf[s];
        if (u < cum) return s;
    }
    return model.max_multiplicity();
}

FlipCluster sample_cluster(const dram::CellCoord& reference, uint32_t multiplicity,
                           const ErrorModelConfig& model, const dram::DramConfig& cfg, Rng& rng) {
    dram::check_cell_bounds(reference, cfg);
    if (multiplicity < 1) throw ConfigError("sample_cluster: multiplicity must be >= 1");

    // Extent box anchored at the reference, clipped to device bounds.
    const uint64_t row_lo = reference.row;
    const uint64_t row_hi = std::min(reference.row + model.max_row_extent - 1, cfg.rows - 1);
    const uint64_t col_lo = reference.column;
    const uint64_t col_hi =
        std::min(reference.column + model.max_col_extent - 1, cfg.column_blocks() - 1);
    const uint64_t box_cells = (row_hi - row_lo + 1) * (col_hi - col_lo + 1);
    if (box_cells < multiplicity)
        throw ConfigError("sample_cluster: multiplicity unreachable within the clipped extent box");

    const uint32_t box_cols = static_cast<uint32_t>(col_hi - col_lo + 1);
    auto idx = [&](uint64_t r, uint64_t c) {
        return static_cast<uint32_t>((r - row_lo) * box_cols + (c - col_lo));
    };
    std::vector<uint8_t> occupied(static_cast<size_t>(box_cells), 0);

    FlipCluster cluster;
    cluster.reference = reference;
    cluster.multiplicity = multiplicity;
    cluster.cells.push_back(reference);
    occupied[idx(reference.row, reference.column)] = 1;

    auto collect = [&](bool wordline, std::vector<dram::CellCoord>& out) {
        out.clear();
        for (const auto& cell : cluster.cells) {
            const int64_t dr_lo = wordline ? 0 : -1;
            const int64_t dr_hi = wordline ? 0 : 1;
            for (int64_t dr = dr_lo; dr <= dr_hi; ++dr) {
                if (!wordline && dr == 0) continue;  // bitline/diagonal steps change the row
                for (int64_t dc = -1; dc <= 1; ++dc) {
                    if (wordline && dc == 0) continue;
                    const int64_t r = static_cast<int64_t>(cell.row) + dr;
                    const int64_t c = static_cast<int64_t>(cell.column) + dc;
                    if (r < static_cast<int64_t>(row_lo) || r > static_cast<int64_t>(row_hi))
                        continue;
                    if (c < static_cast<int64_t>(col_lo) || c > static_cast<int64_t>(col_hi))
                        continue;
                    if (occupied[idx(r, c)]) continue;
                    dram::CellCoord nc = reference;
                    nc.row = static_cast<uint64_t>(r);
                    nc.column = static_cast<uint64_t>(c);
                    out.push_back(nc);
                }
            }
        }
        // de-duplicate (a free cell can neighbor several cluster cells)
        std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
            return a.row != b.row ? a.row < b.row : a.column < b.column;
        });
        out.erase(std::unique(out.begin(), out.end()), out.end());
    };

    std::vector<dram::CellCoord> candidates;
    while (cluster.cells.size() < multiplicity) {
        const bool wordline = rng.bernoulli(model.wordline_prob);
        collect(wordline, candidates);
        if (candidates.empty()) collect(!wordline, candidates);
        // A connected set in a 2-row strip always has a free in-box
        // 8-neighbor while capacity remains, so candidates is non-empty here.
        const auto& pick = candidates[rng.uniform(candidates.size())];
        occupied[idx(pick.row, pick.column)] = 1;
        cluster.cells.push_back(pick);
    }
    return cluster;
}

std::vector<uint32_t> compose_event_mix(uint64_t total_bits, const ErrorModelConfig& model,
                                        Rng& rng) {
    std::vector<uint32_t> sizes;
    uint64_t remaining = total_bits;
    while (remaining > 0) {
        const uint32_t s = sample_multiplicity(model, rng);
        if (s <= remaining) {
            sizes.push_back(s);
            remaining -= s;
        } else {
            // budget remainder becomes single-bit events
            for (uint64_t i = 0; i < remaining; ++i) sizes.push_back(1);
            remaining = 0;
        }
    }
    return sizes;
}

double expected_daily_errors(double footprint_bits, double rate_per_bit_per_day) {
    if (footprint_bits < 0.0 || rate_per_bit_per_day < 0.0)
        throw std::invalid_argument("expected_daily_errors: negative argument");
    return footprint_bits * rate_per_bit_per_day;
}

}  // namespace rademu::rad
