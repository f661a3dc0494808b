#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "rademu/dataset.hpp"
#include "rademu/engine.hpp"
#include "rademu/injector.hpp"
#include "rademu/metrics.hpp"

namespace rademu::scan {

// Per-bit performance drop (points) from flipping that bit, measured on a
// fixed stratified evaluation subset. Parse failures count as a full drop to
// zero performance (a detectable crash).
struct SensitivityMap {
    double baseline_pts = 0.0;  // clean performance on the scan subset
    uint32_t page_size = 4096;
    size_t image_bytes = 0;
    std::vector<float> delta_pts;  // one entry per bit, size image_bytes * 8

    size_t bit_count() const { return delta_pts.size(); }
    // count of >= threshold bits per byte
    std::vector<uint32_t> sensitive_per_byte(double threshold_pts) const;
};

struct ScanOptions {
    uint32_t subset_per_class = 16;  // 16 x 4 classes = 64 samples
    uint64_t subset_seed = 17;
    uint32_t threads = 0;  // 0 = hardware concurrency, capped at 8
    nn::ExitPolicy policy;
};

// Flip - evaluate - revert for every bit of the image. Non-destructive: the
// caller's image is byte-identical afterwards (workers flip private copies).
SensitivityMap sensitivity_scan(const std::vector<std::byte>& image, const nn::Dataset& eval_set,
                                const ScanOptions& opts = {});

// Contiguous byte range of the given length with the highest count of
// >= threshold sensitive bits.
struct ByteRange {
    uint64_t lo = 0;
    uint64_t hi = 0;  // exclusive
};
ByteRange select_sensitive_range(const SensitivityMap& map, uint64_t length_bytes,
                                 double threshold_pts = 10.0);

// Fraction of >= threshold bits among the bits attributed to each backbone
// layer (via the layout index); helper for shallow-vs-deep comparisons.
std::vector<double> layer_sensitive_density(const SensitivityMap& map,
                                            const nn::EngineLayout& layout,
                                            double threshold_pts = 10.0);

// --- campaigns -----------------------------------------------------------

enum class InjectionMode {
    correlated,      // DRAM-mapped SEU+MCU events through the full pipeline
    uniform_random,  // same bit count, uniformly random image bits
};

struct CampaignConfig {
    uint64_t total_bits = 100;
    uint32_t rounds = 500;
    InjectionMode mode = InjectionMode::correlated;

    // sensitive-area campaigns restrict flips to this byte window
    std::optional<ByteRange> window;

    dram::DramConfig dram;
    dram::SchemeId scheme = dram::SchemeId::s1;
    rad::ErrorModelConfig error_model;
    double fragmentation_prob = 0.5;
    uint64_t physical_space = 0;  // 0 = 4x ROI rounded to pages
    uint64_t roi_base = 0x7f0000000000ULL;

    uint64_t seed = 1;
    nn::ExitPolicy policy;
    double crash_threshold_pts = 10.0;
};

struct RoundRecord {
    uint32_t round = 0;
    uint64_t seed = 0;
    double performance_pts = 0.0;
    double drop_pts = 0.0;
    bool crash = false;
    double mean_exit_index = 0.0;
    double mean_layers = 0.0;
};

struct CampaignResult {
    double baseline_pts = 0.0;
    double crash_threshold_pts = 10.0;
    std::vector<RoundRecord> rounds;

    double mean_pts() const;
    double min_pts() const;
    double max_pts() const;
};

// Per round: rebuild the block map, plan, flip the live engine image,
// evaluate through the pinned layout, revert. The image is byte-identical
// after every round.
CampaignResult run_campaign(nn::Engine& engine, const nn::Dataset& eval_set,
                            const CampaignConfig& cfg);

double crash_rate(const CampaignResult& result);

// CSV / JSON emission (column contract in FORMATS.md).
void write_rounds_csv(const CampaignResult& result, const std::string& path);
void write_summary_json(const CampaignResult& result, const CampaignConfig& cfg,
                        const std::string& variant, const std::string& path);
void write_sensitivity_csv(const SensitivityMap& map, const nn::EngineLayout& layout,
                           const std::string& path);
void write_page_grid_csv(const SensitivityMap& map, uint32_t bin_bytes, double threshold_pts,
                         const std::string& path);

}  // namespace rademu::scan
