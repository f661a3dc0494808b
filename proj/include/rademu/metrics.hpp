#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "rademu/dataset.hpp"
#include "rademu/engine.hpp"

namespace rademu::nn {

struct EvalOptions {
    ExitPolicy policy;
    const std::vector<uint32_t>* subset = nullptr;  // indices into the dataset
};

struct EvalResult {
    double performance_pts = 0.0;  // accuracy % or mAP %
    double mean_exit_index = 0.0;
    double mean_layers = 0.0;
    uint32_t samples = 0;
};

// Runs the engine over the dataset (or a subset) through the pinned layout.
EvalResult evaluate(const EngineLayout& layout, std::span<const std::byte> image,
                    const Dataset& ds, const EvalOptions& opts = {});

inline constexpr float kDetectionObjectness = 0.25f;

// Scored detections plus the ground-truth census, enough for mAP.
struct DetectionTally {
    struct Outcome {
        float confidence = 0.0f;
        uint32_t cls = 0;
        bool matched = false;
    };
    std::vector<Outcome> outcomes;
    std::vector<uint64_t> gt_per_class;
};

// Scores one raw grid output against per-cell labels (cell value 0 = empty,
// otherwise class + 1) and appends into the tally.
void collect_detections(const float* raw, uint32_t grid, uint32_t classes,
                        const uint32_t* cell_labels, DetectionTally& tally);

// VOC-style mAP (%): per class, AP = sum of precision at each matched
// detection over the ground-truth count.
double map_percent(const DetectionTally& tally);

// Two-sample Kolmogorov-Smirnov statistic: max vertical distance between the
// empirical CDFs.
double ks_statistic(std::vector<float> a, std::vector<float> b);

}  // namespace rademu::nn
