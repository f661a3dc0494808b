#include "rademu/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace rademu::nn {

void collect_detections(const float* raw, uint32_t grid, uint32_t classes,
                        const uint32_t* cell_labels, DetectionTally& tally) {
    if (tally.gt_per_class.size() != classes) tally.gt_per_class.assign(classes, 0);
    const uint32_t cells = grid * grid;
    const uint32_t stride = 1 + classes;
    std::vector<float> cls(classes);
    for (uint32_t i = 0; i < cells; ++i) {
        if (cell_labels[i] != 0) ++tally.gt_per_class[cell_labels[i] - 1];
        float o = sigmoid(raw[i * stride]);
        if (std::isnan(o)) o = 0.0f;
        if (o <= kDetectionObjectness) continue;
        for (uint32_t k = 0; k < classes; ++k) cls[k] = raw[i * stride + 1 + k];
        softmax_inplace(cls);
        const uint32_t best =
            static_cast<uint32_t>(std::max_element(cls.begin(), cls.end()) - cls.begin());
        DetectionTally::Outcome oc;
        oc.confidence = o * cls[best];
        oc.cls = best;
        oc.matched = (cell_labels[i] != 0 && cell_labels[i] - 1 == best);
        tally.outcomes.push_back(oc);
    }
}

double map_percent(const DetectionTally& tally) {
    const uint32_t classes = static_cast<uint32_t>(tally.gt_per_class.size());
    double ap_sum = 0.0;
    uint32_t scored = 0;
    std::vector<DetectionTally::Outcome> sorted = tally.outcomes;
    std::sort(sorted.begin(), sorted.end(),
              [](const auto& a, const auto& b) { return a.confidence > b.confidence; });
    for (uint32_t c = 0; c < classes; ++c) {
        if (tally.gt_per_class[c] == 0) continue;
        ++scored;
        uint64_t tp = 0, seen = 0;
        double ap = 0.0;
        for (const auto& oc : sorted) {
            if (oc.cls != c) continue;
            ++seen;
            if (oc.matched) {
                ++tp;
                ap += static_cast<double>(tp) / static_cast<double>(seen);
            }
        }
        ap /= static_cast<double>(tally.gt_per_class[c]);
        ap_sum += ap;
    }
    return scored == 0 ? 0.0 : 100.0 * ap_sum / scored;
}

EvalResult evaluate(const EngineLayout& layout, std::span<const std::byte> image,
                    const Dataset& ds, const EvalOptions& opts) {
    EvalResult res;
    double exit_sum = 0.0, layer_sum = 0.0;
    ForwardScratch scratch;

    auto run_one = [&](uint32_t i, uint32_t& hits, DetectionTally& tally) {
        const Prediction pred =
            forward(layout, image, std::span<const float>(ds.image(i), ds.input.size()),
                    opts.policy, &scratch);
        exit_sum += pred.exit_index;
        layer_sum += pred.layers_executed;
        if (layout.task == TaskKind::classification) {
            const uint32_t p = static_cast<uint32_t>(
                std::max_element(pred.output.begin(), pred.output.end()) - pred.output.begin());
            hits += (p == ds.label(i));
        } else {
            collect_detections(pred.output.data(), layout.det_grid, layout.classes,
                               ds.cell_labels(i), tally);
        }
        ++res.samples;
    };

    uint32_t hits = 0;
    DetectionTally tally;
    if (opts.subset) {
        for (uint32_t i : *opts.subset) run_one(i, hits, tally);
    } else {
        for (uint32_t i = 0; i < ds.count; ++i) run_one(i, hits, tally);
    }
    if (res.samples == 0) return res;

    res.performance_pts = layout.task == TaskKind::classification
                              ? 100.0 * hits / res.samples
                              : map_percent(tally);
    res.mean_exit_index = exit_sum / res.samples;
    res.mean_layers = layer_sum / res.samples;
    return res;
}

double ks_statistic(std::vector<float> a, std::vector<float> b) {
    if (a.empty() || b.empty()) throw std::invalid_argument("ks_statistic: empty sample");
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    size_t i = 0, j = 0;
    double d = 0.0;
    while (i < a.size() && j < b.size()) {
        const float x = std::min(a[i], b[j]);
        while (i < a.size() && a[i] <= x) ++i;
        while (j < b.size() && b[j] <= x) ++j;
        const double fa = static_cast<double>(i) / a.size();
        const double fb = static_cast<double>(j) / b.size();
        d = std::max(d, std::abs(fa - fb));
    }
    return d;
}

}  // namespace rademu::nn
