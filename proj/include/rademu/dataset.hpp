#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rademu/nn.hpp"
#include "rademu/rng.hpp"

namespace rademu::nn {

// Procedurally generated toy data. Classification: one grayscale shape per
// image (solid block, hollow box, plus, diagonal cross). Detection: shapes
// dropped into cells of a coarse grid, one label per cell (0 = empty,
// otherwise class + 1).
struct DatasetConfig {
    TaskKind task = TaskKind::classification;
    uint32_t count = 1024;
    uint32_t image_hw = 12;
    uint32_t classes = 4;
    uint32_t det_grid = 3;  // detection only
    float noise = 0.18f;
    uint64_t seed = 1;
};

struct Dataset {
    TaskKind task = TaskKind::classification;
    Shape input;
    uint32_t classes = 0;
    uint32_t det_grid = 0;
    uint32_t count = 0;
    std::vector<float> images;    // count * input.size()
    std::vector<uint32_t> labels; // cls: count; det: count * grid*grid

    const float* image(uint32_t i) const { return images.data() + static_cast<size_t>(i) * input.size(); }
    uint32_t label(uint32_t i) const { return labels[i]; }
    const uint32_t* cell_labels(uint32_t i) const {
        return labels.data() + static_cast<size_t>(i) * det_grid * det_grid;
    }
};

Dataset generate_dataset(const DatasetConfig& cfg);

// Raw on-disk layout: manifest.json + images.f32 + labels.u32 (little-endian).
void save_dataset(const Dataset& ds, const std::string& dir);
Dataset load_dataset_dir(const std::string& dir);

// Deterministic stratified subset (per-class for classification) used by the
// per-bit sensitivity scans.
std::vector<uint32_t> stratified_subset(const Dataset& ds, uint32_t per_class, uint64_t seed);

}  // namespace rademu::nn
