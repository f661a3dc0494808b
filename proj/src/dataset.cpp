#include "rademu/dataset.hpp"

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "rademu/errors.hpp"

namespace rademu::nn {

namespace {

// Draws one shape into img (hw x hw) with its top-left corner at (y0, x0)
// and side length `side`, brightness `level`.
void draw_shape(std::vector<float>& img, uint32_t hw, uint32_t cls, uint32_t y0, uint32_t x0,
                uint32_t side, float level) {
    auto px = [&](uint32_t y, uint32_t x) -> float& { return img[y * hw + x]; };
    switch (cls % 4) {
        case 0:  // solid block
            for (uint32_t y = 0; y < side; ++y)
                for (uint32_t x = 0; x < side; ++x) px(y0 + y, x0 + x) = level;
            break;
        case 1:  // hollow box
            for (uint32_t i = 0; i < side; ++i) {
                px(y0, x0 + i) = level;
                px(y0 + side - 1, x0 + i) = level;
                px(y0 + i, x0) = level;
                px(y0 + i, x0 + side - 1) = level;
            }
            break;
        case 2: {  // plus
            const uint32_t mid = side / 2;
            for (uint32_t i = 0; i < side; ++i) {
                px(y0 + mid, x0 + i) = level;
                px(y0 + i, x0 + mid) = level;
            }
            break;
        }
        case 3:  // diagonal cross
            for (uint32_t i = 0; i < side; ++i) {
                px(y0 + i, x0 + i) = level;
                px(y0 + i, x0 + side - 1 - i) = level;
            }
            break;
    }
}

}  // namespace

Dataset generate_dataset(const DatasetConfig& cfg) {
    if (cfg.classes < 2 || cfg.classes > 4)
        throw ConfigError("dataset: classes must be in [2, 4] for the shape generator");
    Dataset ds;
    ds.task = cfg.task;
    ds.input = Shape{1, cfg.image_hw, cfg.image_hw};
    ds.classes = cfg.classes;
    ds.det_grid = cfg.task == TaskKind::detection ? cfg.det_grid : 0;
    ds.count = cfg.count;

    Rng rng(splitmix64(cfg.seed ^ 0xda7a5e7));
    const uint32_t hw = cfg.image_hw;
    ds.images.resize(static_cast<size_t>(cfg.count) * hw * hw);

    if (cfg.task == TaskKind::classification) {
        ds.labels.resize(cfg.count);
        for (uint32_t n = 0; n < cfg.count; ++n) {
            std::vector<float> img(hw * hw, 0.0f);
            const uint32_t cls = static_cast<uint32_t>(rng.uniform(cfg.classes));
            const uint32_t side = 5 + static_cast<uint32_t>(rng.uniform(hw - 6));  // 5 .. hw-2
            const uint32_t y0 = static_cast<uint32_t>(rng.uniform(hw - side));
            const uint32_t x0 = static_cast<uint32_t>(rng.uniform(hw - side));
            // low contrast plus background clutter keeps the task non-trivial
            const float level = 0.40f + 0.35f * static_cast<float>(rng.uniform_real());
            draw_shape(img, hw, cls, y0, x0, side, level);
            const uint32_t clutter = 2 + static_cast<uint32_t>(rng.uniform(3));
            for (uint32_t k = 0; k < clutter; ++k) {
                const uint32_t cy = static_cast<uint32_t>(rng.uniform(hw));
                const uint32_t cx = static_cast<uint32_t>(rng.uniform(hw));
                img[cy * hw + cx] += 0.3f + 0.3f * static_cast<float>(rng.uniform_real());
            }
            for (auto& v : img) {
                v += cfg.noise * static_cast<float>(rng.normal());
                v = std::clamp(v, 0.0f, 1.0f);
            }
            std::memcpy(ds.images.data() + static_cast<size_t>(n) * hw * hw, img.data(),
                        img.size() * sizeof(float));
            ds.labels[n] = cls;
        }
    } else {
        const uint32_t g = cfg.det_grid;
        const uint32_t cell = hw / g;
        ds.labels.assign(static_cast<size_t>(cfg.count) * g * g, 0);
        for (uint32_t n = 0; n < cfg.count; ++n) {
            std::vector<float> img(hw * hw, 0.0f);
            uint32_t* cells = ds.labels.data() + static_cast<size_t>(n) * g * g;
            const uint32_t objects = 1 + static_cast<uint32_t>(rng.uniform(3));
            for (uint32_t o = 0; o < objects; ++o) {
                const uint32_t gy = static_cast<uint32_t>(rng.uniform(g));
                const uint32_t gx = static_cast<uint32_t>(rng.uniform(g));
                if (cells[gy * g + gx] != 0) continue;  // occupied, skip
                const uint32_t cls = static_cast<uint32_t>(rng.uniform(cfg.classes));
                const uint32_t side = std::max<uint32_t>(3, cell - 1);
                const float level = 0.7f + 0.3f * static_cast<float>(rng.uniform_real());
                draw_shape(img, hw, cls, gy * cell, gx * cell, side, level);
                cells[gy * g + gx] = cls + 1;
            }
            for (auto& v : img) {
                v += cfg.noise * static_cast<float>(rng.normal());
                v = std::clamp(v, 0.0f, 1.0f);
            }
            std::memcpy(ds.images.data() + static_cast<size_t>(n) * hw * hw, img.data(),
                        img.size() * sizeof(float));
        }
    }
    return ds;
}

void save_dataset(const Dataset& ds, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    nlohmann::json manifest;
    manifest["task"] = ds.task == TaskKind::classification ? "classification" : "detection";
    manifest["input"] = {ds.input.c, ds.input.h, ds.input.w};
    manifest["classes"] = ds.classes;
    manifest["det_grid"] = ds.det_grid;
    manifest["count"] = ds.count;
    manifest["images"] = "images.f32";
    manifest["labels"] = "labels.u32";
    std::ofstream(dir + "/manifest.json") << manifest.dump(2) << "\n";
    std::ofstream imgs(dir + "/images.f32", std::ios::binary);
    imgs.write(reinterpret_cast<const char*>(ds.images.data()),
               static_cast<std::streamsize>(ds.images.size() * sizeof(float)));
    std::ofstream labels(dir + "/labels.u32", std::ios::binary);
    labels.write(reinterpret_cast<const char*>(ds.labels.data()),
                 static_cast<std::streamsize>(ds.labels.size() * sizeof(uint32_t)));
}

Dataset load_dataset_dir(const std::string& dir) {
    std::ifstream mf(dir + "/manifest.json");
    if (!mf) throw ConfigError("dataset: cannot open " + dir + "/manifest.json");
    nlohmann::json manifest = nlohmann::json::parse(mf);

    Dataset ds;
    ds.task = manifest.at("task") == "detection" ? TaskKind::detection : TaskKind::classification;
    auto dims = manifest.at("input");
    ds.input = Shape{dims.at(0), dims.at(1), dims.at(2)};
    ds.classes = manifest.at("classes");
    ds.det_grid = manifest.at("det_grid");
    ds.count = manifest.at("count");

    const size_t img_count = static_cast<size_t>(ds.count) * ds.input.size();
    const size_t label_count = ds.task == TaskKind::detection
                                   ? static_cast<size_t>(ds.count) * ds.det_grid * ds.det_grid
                                   : ds.count;
    ds.images.resize(img_count);
    ds.labels.resize(label_count);
    std::ifstream imgs(dir + "/" + manifest.at("images").get<std::string>(), std::ios::binary);
    if (!imgs.read(reinterpret_cast<char*>(ds.images.data()),
                   static_cast<std::streamsize>(img_count * sizeof(float))))
        throw ConfigError("dataset: images file truncated");
    std::ifstream labels(dir + "/" + manifest.at("labels").get<std::string>(), std::ios::binary);
    if (!labels.read(reinterpret_cast<char*>(ds.labels.data()),
                     static_cast<std::streamsize>(label_count * sizeof(uint32_t))))
        throw ConfigError("dataset: labels file truncated");
    return ds;
}

std::vector<uint32_t> stratified_subset(const Dataset& ds, uint32_t per_class, uint64_t seed) {
    std::vector<uint32_t> subset;
    if (ds.task == TaskKind::classification) {
        std::vector<std::vector<uint32_t>> by_class(ds.classes);
        for (uint32_t i = 0; i < ds.count; ++i) by_class[ds.labels[i] % ds.classes].push_back(i);
        Rng rng(splitmix64(seed ^ 0x5b5e7));
        for (auto& bucket : by_class) {
            for (uint32_t k = 0; k < per_class && k < bucket.size(); ++k) {
                const uint32_t j = k + static_cast<uint32_t>(rng.uniform(bucket.size() - k));
                std::swap(bucket[k], bucket[j]);
                subset.push_back(bucket[k]);
            }
        }
    } else {
        Rng rng(splitmix64(seed ^ 0x5b5e7));
        const uint32_t want = std::min(ds.count, per_class * ds.classes);
        std::vector<uint32_t> all(ds.count);
        for (uint32_t i = 0; i < ds.count; ++i) all[i] = i;
        for (uint32_t k = 0; k < want; ++k) {
            const uint32_t j = k + static_cast<uint32_t>(rng.uniform(all.size() - k));
            std::swap(all[k], all[j]);
            subset.push_back(all[k]);
        }
    }
    std::sort(subset.begin(), subset.end());
    return subset;
}

}  // namespace rademu::nn
