#pragma once

#include <cstdint>
#include <vector>

#include "rademu/dataset.hpp"
#include "rademu/engine.hpp"
#include "rademu/errors.hpp"
#include "rademu/nn.hpp"

namespace rademu::nn {

// Float-precision layer used for training and calibration.
struct FloatLayer {
    LayerKind kind = LayerKind::dense;
    ActKind act = ActKind::none;
    Shape in, out;
    uint32_t kernel = 0, stride = 1, pad = 0;
    float theta = 0.0f;  // set by calibrate_theta

    std::vector<float> w, b;  // dense/conv
    std::vector<float> gamma, beta, run_mean, run_var;  // batchnorm

    // optimizer state
    std::vector<float> vw, vb, vgamma, vbeta;
};

struct FloatModel {
    TaskKind task = TaskKind::classification;
    Shape input;
    uint32_t classes = 0;
    uint32_t det_grid = 0;
    std::vector<FloatLayer> layers;
    struct Exit {
        uint32_t attach_index = 0;
        std::vector<FloatLayer> head;
    };
    std::vector<Exit> exits;
};

// Topology description; layers come out as conv+bn(+pool) stages followed
// by dense layers and the output layer. Hidden activations use `act`
// (relu during training for the relu/clip variants, logclip trains as an
// unclipped log — the theta bound is calibrated afterwards).
struct ConvStage {
    uint32_t filters = 8;
    uint32_t stride = 1;
    bool pool = true;  // 2x2 max pool after the stage
};

struct BackboneConfig {
    TaskKind task = TaskKind::classification;
    Shape input{1, 12, 12};
    uint32_t classes = 4;
    uint32_t det_grid = 3;
    std::vector<ConvStage> stages{{8, 1, true}, {12, 1, true}};
    std::vector<uint32_t> dense_units{48};
    uint32_t kernel = 3;
    uint32_t head_channels = 8;  // IC/ID head conv width
    ActKind act = ActKind::relu;
    std::vector<uint32_t> exit_attach;  // backbone layer indices for IC/ID heads
    uint64_t seed = 1;
};

struct TrainConfig {
    uint32_t epochs = 40;
    uint32_t batch = 32;
    float lr = 0.05f;
    float momentum = 0.9f;
    float lr_decay = 0.95f;  // per epoch
    uint32_t exit_epochs = 25;
    float exit_lr = 0.05f;
};

FloatModel build_backbone(const BackboneConfig& cfg);

struct TrainReport {
    std::vector<double> epoch_loss;
    double final_loss = 0.0;
};

// Typical supervised training of the backbone; throws TrainingError on
// divergence (non-finite loss).
TrainReport train_backbone(FloatModel& model, const Dataset& train, const TrainConfig& cfg,
                           uint64_t seed);

// Attaches and trains exit heads with the backbone frozen. The reported
// total loss is exactly the sum of the per-exit losses.
struct ExitTrainReport {
    std::vector<double> per_exit_loss;  // final epoch, per exit
    double total_loss = 0.0;
};
ExitTrainReport finetune_exits(FloatModel& model, const Dataset& train, const TrainConfig& cfg,
                               uint64_t seed);

// Per-layer theta := max pre-activation input observed over the calibration
// set (backbone and exit heads). Throws ConfigError on an empty set.
void calibrate_theta(FloatModel& model, const Dataset& calib,
                     const std::vector<uint32_t>& indices);

// Folds every batchnorm that directly follows an unactivated convolution
// into that convolution (weights and bias), moving the batchnorm's
// activation and theta onto it. Eval-mode outputs are unchanged.
FloatModel fold_batchnorm(const FloatModel& model);

// Float evaluation (used for training sanity and quantization-drop checks).
double evaluate_float(const FloatModel& model, const Dataset& ds);

// Post-training quantization to the serialized INT8 form. Activation ranges
// are observed over the calibration subset.
QuantModel quantize(const FloatModel& model, const Dataset& calib,
                    const std::vector<uint32_t>& indices);

}  // namespace rademu::nn
