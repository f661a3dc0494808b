#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "rademu/errors.hpp"
#include "rademu/nn.hpp"

namespace rademu::nn {

// Serialized engine image: little-endian, magic "RDNT", fixed-size header,
// one 82-byte record per layer (backbone first, then each exit's head
// prefixed by attach metadata), then 8-byte-aligned raw blobs. Weight blobs
// are raw INT8; aux blobs (bias / batchnorm parameters) are raw f32.
// Byte layout is documented in FORMATS.md and is bit-exact across releases.
inline constexpr char kMagic[4] = {'R', 'D', 'N', 'T'};
inline constexpr uint16_t kFormatVersion = 1;
inline constexpr size_t kHeaderBytes = 44;
inline constexpr size_t kLayerRecordBytes = 82;
inline constexpr size_t kExitPrefixBytes = 8;

// A parsed layer. The header and record table (shapes, offsets, thetas,
// quantization parameters) are pinned at parse time; the parameter blobs
// (weights, biases, batchnorm aux) are re-read from the live image on every
// forward pass, so bit flips in those bytes propagate silently into
// inference. Conv/dense aux blobs hold INT32 biases at scale
// w_scale * in_scale; batchnorm aux holds raw f32 gamma/beta/mean/var.
struct QLayer {
    LayerKind kind = LayerKind::dense;
    ActKind act = ActKind::none;
    Shape in, out;
    uint32_t kernel = 0, stride = 1, pad = 0;
    float theta = 0.0f;
    QuantParams wq, outq;

    uint64_t w_off = 0, w_len = 0;      // int8 weights
    uint64_t aux_off = 0, aux_len = 0;  // i32 bias (conv/dense) or f32 bn params
    uint64_t record_off = 0;            // start of this record in the image

    uint32_t weight_count() const;
    uint32_t aux_count() const;  // number of 4-byte aux values expected
};

struct LayoutRange {
    uint64_t offset = 0;
    uint64_t length = 0;
    int32_t layer = -1;      // backbone layer index, or head layer index
    int32_t exit = -1;       // -1 for backbone
    uint8_t component = 0;   // 0 = weights, 1 = aux
};

struct ExitBranch {
    uint32_t attach_index = 0;  // 1-based backbone layer the head taps
    std::vector<QLayer> head;
};

struct EngineLayout {
    TaskKind task = TaskKind::classification;
    Shape input;
    uint32_t classes = 0;
    uint32_t det_grid = 0;  // 0 for classification
    QuantParams input_q;
    std::vector<QLayer> layers;
    std::vector<ExitBranch> exits;
    std::vector<LayoutRange> layout_index;  // disjoint, covers all parameter bytes
    size_t image_size = 0;
};

// Owning image + parsed layout.
struct Engine {
    std::vector<std::byte> image;
    EngineLayout layout;

    static Engine parse(std::span<const std::byte> bytes);  // throws ParseError
};

// Parse without copying; used by the scanner's per-bit re-parse.
EngineLayout parse_layout(std::span<const std::byte> bytes);

// In-memory quantized model, the serialization source.
struct QuantTensorLayer {
    QLayer spec;                  // blob offsets filled during serialize
    std::vector<int8_t> w;
    std::vector<int32_t> bias;    // conv/dense, scale wq.scale * in_scale
    std::vector<float> bn_aux;    // batchnorm gamma/beta/mean/var
    float theta = 0.0f;
    QuantParams wq, outq;
};

struct QuantModel {
    TaskKind task = TaskKind::classification;
    Shape input;
    uint32_t classes = 0;
    uint32_t det_grid = 0;
    QuantParams input_q;
    std::vector<QuantTensorLayer> layers;
    struct Exit {
        uint32_t attach_index = 0;
        std::vector<QuantTensorLayer> head;
    };
    std::vector<Exit> exits;
};

std::vector<std::byte> serialize(const QuantModel& model);

struct Prediction {
    std::vector<float> output;    // class logits, or raw detection grid
    uint32_t exit_index = 0;      // 1..E for an internal head, E+1 for the final layer
    uint32_t layers_executed = 0; // backbone layers run
};

// Reusable buffers; passing one across forward calls avoids reallocation.
struct ForwardScratch {
    std::vector<int16_t> xd, wd, cols;
    std::vector<float> x, y, hx, hy;
};

// Runs the engine on one input, reading all numeric state from `image`
// through the pinned `layout`. Early exits fire per the policy. Numeric
// garbage from corrupted bytes is never an error.
Prediction forward(const EngineLayout& layout, std::span<const std::byte> image,
                   std::span<const float> input, const ExitPolicy& policy,
                   ForwardScratch* scratch = nullptr);

// Class probabilities (classification) from a prediction's logits.
std::vector<float> class_scores(const EngineLayout& layout, const Prediction& pred);

// Decode a detection grid output into per-box objectness / class confidence.
DetectionSet decode_detections(const EngineLayout& layout, std::span<const float> raw);

}  // namespace rademu::nn
