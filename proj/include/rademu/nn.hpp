#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <vector>

namespace rademu::nn {

enum class TaskKind : uint8_t { classification = 0, detection = 1 };
enum class LayerKind : uint8_t { dense = 0, conv = 1, batchnorm = 2, pool = 3 };
enum class ActKind : uint8_t { none = 0, relu = 1, clip = 2, logclip = 3 };

struct Shape {
    uint32_t c = 1, h = 1, w = 1;
    uint32_t size() const { return c * h * w; }
    bool operator==(const Shape&) const = default;
};

struct QuantParams {
    float scale = 1.0f;
    int32_t zero_point = 0;
};

// log(1+x) for x >= 0. Polynomial reconstruction from the float exponent;
// accurate to ~2e-6 absolute, far below one 8-bit requantization step, and
// branch-free so activation loops vectorize. Out-of-domain inputs (negative,
// NaN, inf — possible in corrupted engines) saturate to the domain edges.
// Fixed per release.
inline float fast_log1p(float x) {
    float m = 1.0f + x;
    m = (m == m) ? m : 1.0f;               // NaN -> log(1) = 0
    m = m < 1.0f ? 1.0f : m;
    m = m > 3.4e38f ? 3.4e38f : m;         // inf saturates
    uint32_t bits;
    std::memcpy(&bits, &m, 4);
    const int e = static_cast<int>(bits >> 23) - 127;
    bits = (bits & 0x007fffffu) | 0x3f800000u;  // mantissa in [1, 2)
    float f;
    std::memcpy(&f, &bits, 4);
    // least-squares fit of log2(f) on [1, 2) constrained to p(1) = 1, so the
    // reconstruction is continuous and increasing across octave boundaries
    const float t = f - 1.0f;
    float p = -0.0251255736f;
    p = p * t + 0.1193814105f;
    p = p * t + (-0.2748323213f);
    p = p * t + 0.4557429336f;
    p = p * t + (-0.7176681332f);
    p = p * t + 1.4425016839f;
    p = p * t;
    return (static_cast<float>(e) + p) * 0.6931471806f;
}

// Bounded logarithmic activation: 0 outside (0, theta], log(x+1) inside.
// Natural log; output range is [0, log(theta+1)].
inline float logclip(float x, float theta) {
    if (!(x > 0.0f) || x > theta) return 0.0f;  // NaN input lands here
    return fast_log1p(x);
}

inline float relu_clip(float x, float theta) {
    if (!(x > 0.0f)) return 0.0f;
    return x < theta ? x : theta;
}

inline float apply_activation(ActKind act, float x, float theta) {
    switch (act) {
        case ActKind::none: return x;
        case ActKind::relu: return x > 0.0f ? x : 0.0f;
        case ActKind::clip: return relu_clip(x, theta);
        case ActKind::logclip: return logclip(x, theta);
    }
    return x;
}

// Saturating affine quantization. Tolerates corrupted scales and zero points
// (zero, negative, NaN, inf) without undefined behavior: NaN quantizes to
// real zero, overflow saturates. Rounding is floor(t + 0.5), fixed per
// release.
inline int8_t quantize_scaled(float x, float inv_scale, int32_t zp) {
    float t = x * inv_scale;
    if (std::isnan(t)) t = 0.0f;
    t = t < -1e9f ? -1e9f : (t > 1e9f ? 1e9f : t);
    const int64_t q = static_cast<int64_t>(std::floor(t + 0.5f)) + zp;
    return static_cast<int8_t>(std::clamp<int64_t>(q, -128, 127));
}

inline int8_t quantize_value(float x, float scale, int32_t zp) {
    return quantize_scaled(x, 1.0f / scale, zp);
}

// Branch-free fast path for sane zero points: returns (q - zp) as a float,
// identical to quantize_scaled for |zp| <= 256. lo = -128 - zp, hi = 127 - zp.
inline float quantize_diff(float x, float inv_scale, float lo, float hi) {
    float t = x * inv_scale;
    t = (t == t) ? t : 0.0f;  // NaN -> real zero
    float r = std::floor(t + 0.5f);
    r = r < lo ? lo : (r > hi ? hi : r);
    return r;
}

inline float dequantize_value(int32_t q, float scale, int32_t zp) {
    return static_cast<float>(q - zp) * scale;
}

struct ExitPolicy {
    bool enabled = false;
    float threshold = 1.0f;       // T: confidence needed to stop early
    float theta_presence = 0.5f;  // objectness cutoff for detection exits
};

// Pre-NMS detector output: per predicted box, objectness o and the class
// confidence c (max class probability).
struct DetectionSet {
    std::vector<float> objectness;
    std::vector<float> class_conf;
};

inline bool should_exit_classifier(const std::vector<float>& class_scores, float threshold) {
    float best = 0.0f;
    for (float s : class_scores) best = std::max(best, s);
    return best > threshold;
}

// Mean of o_i * c_i over boxes whose objectness clears theta_presence must
// exceed the exit threshold; an empty presence set never exits.
inline bool should_exit_detector(const DetectionSet& dets, float theta_presence, float threshold) {
    double sum = 0.0;
    size_t n = 0;
    for (size_t i = 0; i < dets.objectness.size(); ++i) {
        if (dets.objectness[i] > theta_presence) {
            sum += static_cast<double>(dets.objectness[i]) * dets.class_conf[i];
            ++n;
        }
    }
    if (n == 0) return false;
    return sum / static_cast<double>(n) > threshold;
}

inline void softmax_inplace(std::vector<float>& v) {
    if (v.empty()) return;
    float mx = v[0];
    for (float x : v) mx = std::max(mx, x);
    if (!std::isfinite(mx)) mx = 0.0f;  // corrupted logits: still produce numbers
    double sum = 0.0;
    for (float& x : v) {
        x = std::exp(std::min(x - mx, 80.0f));
        if (!std::isfinite(x)) x = 0.0f;
        sum += x;
    }
    if (sum <= 0.0) {
        for (float& x : v) x = 1.0f / static_cast<float>(v.size());
        return;
    }
    for (float& x : v) x = static_cast<float>(x / sum);
}

inline float sigmoid(float x) { return 1.0f / (1.0f + std::exp(-x)); }

}  // namespace rademu::nn
