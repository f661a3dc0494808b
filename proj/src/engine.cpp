#include "rademu/engine.hpp"

#include <algorithm>
#include <cstring>

namespace rademu::nn {

namespace {

// --- little-endian byte IO ---------------------------------------------

class Writer {
  public:
    std::vector<std::byte> out;
    void u8(uint8_t v) { out.push_back(static_cast<std::byte>(v)); }
    void u16(uint16_t v) { raw(&v, 2); }
    void u32(uint32_t v) { raw(&v, 4); }
    void u64(uint64_t v) { raw(&v, 8); }
    void i32(int32_t v) { raw(&v, 4); }
    void f32(float v) { raw(&v, 4); }
    void raw(const void* p, size_t n) {
        if (n == 0) return;
        const auto* b = static_cast<const std::byte*>(p);
        out.insert(out.end(), b, b + n);
    }
    void pad_to(size_t align) {
        while (out.size() % align != 0) out.push_back(std::byte{0});
    }
};

class Reader {
  public:
    Reader(std::span<const std::byte> bytes) : data_(bytes) {}
    size_t pos = 0;
    uint8_t u8() { return static_cast<uint8_t>(take(1)[0]); }
    uint16_t u16() { return load<uint16_t>(); }
    uint32_t u32() { return load<uint32_t>(); }
    uint64_t u64() { return load<uint64_t>(); }
    int32_t i32() { return load<int32_t>(); }
    float f32() { return load<float>(); }
    size_t size() const { return data_.size(); }

  private:
    template <typename T>
    T load() {
        T v;
        std::memcpy(&v, take(sizeof(T)), sizeof(T));
        return v;
    }
    const std::byte* take(size_t n) {
        if (pos + n > data_.size()) throw ParseError("engine image truncated");
        const std::byte* p = data_.data() + pos;
        pos += n;
        return p;
    }
    std::span<const std::byte> data_;
};

}  // namespace

uint32_t QLayer::weight_count() const {
    switch (kind) {
        case LayerKind::dense: return in.size() * out.c;
        case LayerKind::conv: return in.c * out.c * kernel * kernel;
        case LayerKind::batchnorm:
        case LayerKind::pool: return 0;
    }
    return 0;
}

uint32_t QLayer::aux_count() const {
    switch (kind) {
        case LayerKind::dense: return out.c;            // bias
        case LayerKind::conv: return out.c;             // bias
        case LayerKind::batchnorm: return 4 * in.c;     // gamma, beta, mean, var
        case LayerKind::pool: return 0;
    }
    return 0;
}

namespace {

void write_layer_record(Writer& w, const QuantTensorLayer& l) {
    const QLayer& s = l.spec;
    w.u8(static_cast<uint8_t>(s.kind));
    // dims: kind-specific, see FORMATS.md
    switch (s.kind) {
        case LayerKind::dense:
            w.u32(s.in.size());
            w.u32(s.out.c);
            w.u32(0);
            w.u32(0);
            break;
        case LayerKind::conv:
            w.u32(s.in.c);
            w.u32(s.out.c);
            w.u32(s.in.h);
            w.u32(s.in.w);
            break;
        case LayerKind::batchnorm:
        case LayerKind::pool:
            w.u32(s.in.c);
            w.u32(s.in.h);
            w.u32(s.in.w);
            w.u32(0);
            break;
    }
    w.u8(static_cast<uint8_t>(s.act));
    w.f32(l.theta);
    w.f32(l.wq.scale);
    w.i32(l.wq.zero_point);
    w.u64(s.w_off);
    w.u64(s.w_len);
    w.u64(s.aux_off);
    w.u64(s.aux_len);
    w.f32(l.outq.scale);
    w.i32(l.outq.zero_point);
    w.u32(s.kernel);
    w.u32(s.stride);
    w.u32(s.pad);
}

size_t aux_bytes(const QuantTensorLayer& l) {
    return l.spec.kind == LayerKind::batchnorm ? l.bn_aux.size() * 4 : l.bias.size() * 4;
}

QLayer read_layer_record(Reader& r, uint64_t record_off) {
    QLayer l;
    const uint8_t kind = r.u8();
    if (kind > 3) throw ParseError("engine image: invalid layer kind code");
    l.kind = static_cast<LayerKind>(kind);
    uint32_t d0 = r.u32(), d1 = r.u32(), d2 = r.u32(), d3 = r.u32();
    const uint8_t act = r.u8();
    if (act > 3) throw ParseError("engine image: invalid activation kind code");
    l.act = static_cast<ActKind>(act);
    l.theta = r.f32();
    l.wq.scale = r.f32();
    l.wq.zero_point = r.i32();
    l.w_off = r.u64();
    l.w_len = r.u64();
    l.aux_off = r.u64();
    l.aux_len = r.u64();
    l.outq.scale = r.f32();
    l.outq.zero_point = r.i32();
    l.kernel = r.u32();
    l.stride = r.u32();
    l.pad = r.u32();

    switch (l.kind) {
        case LayerKind::dense:
            l.in = Shape{d0, 1, 1};
            l.out = Shape{d1, 1, 1};
            break;
        case LayerKind::conv: {
            if (l.kernel == 0 || l.stride == 0) throw ParseError("engine image: bad conv params");
            l.in = Shape{d0, d2, d3};
            const uint32_t oh = (d2 + 2 * l.pad >= l.kernel)
                                    ? (d2 + 2 * l.pad - l.kernel) / l.stride + 1
                                    : 0;
            const uint32_t ow = (d3 + 2 * l.pad >= l.kernel)
                                    ? (d3 + 2 * l.pad - l.kernel) / l.stride + 1
                                    : 0;
            l.out = Shape{d1, oh, ow};
            break;
        }
        case LayerKind::batchnorm:
            l.in = l.out = Shape{d0, d1, d2};
            break;
        case LayerKind::pool: {
            if (l.kernel == 0 || l.stride == 0) throw ParseError("engine image: bad pool params");
            l.in = Shape{d0, d1, d2};
            l.out = Shape{d0, d1 / l.kernel, d2 / l.kernel};
            break;
        }
    }
    if (l.in.size() == 0 || l.out.size() == 0) throw ParseError("engine image: degenerate layer shape");

    l.record_off = record_off;
    return l;
}

void check_blob(const QLayer& l, size_t image_size) {
    if (l.w_len != l.weight_count())
        throw ParseError("engine image: weight blob length mismatch");
    if (l.aux_len != static_cast<uint64_t>(l.aux_count()) * 4)
        throw ParseError("engine image: aux blob length mismatch");
    if (l.w_off + l.w_len > image_size || l.aux_off + l.aux_len > image_size)
        throw ParseError("engine image: blob range outside the image");
}

}  // namespace

std::vector<std::byte> serialize(const QuantModel& model) {
    // Fix blob offsets first: header + all records, then aligned blobs.
    size_t record_bytes = model.layers.size() * kLayerRecordBytes;
    for (const auto& e : model.exits)
        record_bytes += kExitPrefixBytes + e.head.size() * kLayerRecordBytes;

    size_t blob_cursor = kHeaderBytes + record_bytes;
    auto align8 = [](size_t v) { return (v + 7) & ~size_t{7}; };

    QuantModel m = model;  // local copy to fill offsets
    auto assign = [&](QuantTensorLayer& l) {
        blob_cursor = align8(blob_cursor);
        l.spec.w_off = blob_cursor;
        l.spec.w_len = l.w.size();
        blob_cursor += l.w.size();
        blob_cursor = align8(blob_cursor);
        l.spec.aux_off = blob_cursor;
        l.spec.aux_len = aux_bytes(l);
        blob_cursor += l.spec.aux_len;
    };
    for (auto& l : m.layers) assign(l);
    for (auto& e : m.exits)
        for (auto& l : e.head) assign(l);
    const size_t total = align8(blob_cursor);

    Writer w;
    w.out.reserve(total);
    w.raw(kMagic, 4);
    w.u16(kFormatVersion);
    w.u16(static_cast<uint16_t>(m.layers.size()));
    w.u8(static_cast<uint8_t>(m.task));
    w.u8(static_cast<uint8_t>(m.exits.size()));
    w.u16(0);
    w.u32(m.input.c);
    w.u32(m.input.h);
    w.u32(m.input.w);
    w.u32(0);
    w.u32(m.classes);
    w.u32(m.det_grid);
    w.f32(m.input_q.scale);
    w.i32(m.input_q.zero_point);

    for (const auto& l : m.layers) write_layer_record(w, l);
    for (const auto& e : m.exits) {
        w.u32(e.attach_index);
        w.u32(static_cast<uint32_t>(e.head.size()));
        for (const auto& l : e.head) write_layer_record(w, l);
    }

    auto emit_blobs = [&](const QuantTensorLayer& l) {
        w.pad_to(8);
        w.raw(l.w.data(), l.w.size());
        w.pad_to(8);
        if (l.spec.kind == LayerKind::batchnorm)
            w.raw(l.bn_aux.data(), l.bn_aux.size() * 4);
        else
            w.raw(l.bias.data(), l.bias.size() * 4);
    };
    for (const auto& l : m.layers) emit_blobs(l);
    for (const auto& e : m.exits)
        for (const auto& l : e.head) emit_blobs(l);
    w.pad_to(8);
    return std::move(w.out);
}

EngineLayout parse_layout(std::span<const std::byte> bytes) {
    Reader r(bytes);
    if (bytes.size() < kHeaderBytes) throw ParseError("engine image: shorter than the header");

    char magic[4];
    std::memcpy(magic, bytes.data(), 4);
    r.pos = 4;
    if (std::memcmp(magic, kMagic, 4) != 0) throw ParseError("engine image: bad magic");
    if (r.u16() != kFormatVersion) throw ParseError("engine image: unsupported version");

    EngineLayout lay;
    lay.image_size = bytes.size();
    const uint16_t layer_count = r.u16();
    const uint8_t task = r.u8();
    if (task > 1) throw ParseError("engine image: invalid task kind");
    lay.task = static_cast<TaskKind>(task);
    const uint8_t exit_count = r.u8();
    r.u16();  // reserved
    lay.input.c = r.u32();
    lay.input.h = r.u32();
    lay.input.w = r.u32();
    r.u32();  // reserved
    lay.classes = r.u32();
    lay.det_grid = r.u32();
    lay.input_q.scale = r.f32();
    lay.input_q.zero_point = r.i32();

    if (layer_count == 0 || layer_count > 1024) throw ParseError("engine image: bad layer count");
    if (exit_count > 64) throw ParseError("engine image: bad exit count");
    if (lay.classes == 0 || lay.classes > 65536) throw ParseError("engine image: bad class count");
    if (lay.input.size() == 0) throw ParseError("engine image: empty input shape");
    if (lay.task == TaskKind::detection && lay.det_grid == 0)
        throw ParseError("engine image: detection engine without a grid");

    for (uint16_t i = 0; i < layer_count; ++i)
        lay.layers.push_back(read_layer_record(r, r.pos));
    for (uint8_t e = 0; e < exit_count; ++e) {
        ExitBranch br;
        br.attach_index = r.u32();
        const uint32_t head_count = r.u32();
        if (head_count == 0 || head_count > 64)
            throw ParseError("engine image: bad exit head layer count");
        for (uint32_t i = 0; i < head_count; ++i)
            br.head.push_back(read_layer_record(r, r.pos));
        lay.exits.push_back(std::move(br));
    }

    // Structural validation: shapes must compose and blobs must be sane.
    // Dense layers flatten their input, so composition compares sizes there.
    auto composes = [](const QLayer& next, const Shape& prev_out) {
        return next.kind == LayerKind::dense ? next.in.size() == prev_out.size()
                                             : next.in == prev_out;
    };
    if (!composes(lay.layers.front(), lay.input))
        throw ParseError("engine image: input shape does not match the first layer");
    for (size_t i = 1; i < lay.layers.size(); ++i)
        if (!composes(lay.layers[i], lay.layers[i - 1].out))
            throw ParseError("engine image: adjacent layer shapes do not compose");
    uint32_t prev_attach = 0;
    for (const auto& e : lay.exits) {
        if (e.attach_index < 1 || e.attach_index + 1 > lay.layers.size())
            throw ParseError("engine image: exit attach index outside the hidden layers");
        if (e.attach_index <= prev_attach)
            throw ParseError("engine image: exit attach indices must strictly increase");
        prev_attach = e.attach_index;
        if (!composes(e.head.front(), lay.layers[e.attach_index - 1].out))
            throw ParseError("engine image: exit head shape does not match its attach layer");
        for (size_t i = 1; i < e.head.size(); ++i)
            if (!composes(e.head[i], e.head[i - 1].out))
                throw ParseError("engine image: exit head shapes do not compose");
    }

    // layout index, overlap check
    auto add_ranges = [&](const QLayer& l, int32_t layer, int32_t exit) {
        check_blob(l, bytes.size());
        if (l.w_len > 0) lay.layout_index.push_back(LayoutRange{l.w_off, l.w_len, layer, exit, 0});
        if (l.aux_len > 0)
            lay.layout_index.push_back(LayoutRange{l.aux_off, l.aux_len, layer, exit, 1});
    };
    for (size_t i = 0; i < lay.layers.size(); ++i)
        add_ranges(lay.layers[i], static_cast<int32_t>(i), -1);
    for (size_t e = 0; e < lay.exits.size(); ++e)
        for (size_t i = 0; i < lay.exits[e].head.size(); ++i)
            add_ranges(lay.exits[e].head[i], static_cast<int32_t>(i), static_cast<int32_t>(e));

    std::vector<LayoutRange> sorted = lay.layout_index;
    std::sort(sorted.begin(), sorted.end(),
              [](const LayoutRange& a, const LayoutRange& b) { return a.offset < b.offset; });
    for (size_t i = 0; i + 1 < sorted.size(); ++i)
        if (sorted[i].offset + sorted[i].length > sorted[i + 1].offset)
            throw ParseError("engine image: overlapping blob ranges");
    if (!sorted.empty() && sorted.front().offset < r.pos)
        throw ParseError("engine image: blob overlaps the record table");

    return lay;
}

Engine Engine::parse(std::span<const std::byte> bytes) {
    Engine e;
    e.layout = parse_layout(bytes);
    e.image.assign(bytes.begin(), bytes.end());
    return e;
}

// --- forward pass --------------------------------------------------------

namespace {

using Workspace = ForwardScratch;

// Activation + requantization over a whole layer output. The activation
// switch stays outside the element loops so they vectorize. Insane zero
// points (possible under corruption) take the exact scalar path.
void act_requant_pass(float* v, size_t n, ActKind act, float theta, float scale, int32_t zp) {
    const float inv = 1.0f / scale;
    if (zp < -256 || zp > 256) {
        for (size_t i = 0; i < n; ++i) {
            const float a = apply_activation(act, v[i], theta);
            v[i] = dequantize_value(quantize_scaled(a, inv, zp), scale, zp);
        }
        return;
    }
    const float lo = static_cast<float>(-128 - zp);
    const float hi = static_cast<float>(127 - zp);
    switch (act) {
        case ActKind::none:
            for (size_t i = 0; i < n; ++i) v[i] = quantize_diff(v[i], inv, lo, hi) * scale;
            break;
        case ActKind::relu:
            for (size_t i = 0; i < n; ++i)
                v[i] = quantize_diff(v[i] > 0.0f ? v[i] : 0.0f, inv, lo, hi) * scale;
            break;
        case ActKind::clip:
            for (size_t i = 0; i < n; ++i)
                v[i] = quantize_diff(relu_clip(v[i], theta), inv, lo, hi) * scale;
            break;
        case ActKind::logclip:
            for (size_t i = 0; i < n; ++i)
                v[i] = quantize_diff(logclip(v[i], theta), inv, lo, hi) * scale;
            break;
    }
}

// Runs one layer: `x` holds on-grid dequantized activations with quant
// params `xq`; leaves the output in `x` and updates `xq`. Integer work runs
// on int16 buffers so the MAC loops vectorize.
void run_layer(const QLayer& l, std::span<const std::byte> image, std::vector<float>& x,
               QuantParams& xq, Workspace& ws) {
    const int8_t* wp = reinterpret_cast<const int8_t*>(image.data() + l.w_off);
    const int32_t* biasp = reinterpret_cast<const int32_t*>(image.data() + l.aux_off);
    const float* bn_auxp = reinterpret_cast<const float*>(image.data() + l.aux_off);

    const float inv_in = 1.0f / xq.scale;
    const int32_t in_zp = xq.zero_point;

    auto widen_weights = [&](size_t n) {
        ws.wd.resize(n);
        const int16_t wzp = static_cast<int16_t>(std::clamp(l.wq.zero_point, -32768, 32767));
        for (size_t i = 0; i < n; ++i) ws.wd[i] = static_cast<int16_t>(wp[i]) - wzp;
    };
    const bool sane_in_zp = in_zp >= -256 && in_zp <= 256;
    const float in_lo = static_cast<float>(-128 - std::clamp(in_zp, -256, 256));
    const float in_hi = static_cast<float>(127 - std::clamp(in_zp, -256, 256));
    auto quantize_diff_row = [&](const float* src, int16_t* dst, size_t n) {
        if (sane_in_zp) {
            for (size_t i = 0; i < n; ++i)
                dst[i] = static_cast<int16_t>(quantize_diff(src[i], inv_in, in_lo, in_hi));
        } else {
            for (size_t i = 0; i < n; ++i)
                dst[i] = static_cast<int16_t>(
                    static_cast<int32_t>(quantize_scaled(src[i], inv_in, in_zp)) - in_zp);
        }
    };

    switch (l.kind) {
        case LayerKind::dense: {
            const uint32_t in_n = l.in.size(), out_n = l.out.c;
            ws.xd.resize(in_n);
            quantize_diff_row(x.data(), ws.xd.data(), in_n);
            widen_weights(static_cast<size_t>(in_n) * out_n);
            ws.y.resize(out_n);
            const float k = l.wq.scale * xq.scale;
            const int16_t* xd = ws.xd.data();
            for (uint32_t o = 0; o < out_n; ++o) {
                const int16_t* row = ws.wd.data() + static_cast<size_t>(o) * in_n;
                int32_t acc = 0;
                for (uint32_t i = 0; i < in_n; ++i)
                    acc += static_cast<int32_t>(row[i]) * static_cast<int32_t>(xd[i]);
                ws.y[o] = (static_cast<float>(acc) + static_cast<float>(biasp[o])) * k;
            }
            act_requant_pass(ws.y.data(), out_n, l.act, l.theta, l.outq.scale,
                             l.outq.zero_point);
            std::swap(x, ws.y);
            break;
        }
        case LayerKind::conv: {
            const uint32_t ic = l.in.c, ih = l.in.h, iw = l.in.w;
            const uint32_t oc = l.out.c, oh = l.out.h, ow = l.out.w;
            const uint32_t kk = l.kernel, pad = l.pad, stride = l.stride;
            const uint32_t ph = ih + 2 * pad, pw = iw + 2 * pad;
            // padding cells stay zero: (q - zp) = 0 is exactly real zero
            ws.xd.assign(static_cast<size_t>(ic) * ph * pw, 0);
            for (uint32_t c = 0; c < ic; ++c)
                for (uint32_t yy = 0; yy < ih; ++yy)
                    quantize_diff_row(
                        x.data() + (static_cast<size_t>(c) * ih + yy) * iw,
                        ws.xd.data() + (static_cast<size_t>(c) * ph + yy + pad) * pw + pad, iw);
            widen_weights(static_cast<size_t>(oc) * ic * kk * kk);
            // im2col: one contiguous patch per output position, entries in
            // the same (c, ky, kx) order as the filter weights
            const uint32_t patch = ic * kk * kk;
            ws.cols.resize(static_cast<size_t>(oh) * ow * patch);
            for (uint32_t oy = 0; oy < oh; ++oy)
                for (uint32_t ox = 0; ox < ow; ++ox) {
                    int16_t* dst = ws.cols.data() + (static_cast<size_t>(oy) * ow + ox) * patch;
                    for (uint32_t c = 0; c < ic; ++c) {
                        const int16_t* plane = ws.xd.data() + static_cast<size_t>(c) * ph * pw;
                        for (uint32_t ky = 0; ky < kk; ++ky) {
                            const int16_t* src = plane + (oy * stride + ky) * pw + ox * stride;
                            for (uint32_t kx = 0; kx < kk; ++kx) *dst++ = src[kx];
                        }
                    }
                }
            ws.y.resize(static_cast<size_t>(oc) * oh * ow);
            const float k = l.wq.scale * xq.scale;
            const uint32_t positions = oh * ow;
            for (uint32_t f = 0; f < oc; ++f) {
                const int16_t* wf = ws.wd.data() + static_cast<size_t>(f) * patch;
                float* yf = ws.y.data() + static_cast<size_t>(f) * positions;
                const float bias = static_cast<float>(biasp[f]);
                for (uint32_t pos = 0; pos < positions; ++pos) {
                    const int16_t* col = ws.cols.data() + static_cast<size_t>(pos) * patch;
                    int32_t acc = 0;
                    for (uint32_t i = 0; i < patch; ++i)
                        acc += static_cast<int32_t>(wf[i]) * static_cast<int32_t>(col[i]);
                    yf[pos] = (static_cast<float>(acc) + bias) * k;
                }
            }
            act_requant_pass(ws.y.data(), ws.y.size(), l.act, l.theta, l.outq.scale,
                             l.outq.zero_point);
            std::swap(x, ws.y);
            break;
        }
        case LayerKind::batchnorm: {
            const uint32_t c = l.in.c, plane = l.in.h * l.in.w;
            const float* gamma = bn_auxp;
            const float* beta = bn_auxp + c;
            const float* mean = bn_auxp + 2 * c;
            const float* var = bn_auxp + 3 * c;
            for (uint32_t ch = 0; ch < c; ++ch) {
                const float inv = 1.0f / std::sqrt(var[ch] + 1e-5f);
                const float a = gamma[ch] * inv;
                const float b = beta[ch] - mean[ch] * a;
                float* row = x.data() + static_cast<size_t>(ch) * plane;
                for (uint32_t i = 0; i < plane; ++i) row[i] = a * row[i] + b;
            }
            act_requant_pass(x.data(), x.size(), l.act, l.theta, l.outq.scale,
                             l.outq.zero_point);
            break;
        }
        case LayerKind::pool: {
            const uint32_t c = l.in.c, ih = l.in.h, iw = l.in.w;
            const uint32_t oh = l.out.h, ow = l.out.w, kk = l.kernel;
            ws.y.resize(static_cast<size_t>(c) * oh * ow);
            for (uint32_t ch = 0; ch < c; ++ch) {
                for (uint32_t oy = 0; oy < oh; ++oy) {
                    for (uint32_t ox = 0; ox < ow; ++ox) {
                        float best = -3.4e38f;
                        for (uint32_t ky = 0; ky < kk; ++ky) {
                            for (uint32_t kx = 0; kx < kk; ++kx) {
                                const uint32_t sy = oy * l.stride + ky;
                                const uint32_t sx = ox * l.stride + kx;
                                if (sy >= ih || sx >= iw) continue;
                                best = std::max(best,
                                                x[(static_cast<size_t>(ch) * ih + sy) * iw + sx]);
                            }
                        }
                        ws.y[(static_cast<size_t>(ch) * oh + oy) * ow + ox] = best;
                    }
                }
            }
            std::swap(x, ws.y);
            // pooling keeps the input grid; no requantization
            return;
        }
    }
    xq = l.outq;
}

void run_head(const std::vector<QLayer>& head, std::span<const std::byte> image,
              const std::vector<float>& tap, QuantParams xq, Workspace& ws,
              std::vector<float>& out) {
    ws.hx = tap;
    for (const auto& l : head) {
        run_layer(l, image, ws.hx, xq, ws);
    }
    out = ws.hx;
}

}  // namespace

DetectionSet decode_detections(const EngineLayout& layout, std::span<const float> raw) {
    DetectionSet d;
    const uint32_t cells = layout.det_grid * layout.det_grid;
    const uint32_t stride = 1 + layout.classes;
    d.objectness.resize(cells);
    d.class_conf.resize(cells);
    std::vector<float> cls(layout.classes);
    for (uint32_t i = 0; i < cells; ++i) {
        d.objectness[i] = sigmoid(raw[i * stride]);
        if (std::isnan(d.objectness[i])) d.objectness[i] = 0.0f;
        for (uint32_t k = 0; k < layout.classes; ++k) cls[k] = raw[i * stride + 1 + k];
        softmax_inplace(cls);
        d.class_conf[i] = *std::max_element(cls.begin(), cls.end());
    }
    return d;
}

std::vector<float> class_scores(const EngineLayout& layout, const Prediction& pred) {
    (void)layout;
    std::vector<float> scores = pred.output;
    softmax_inplace(scores);
    return scores;
}

Prediction forward(const EngineLayout& layout, std::span<const std::byte> image,
                   std::span<const float> input, const ExitPolicy& policy,
                   ForwardScratch* scratch) {
    ForwardScratch local;
    ForwardScratch& ws = scratch ? *scratch : local;

    std::vector<float>& x = ws.x;
    x.assign(input.begin(), input.end());
    QuantParams xq = layout.input_q;
    // inputs enter on the quant grid like every inter-layer activation
    const float inv_in = 1.0f / xq.scale;
    for (float& v : x) {
        const int8_t q = quantize_scaled(v, inv_in, xq.zero_point);
        v = dequantize_value(q, xq.scale, xq.zero_point);
    }

    size_t next_exit = 0;
    Prediction pred;
    for (size_t i = 0; i < layout.layers.size(); ++i) {
        run_layer(layout.layers[i], image, x, xq, ws);
        ++pred.layers_executed;
        const uint32_t layer_index = static_cast<uint32_t>(i + 1);
        while (next_exit < layout.exits.size() &&
               layout.exits[next_exit].attach_index == layer_index) {
            if (policy.enabled) {
                run_head(layout.exits[next_exit].head, image, x, xq, ws, ws.hy);
                bool take = false;
                if (layout.task == TaskKind::classification) {
                    std::vector<float> scores = ws.hy;
                    softmax_inplace(scores);
                    take = should_exit_classifier(scores, policy.threshold);
                } else {
                    take = should_exit_detector(decode_detections(layout, ws.hy),
                                                policy.theta_presence, policy.threshold);
                }
                if (take) {
                    pred.output = ws.hy;
                    pred.exit_index = static_cast<uint32_t>(next_exit + 1);
                    return pred;
                }
            }
            ++next_exit;
        }
    }
    pred.output = x;
    pred.exit_index = static_cast<uint32_t>(layout.exits.size() + 1);
    return pred;
}

}  // namespace rademu::nn
