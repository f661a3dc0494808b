#include "rademu/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include "rademu/metrics.hpp"

namespace rademu::nn {

namespace {

// Training-time activations. The logclip bound is calibrated post-training,
// so during training the log branch is unclipped; clip trains as plain relu.
float act_f(ActKind a, float x) {
    switch (a) {
        case ActKind::none: return x;
        case ActKind::relu:
        case ActKind::clip: return x > 0.0f ? x : 0.0f;
        case ActKind::logclip: return x > 0.0f ? std::log1p(x) : 0.0f;
    }
    return x;
}

float act_df(ActKind a, float pre) {
    switch (a) {
        case ActKind::none: return 1.0f;
        case ActKind::relu:
        case ActKind::clip: return pre > 0.0f ? 1.0f : 0.0f;
        case ActKind::logclip: return pre > 0.0f ? 1.0f / (1.0f + pre) : 0.0f;
    }
    return 1.0f;
}

struct LayerCache {
    std::vector<float> in;       // batch input
    std::vector<float> pre;      // pre-activation
    std::vector<float> xhat;     // bn normalized input
    std::vector<float> inv_std;  // bn per channel
    std::vector<float> mean;     // bn per channel
    std::vector<uint32_t> argmax;  // pool routing
};

// One layer over a batch of B samples, caching what backward needs.
std::vector<float> forward_layer(FloatLayer& l, const std::vector<float>& in, uint32_t B,
                                 LayerCache& cache, bool train) {
    const uint32_t in_n = l.in.size(), out_n = l.out.size();
    std::vector<float> out(static_cast<size_t>(B) * out_n);
    cache.in = in;

    switch (l.kind) {
        case LayerKind::dense: {
            cache.pre.resize(out.size());
            for (uint32_t b = 0; b < B; ++b) {
                const float* x = in.data() + static_cast<size_t>(b) * in_n;
                float* y = out.data() + static_cast<size_t>(b) * out_n;
                for (uint32_t o = 0; o < out_n; ++o) {
                    const float* row = l.w.data() + static_cast<size_t>(o) * in_n;
                    float acc = l.b[o];
                    for (uint32_t i = 0; i < in_n; ++i) acc += row[i] * x[i];
                    cache.pre[static_cast<size_t>(b) * out_n + o] = acc;
                    y[o] = act_f(l.act, acc);
                }
            }
            break;
        }
        case LayerKind::conv: {
            cache.pre.resize(out.size());
            const uint32_t ic = l.in.c, ih = l.in.h, iw = l.in.w;
            const uint32_t oc = l.out.c, oh = l.out.h, ow = l.out.w, kk = l.kernel;
            for (uint32_t b = 0; b < B; ++b) {
                const float* x = in.data() + static_cast<size_t>(b) * in_n;
                float* y = out.data() + static_cast<size_t>(b) * out_n;
                for (uint32_t f = 0; f < oc; ++f) {
                    const float* wf = l.w.data() + static_cast<size_t>(f) * ic * kk * kk;
                    for (uint32_t oy = 0; oy < oh; ++oy) {
                        for (uint32_t ox = 0; ox < ow; ++ox) {
                            float acc = l.b[f];
                            for (uint32_t c = 0; c < ic; ++c)
                                for (uint32_t ky = 0; ky < kk; ++ky) {
                                    const int64_t sy =
                                        static_cast<int64_t>(oy) * l.stride + ky - l.pad;
                                    if (sy < 0 || sy >= ih) continue;
                                    for (uint32_t kx = 0; kx < kk; ++kx) {
                                        const int64_t sx =
                                            static_cast<int64_t>(ox) * l.stride + kx - l.pad;
                                        if (sx < 0 || sx >= iw) continue;
                                        acc += wf[(static_cast<size_t>(c) * kk + ky) * kk + kx] *
                                               x[(static_cast<size_t>(c) * ih + sy) * iw + sx];
                                    }
                                }
                            const size_t oi = (static_cast<size_t>(f) * oh + oy) * ow + ox;
                            cache.pre[static_cast<size_t>(b) * out_n + oi] = acc;
                            y[oi] = act_f(l.act, acc);
                        }
                    }
                }
            }
            break;
        }
        case LayerKind::batchnorm: {
            const uint32_t C = l.in.c, plane = l.in.h * l.in.w;
            const size_t per_c = static_cast<size_t>(B) * plane;
            cache.pre.resize(out.size());
            cache.xhat.resize(out.size());
            cache.inv_std.resize(C);
            cache.mean.resize(C);
            for (uint32_t c = 0; c < C; ++c) {
                float mean, var;
                if (train) {
                    double sum = 0.0;
                    for (uint32_t b = 0; b < B; ++b) {
                        const float* x = in.data() + static_cast<size_t>(b) * in_n + c * plane;
                        for (uint32_t i = 0; i < plane; ++i) sum += x[i];
                    }
                    mean = static_cast<float>(sum / per_c);
                    double sq = 0.0;
                    for (uint32_t b = 0; b < B; ++b) {
                        const float* x = in.data() + static_cast<size_t>(b) * in_n + c * plane;
                        for (uint32_t i = 0; i < plane; ++i) {
                            const double d = x[i] - mean;
                            sq += d * d;
                        }
                    }
                    var = static_cast<float>(sq / per_c);
                    l.run_mean[c] = 0.9f * l.run_mean[c] + 0.1f * mean;
                    l.run_var[c] = 0.9f * l.run_var[c] + 0.1f * var;
                } else {
                    mean = l.run_mean[c];
                    var = l.run_var[c];
                }
                const float inv = 1.0f / std::sqrt(var + 1e-5f);
                cache.inv_std[c] = inv;
                cache.mean[c] = mean;
                for (uint32_t b = 0; b < B; ++b) {
                    const float* x = in.data() + static_cast<size_t>(b) * in_n + c * plane;
                    float* y = out.data() + static_cast<size_t>(b) * out_n + c * plane;
                    float* xh = cache.xhat.data() + static_cast<size_t>(b) * out_n + c * plane;
                    float* pre = cache.pre.data() + static_cast<size_t>(b) * out_n + c * plane;
                    for (uint32_t i = 0; i < plane; ++i) {
                        xh[i] = (x[i] - mean) * inv;
                        pre[i] = l.gamma[c] * xh[i] + l.beta[c];
                        y[i] = act_f(l.act, pre[i]);
                    }
                }
            }
            break;
        }
        case LayerKind::pool: {
            const uint32_t C = l.in.c, ih = l.in.h, iw = l.in.w;
            const uint32_t oh = l.out.h, ow = l.out.w, kk = l.kernel;
            cache.argmax.resize(out.size());
            for (uint32_t b = 0; b < B; ++b) {
                const float* x = in.data() + static_cast<size_t>(b) * in_n;
                float* y = out.data() + static_cast<size_t>(b) * out_n;
                uint32_t* am = cache.argmax.data() + static_cast<size_t>(b) * out_n;
                for (uint32_t c = 0; c < C; ++c)
                    for (uint32_t oy = 0; oy < oh; ++oy)
                        for (uint32_t ox = 0; ox < ow; ++ox) {
                            float best = -3.4e38f;
                            uint32_t best_i = 0;
                            for (uint32_t ky = 0; ky < kk; ++ky)
                                for (uint32_t kx = 0; kx < kk; ++kx) {
                                    const uint32_t sy = oy * l.stride + ky;
                                    const uint32_t sx = ox * l.stride + kx;
                                    if (sy >= ih || sx >= iw) continue;
                                    const uint32_t i = (c * ih + sy) * iw + sx;
                                    if (x[i] > best) {
                                        best = x[i];
                                        best_i = i;
                                    }
                                }
                            const uint32_t oi = (c * oh + oy) * ow + ox;
                            y[oi] = best;
                            am[oi] = best_i;
                        }
            }
            break;
        }
    }
    return out;
}

struct LayerGrads {
    std::vector<float> gw, gb, ggamma, gbeta;
};

// gout: dL/d(out). Returns dL/d(in); accumulates parameter grads.
std::vector<float> backward_layer(const FloatLayer& l, const LayerCache& cache,
                                  const std::vector<float>& gout, uint32_t B, LayerGrads& g) {
    const uint32_t in_n = l.in.size(), out_n = l.out.size();
    std::vector<float> gin(static_cast<size_t>(B) * in_n, 0.0f);

    // fold activation derivative into a local copy
    std::vector<float> gy = gout;
    if (l.kind != LayerKind::pool) {
        for (size_t i = 0; i < gy.size(); ++i) gy[i] *= act_df(l.act, cache.pre[i]);
    }

    switch (l.kind) {
        case LayerKind::dense: {
            g.gw.assign(l.w.size(), 0.0f);
            g.gb.assign(l.b.size(), 0.0f);
            for (uint32_t b = 0; b < B; ++b) {
                const float* x = cache.in.data() + static_cast<size_t>(b) * in_n;
                const float* gyb = gy.data() + static_cast<size_t>(b) * out_n;
                float* gx = gin.data() + static_cast<size_t>(b) * in_n;
                for (uint32_t o = 0; o < out_n; ++o) {
                    const float go = gyb[o];
                    if (go == 0.0f) continue;
                    const float* row = l.w.data() + static_cast<size_t>(o) * in_n;
                    float* gw = g.gw.data() + static_cast<size_t>(o) * in_n;
                    g.gb[o] += go;
                    for (uint32_t i = 0; i < in_n; ++i) {
                        gw[i] += go * x[i];
                        gx[i] += go * row[i];
                    }
                }
            }
            break;
        }
        case LayerKind::conv: {
            g.gw.assign(l.w.size(), 0.0f);
            g.gb.assign(l.b.size(), 0.0f);
            const uint32_t ic = l.in.c, ih = l.in.h, iw = l.in.w;
            const uint32_t oc = l.out.c, oh = l.out.h, ow = l.out.w, kk = l.kernel;
            for (uint32_t b = 0; b < B; ++b) {
                const float* x = cache.in.data() + static_cast<size_t>(b) * in_n;
                const float* gyb = gy.data() + static_cast<size_t>(b) * out_n;
                float* gx = gin.data() + static_cast<size_t>(b) * in_n;
                for (uint32_t f = 0; f < oc; ++f) {
                    const float* wf = l.w.data() + static_cast<size_t>(f) * ic * kk * kk;
                    float* gwf = g.gw.data() + static_cast<size_t>(f) * ic * kk * kk;
                    for (uint32_t oy = 0; oy < oh; ++oy)
                        for (uint32_t ox = 0; ox < ow; ++ox) {
                            const float go = gyb[(static_cast<size_t>(f) * oh + oy) * ow + ox];
                            if (go == 0.0f) continue;
                            g.gb[f] += go;
                            for (uint32_t c = 0; c < ic; ++c)
                                for (uint32_t ky = 0; ky < kk; ++ky) {
                                    const int64_t sy =
                                        static_cast<int64_t>(oy) * l.stride + ky - l.pad;
                                    if (sy < 0 || sy >= ih) continue;
                                    for (uint32_t kx = 0; kx < kk; ++kx) {
                                        const int64_t sx =
                                            static_cast<int64_t>(ox) * l.stride + kx - l.pad;
                                        if (sx < 0 || sx >= iw) continue;
                                        const size_t wi = (static_cast<size_t>(c) * kk + ky) * kk + kx;
                                        const size_t xi = (static_cast<size_t>(c) * ih + sy) * iw + sx;
                                        gwf[wi] += go * x[xi];
                                        gx[xi] += go * wf[wi];
                                    }
                                }
                        }
                }
            }
            break;
        }
        case LayerKind::batchnorm: {
            const uint32_t C = l.in.c, plane = l.in.h * l.in.w;
            const double N = static_cast<double>(B) * plane;
            g.ggamma.assign(C, 0.0f);
            g.gbeta.assign(C, 0.0f);
            for (uint32_t c = 0; c < C; ++c) {
                double sum_g = 0.0, sum_gx = 0.0;
                for (uint32_t b = 0; b < B; ++b) {
                    const float* gyb = gy.data() + static_cast<size_t>(b) * out_n + c * plane;
                    const float* xh = cache.xhat.data() + static_cast<size_t>(b) * out_n + c * plane;
                    for (uint32_t i = 0; i < plane; ++i) {
                        sum_g += gyb[i];
                        sum_gx += gyb[i] * xh[i];
                    }
                }
                g.gbeta[c] = static_cast<float>(sum_g);
                g.ggamma[c] = static_cast<float>(sum_gx);
                const float inv = cache.inv_std[c];
                const float k = l.gamma[c] * inv;
                for (uint32_t b = 0; b < B; ++b) {
                    const float* gyb = gy.data() + static_cast<size_t>(b) * out_n + c * plane;
                    const float* xh = cache.xhat.data() + static_cast<size_t>(b) * out_n + c * plane;
                    float* gx = gin.data() + static_cast<size_t>(b) * in_n + c * plane;
                    for (uint32_t i = 0; i < plane; ++i) {
                        gx[i] = k * (gyb[i] - static_cast<float>(sum_g / N) -
                                     xh[i] * static_cast<float>(sum_gx / N));
                    }
                }
            }
            break;
        }
        case LayerKind::pool: {
            for (uint32_t b = 0; b < B; ++b) {
                const float* gyb = gout.data() + static_cast<size_t>(b) * out_n;
                const uint32_t* am = cache.argmax.data() + static_cast<size_t>(b) * out_n;
                float* gx = gin.data() + static_cast<size_t>(b) * in_n;
                for (uint32_t i = 0; i < out_n; ++i) gx[am[i]] += gyb[i];
            }
            break;
        }
    }
    return gin;
}

void sgd_step(FloatLayer& l, const LayerGrads& g, float lr, float momentum, uint32_t B) {
    auto update = [&](std::vector<float>& w, std::vector<float>& v, const std::vector<float>& gw) {
        if (gw.empty()) return;
        if (v.size() != w.size()) v.assign(w.size(), 0.0f);
        const float f = 1.0f / static_cast<float>(B);
        for (size_t i = 0; i < w.size(); ++i) {
            v[i] = momentum * v[i] - lr * gw[i] * f;
            w[i] += v[i];
        }
    };
    update(l.w, l.vw, g.gw);
    update(l.b, l.vb, g.gb);
    update(l.gamma, l.vgamma, g.ggamma);
    update(l.beta, l.vbeta, g.gbeta);
}

// dL/dlogits for one sample appended into grad; returns the loss value.
double loss_grad_classification(const float* logits, uint32_t classes, uint32_t label,
                                float* grad) {
    std::vector<float> p(logits, logits + classes);
    softmax_inplace(p);
    double loss = -std::log(std::max(p[label], 1e-12f));
    for (uint32_t k = 0; k < classes; ++k) grad[k] = p[k] - (k == label ? 1.0f : 0.0f);
    return loss;
}

double loss_grad_detection(const float* raw, uint32_t grid, uint32_t classes,
                           const uint32_t* cells, float* grad) {
    const uint32_t n_cells = grid * grid;
    const uint32_t stride = 1 + classes;
    double loss = 0.0;
    for (uint32_t i = 0; i < n_cells; ++i) {
        const float o = sigmoid(raw[i * stride]);
        const float target = cells[i] != 0 ? 1.0f : 0.0f;
        loss += -(target * std::log(std::max(o, 1e-7f)) +
                  (1.0f - target) * std::log(std::max(1.0f - o, 1e-7f)));
        grad[i * stride] = o - target;
        if (cells[i] != 0) {
            const uint32_t cls = cells[i] - 1;
            std::vector<float> p(raw + i * stride + 1, raw + i * stride + 1 + classes);
            softmax_inplace(p);
            loss += -std::log(std::max(p[cls], 1e-12f));
            for (uint32_t k = 0; k < classes; ++k)
                grad[i * stride + 1 + k] = p[k] - (k == cls ? 1.0f : 0.0f);
        } else {
            for (uint32_t k = 0; k < classes; ++k) grad[i * stride + 1 + k] = 0.0f;
        }
    }
    return loss;
}

void init_layer(FloatLayer& l, Rng& rng) {
    if (l.kind == LayerKind::dense || l.kind == LayerKind::conv) {
        const uint32_t fan_in =
            l.kind == LayerKind::dense ? l.in.size() : l.in.c * l.kernel * l.kernel;
        const float std = std::sqrt(2.0f / static_cast<float>(fan_in));
        for (auto& w : l.w) w = std * static_cast<float>(rng.normal());
        std::fill(l.b.begin(), l.b.end(), 0.0f);
    } else if (l.kind == LayerKind::batchnorm) {
        std::fill(l.gamma.begin(), l.gamma.end(), 1.0f);
        std::fill(l.beta.begin(), l.beta.end(), 0.0f);
        std::fill(l.run_mean.begin(), l.run_mean.end(), 0.0f);
        std::fill(l.run_var.begin(), l.run_var.end(), 1.0f);
    }
}

FloatLayer make_dense(Shape in, uint32_t units, ActKind act) {
    FloatLayer l;
    l.kind = LayerKind::dense;
    l.act = act;
    l.in = in;
    l.out = Shape{units, 1, 1};
    l.w.resize(static_cast<size_t>(units) * in.size());
    l.b.resize(units);
    return l;
}

FloatLayer make_conv(Shape in, uint32_t filters, uint32_t kernel, uint32_t pad, uint32_t stride,
                     ActKind act) {
    FloatLayer l;
    l.kind = LayerKind::conv;
    l.act = act;
    l.in = in;
    l.kernel = kernel;
    l.stride = stride;
    l.pad = pad;
    l.out = Shape{filters, (in.h + 2 * pad - kernel) / stride + 1,
                  (in.w + 2 * pad - kernel) / stride + 1};
    l.w.resize(static_cast<size_t>(filters) * in.c * kernel * kernel);
    l.b.resize(filters);
    return l;
}

FloatLayer make_bn(Shape in, ActKind act) {
    FloatLayer l;
    l.kind = LayerKind::batchnorm;
    l.act = act;
    l.in = l.out = in;
    l.gamma.resize(in.c);
    l.beta.resize(in.c);
    l.run_mean.resize(in.c);
    l.run_var.resize(in.c);
    return l;
}

FloatLayer make_pool(Shape in, uint32_t k) {
    FloatLayer l;
    l.kind = LayerKind::pool;
    l.act = ActKind::none;
    l.in = in;
    l.kernel = k;
    l.stride = k;
    l.out = Shape{in.c, in.h / k, in.w / k};
    return l;
}

std::vector<FloatLayer> make_head(Shape in, uint32_t outputs, uint32_t kernel, uint32_t head_ch,
                                  ActKind act, Rng& rng) {
    // IC/ID head: one conv, one batchnorm, one fully connected layer.
    std::vector<FloatLayer> head;
    head.push_back(make_conv(in, head_ch, kernel, kernel / 2, 1, ActKind::none));
    head.push_back(make_bn(head.back().out, act));
    head.push_back(make_dense(head.back().out, outputs, ActKind::none));
    for (auto& l : head) init_layer(l, rng);
    return head;
}

}  // namespace

FloatModel build_backbone(const BackboneConfig& cfg) {
    FloatModel m;
    m.task = cfg.task;
    m.input = cfg.input;
    m.classes = cfg.classes;
    m.det_grid = cfg.task == TaskKind::detection ? cfg.det_grid : 0;

    Rng rng(splitmix64(cfg.seed ^ 0x1417));
    Shape cur = cfg.input;
    for (const ConvStage& stage : cfg.stages) {
        m.layers.push_back(
            make_conv(cur, stage.filters, cfg.kernel, cfg.kernel / 2, stage.stride, ActKind::none));
        cur = m.layers.back().out;
        m.layers.push_back(make_bn(cur, cfg.act));
        if (stage.pool) {
            m.layers.push_back(make_pool(cur, 2));
            cur = m.layers.back().out;
        }
    }
    Shape flat{cur.size(), 1, 1};
    for (uint32_t units : cfg.dense_units) {
        FloatLayer d = make_dense(flat, units, cfg.act);
        d.in = cur;  // consumes the spatial tensor flattened
        m.layers.push_back(d);
        cur = flat = d.out;
    }
    const uint32_t outputs = cfg.task == TaskKind::classification
                                 ? cfg.classes
                                 : cfg.det_grid * cfg.det_grid * (1 + cfg.classes);
    FloatLayer final = make_dense(flat, outputs, ActKind::none);
    final.in = cur;
    m.layers.push_back(final);
    for (auto& l : m.layers) init_layer(l, rng);

    for (uint32_t attach : cfg.exit_attach) {
        if (attach < 1 || attach + 1 > m.layers.size())
            throw ConfigError("backbone: exit attach index outside the hidden layers");
        FloatModel::Exit e;
        e.attach_index = attach;
        e.head = make_head(m.layers[attach - 1].out, outputs, cfg.kernel, cfg.head_channels,
                           cfg.act, rng);
        m.exits.push_back(std::move(e));
    }
    return m;
}

namespace {

std::vector<float> forward_eval(const FloatModel& model, const float* x, uint32_t upto = UINT32_MAX) {
    std::vector<float> cur(x, x + model.input.size());
    LayerCache cache;
    uint32_t n = 0;
    for (const auto& l : model.layers) {
        if (n >= upto) break;
        cur = forward_layer(const_cast<FloatLayer&>(l), cur, 1, cache, false);
        ++n;
    }
    return cur;
}

}  // namespace

TrainReport train_backbone(FloatModel& model, const Dataset& train, const TrainConfig& cfg,
                           uint64_t seed) {
    Rng rng(splitmix64(seed ^ 0x7e41));
    std::vector<uint32_t> order(train.count);
    std::iota(order.begin(), order.end(), 0);

    const uint32_t out_n = model.layers.back().out.size();
    TrainReport report;
    float lr = cfg.lr;

    for (uint32_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        // Fisher-Yates with our own rng for cross-platform determinism
        for (uint32_t i = train.count - 1; i > 0; --i) {
            const uint32_t j = static_cast<uint32_t>(rng.uniform(i + 1));
            std::swap(order[i], order[j]);
        }
        double epoch_loss = 0.0;
        uint32_t batches = 0;
        for (uint32_t start = 0; start < train.count; start += cfg.batch) {
            const uint32_t B = std::min(cfg.batch, train.count - start);
            std::vector<float> batch(static_cast<size_t>(B) * model.input.size());
            for (uint32_t b = 0; b < B; ++b)
                std::memcpy(batch.data() + static_cast<size_t>(b) * model.input.size(),
                            train.image(order[start + b]), model.input.size() * sizeof(float));

            std::vector<LayerCache> caches(model.layers.size());
            std::vector<float> cur = batch;
            for (size_t li = 0; li < model.layers.size(); ++li)
                cur = forward_layer(model.layers[li], cur, B, caches[li], true);

            std::vector<float> grad(static_cast<size_t>(B) * out_n, 0.0f);
            double batch_loss = 0.0;
            for (uint32_t b = 0; b < B; ++b) {
                const float* logits = cur.data() + static_cast<size_t>(b) * out_n;
                float* g = grad.data() + static_cast<size_t>(b) * out_n;
                if (model.task == TaskKind::classification)
                    batch_loss += loss_grad_classification(logits, model.classes,
                                                           train.label(order[start + b]), g);
                else
                    batch_loss += loss_grad_detection(logits, model.det_grid, model.classes,
                                                      train.cell_labels(order[start + b]), g);
            }
            epoch_loss += batch_loss;
            ++batches;

            for (size_t li = model.layers.size(); li-- > 0;) {
                LayerGrads g;
                grad = backward_layer(model.layers[li], caches[li], grad, B, g);
                sgd_step(model.layers[li], g, lr, cfg.momentum, B);
            }
        }
        epoch_loss /= train.count;
        if (!std::isfinite(epoch_loss))
            throw TrainingError("train_backbone: loss diverged at epoch " + std::to_string(epoch));
        report.epoch_loss.push_back(epoch_loss);
        lr *= cfg.lr_decay;
    }
    report.final_loss = report.epoch_loss.empty() ? 0.0 : report.epoch_loss.back();
    return report;
}

ExitTrainReport finetune_exits(FloatModel& model, const Dataset& train, const TrainConfig& cfg,
                               uint64_t seed) {
    Rng rng(splitmix64(seed ^ 0xf17e));
    std::vector<uint32_t> order(train.count);
    std::iota(order.begin(), order.end(), 0);

    const uint32_t out_n = model.task == TaskKind::classification
                               ? model.classes
                               : model.det_grid * model.det_grid * (1 + model.classes);

    ExitTrainReport report;
    report.per_exit_loss.assign(model.exits.size(), 0.0);
    float lr = cfg.exit_lr;

    for (uint32_t epoch = 0; epoch < cfg.exit_epochs; ++epoch) {
        for (uint32_t i = train.count - 1; i > 0; --i) {
            const uint32_t j = static_cast<uint32_t>(rng.uniform(i + 1));
            std::swap(order[i], order[j]);
        }
        std::vector<double> exit_loss(model.exits.size(), 0.0);
        for (uint32_t start = 0; start < train.count; start += cfg.batch) {
            const uint32_t B = std::min(cfg.batch, train.count - start);
            std::vector<float> batch(static_cast<size_t>(B) * model.input.size());
            for (uint32_t b = 0; b < B; ++b)
                std::memcpy(batch.data() + static_cast<size_t>(b) * model.input.size(),
                            train.image(order[start + b]), model.input.size() * sizeof(float));

            // frozen backbone: eval-mode forward caching the attach outputs
            std::vector<std::vector<float>> taps(model.layers.size() + 1);
            taps[0] = batch;
            LayerCache scratch;
            for (size_t li = 0; li < model.layers.size(); ++li)
                taps[li + 1] = forward_layer(model.layers[li], taps[li], B, scratch, false);

            for (size_t ei = 0; ei < model.exits.size(); ++ei) {
                auto& exit = model.exits[ei];
                std::vector<LayerCache> caches(exit.head.size());
                std::vector<float> cur = taps[exit.attach_index];
                for (size_t li = 0; li < exit.head.size(); ++li)
                    cur = forward_layer(exit.head[li], cur, B, caches[li], true);

                std::vector<float> grad(static_cast<size_t>(B) * out_n, 0.0f);
                for (uint32_t b = 0; b < B; ++b) {
                    const float* logits = cur.data() + static_cast<size_t>(b) * out_n;
                    float* g = grad.data() + static_cast<size_t>(b) * out_n;
                    if (model.task == TaskKind::classification)
                        exit_loss[ei] += loss_grad_classification(
                            logits, model.classes, train.label(order[start + b]), g);
                    else
                        exit_loss[ei] += loss_grad_detection(logits, model.det_grid, model.classes,
                                                             train.cell_labels(order[start + b]), g);
                }
                for (size_t li = exit.head.size(); li-- > 0;) {
                    LayerGrads g;
                    grad = backward_layer(exit.head[li], caches[li], grad, B, g);
                    sgd_step(exit.head[li], g, lr, cfg.momentum, B);
                }
            }
        }
        double total = 0.0;
        for (size_t ei = 0; ei < exit_loss.size(); ++ei) {
            exit_loss[ei] /= train.count;
            total += exit_loss[ei];
            report.per_exit_loss[ei] = exit_loss[ei];
        }
        if (!std::isfinite(total))
            throw TrainingError("finetune_exits: loss diverged at epoch " + std::to_string(epoch));
        report.total_loss = total;
        lr *= cfg.lr_decay;
    }
    return report;
}

void calibrate_theta(FloatModel& model, const Dataset& calib,
                     const std::vector<uint32_t>& indices) {
    if (indices.empty()) throw ConfigError("calibrate_theta: empty calibration set");

    std::vector<float> backbone_max(model.layers.size(), 0.0f);
    std::vector<std::vector<float>> head_max(model.exits.size());
    for (size_t e = 0; e < model.exits.size(); ++e)
        head_max[e].assign(model.exits[e].head.size(), 0.0f);

    LayerCache cache;
    for (uint32_t idx : indices) {
        std::vector<float> cur(calib.image(idx), calib.image(idx) + model.input.size());
        for (size_t li = 0; li < model.layers.size(); ++li) {
            auto& l = model.layers[li];
            cur = forward_layer(l, cur, 1, cache, false);
            if (l.act != ActKind::none && l.kind != LayerKind::pool)
                for (float v : cache.pre) backbone_max[li] = std::max(backbone_max[li], v);
            for (size_t e = 0; e < model.exits.size(); ++e) {
                if (model.exits[e].attach_index != li + 1) continue;
                std::vector<float> hx = cur;
                for (size_t hi = 0; hi < model.exits[e].head.size(); ++hi) {
                    auto& hl = model.exits[e].head[hi];
                    hx = forward_layer(hl, hx, 1, cache, false);
                    if (hl.act != ActKind::none && hl.kind != LayerKind::pool)
                        for (float v : cache.pre) head_max[e][hi] = std::max(head_max[e][hi], v);
                }
            }
        }
    }
    // a layer that never goes positive on calibration data keeps a small
    // positive bound so the clip stays well-defined
    for (size_t li = 0; li < model.layers.size(); ++li)
        if (model.layers[li].act != ActKind::none)
            model.layers[li].theta = std::max(backbone_max[li], 1e-3f);
    for (size_t e = 0; e < model.exits.size(); ++e)
        for (size_t hi = 0; hi < model.exits[e].head.size(); ++hi)
            if (model.exits[e].head[hi].act != ActKind::none)
                model.exits[e].head[hi].theta = std::max(head_max[e][hi], 1e-3f);
}

double evaluate_float(const FloatModel& model, const Dataset& ds) {
    if (model.task == TaskKind::classification) {
        uint32_t hits = 0;
        for (uint32_t i = 0; i < ds.count; ++i) {
            const std::vector<float> out = forward_eval(model, ds.image(i));
            const uint32_t pred = static_cast<uint32_t>(
                std::max_element(out.begin(), out.end()) - out.begin());
            hits += (pred == ds.label(i));
        }
        return 100.0 * hits / ds.count;
    }
    DetectionTally tally;
    for (uint32_t i = 0; i < ds.count; ++i) {
        const std::vector<float> raw = forward_eval(model, ds.image(i));
        collect_detections(raw.data(), model.det_grid, model.classes, ds.cell_labels(i), tally);
    }
    return map_percent(tally);
}

namespace {

struct Ranges {
    std::vector<std::pair<float, float>> backbone;  // post-activation lo/hi
    std::vector<std::vector<std::pair<float, float>>> heads;
};

void widen(std::pair<float, float>& r, const std::vector<float>& v) {
    for (float x : v) {
        if (!std::isfinite(x)) continue;
        r.first = std::min(r.first, x);
        r.second = std::max(r.second, x);
    }
}

QuantParams qparams_for(std::pair<float, float> range) {
    float lo = std::min(range.first, 0.0f);
    float hi = std::max(range.second, 0.0f);
    if (!(hi > lo)) return QuantParams{1.0f, 0};  // degenerate tensor
    const float scale = (hi - lo) / 255.0f;
    const int32_t zp = static_cast<int32_t>(std::lround(-128.0 - lo / scale));
    return QuantParams{scale, std::clamp(zp, -128, 127)};
}

QuantTensorLayer quantize_layer(const FloatLayer& fl, const QuantParams& outq,
                                float in_scale) {
    QuantTensorLayer q;
    q.spec.kind = fl.kind;
    q.spec.act = fl.act;
    q.spec.in = fl.in;
    q.spec.out = fl.out;
    q.spec.kernel = fl.kernel;
    q.spec.stride = fl.stride;
    q.spec.pad = fl.pad;
    q.theta = fl.theta;
    q.outq = outq;

    if (fl.kind == LayerKind::dense || fl.kind == LayerKind::conv) {
        float mx = 0.0f;
        for (float w : fl.w) mx = std::max(mx, std::abs(w));
        q.wq = QuantParams{mx > 0.0f ? mx / 127.0f : 1.0f, 0};
        q.w.resize(fl.w.size());
        for (size_t i = 0; i < fl.w.size(); ++i)
            q.w[i] = quantize_value(fl.w[i], q.wq.scale, q.wq.zero_point);
        // biases live on the accumulator grid
        const double bscale = static_cast<double>(q.wq.scale) * in_scale;
        q.bias.resize(fl.b.size());
        for (size_t i = 0; i < fl.b.size(); ++i) {
            const double t = fl.b[i] / bscale;
            q.bias[i] = static_cast<int32_t>(
                std::clamp(std::llround(t), static_cast<long long>(INT32_MIN),
                           static_cast<long long>(INT32_MAX)));
        }
    } else if (fl.kind == LayerKind::batchnorm) {
        q.wq = QuantParams{1.0f, 0};
        q.bn_aux.reserve(4 * fl.gamma.size());
        q.bn_aux.insert(q.bn_aux.end(), fl.gamma.begin(), fl.gamma.end());
        q.bn_aux.insert(q.bn_aux.end(), fl.beta.begin(), fl.beta.end());
        q.bn_aux.insert(q.bn_aux.end(), fl.run_mean.begin(), fl.run_mean.end());
        q.bn_aux.insert(q.bn_aux.end(), fl.run_var.begin(), fl.run_var.end());
    } else {
        q.wq = QuantParams{1.0f, 0};
    }
    return q;
}

void fold_into_conv(FloatLayer& conv, const FloatLayer& bn) {
    const uint32_t oc = conv.out.c;
    const size_t per_filter = conv.w.size() / oc;
    for (uint32_t f = 0; f < oc; ++f) {
        const float inv = 1.0f / std::sqrt(bn.run_var[f] + 1e-5f);
        const float g = bn.gamma[f] * inv;
        float* wf = conv.w.data() + static_cast<size_t>(f) * per_filter;
        for (size_t i = 0; i < per_filter; ++i) wf[i] *= g;
        conv.b[f] = (conv.b[f] - bn.run_mean[f]) * g + bn.beta[f];
    }
    conv.act = bn.act;
    conv.theta = bn.theta;
}

std::vector<FloatLayer> fold_layer_list(const std::vector<FloatLayer>& layers,
                                        std::vector<uint32_t>* index_map) {
    std::vector<FloatLayer> out;
    if (index_map) index_map->assign(layers.size() + 1, 0);
    for (size_t i = 0; i < layers.size(); ++i) {
        if (layers[i].kind == LayerKind::batchnorm && !out.empty() &&
            out.back().kind == LayerKind::conv && out.back().act == ActKind::none &&
            out.back().out == layers[i].in) {
            fold_into_conv(out.back(), layers[i]);
        } else {
            out.push_back(layers[i]);
        }
        if (index_map) (*index_map)[i + 1] = static_cast<uint32_t>(out.size());
    }
    return out;
}

}  // namespace

FloatModel fold_batchnorm(const FloatModel& model) {
    FloatModel folded;
    folded.task = model.task;
    folded.input = model.input;
    folded.classes = model.classes;
    folded.det_grid = model.det_grid;
    std::vector<uint32_t> index_map;
    folded.layers = fold_layer_list(model.layers, &index_map);
    for (const auto& e : model.exits) {
        FloatModel::Exit fe;
        fe.attach_index = index_map[e.attach_index];
        fe.head = fold_layer_list(e.head, nullptr);
        folded.exits.push_back(std::move(fe));
    }
    return folded;
}

QuantModel quantize(const FloatModel& unfolded, const Dataset& calib,
                    const std::vector<uint32_t>& indices) {
    if (indices.empty()) throw ConfigError("quantize: empty calibration set");

    // batchnorm folds into the preceding convolution, as deployed engines do
    const FloatModel model = fold_batchnorm(unfolded);

    constexpr auto fresh = std::pair<float, float>{3.4e38f, -3.4e38f};
    Ranges ranges;
    ranges.backbone.assign(model.layers.size(), fresh);
    ranges.heads.resize(model.exits.size());
    for (size_t e = 0; e < model.exits.size(); ++e)
        ranges.heads[e].assign(model.exits[e].head.size(), fresh);
    auto input_range = fresh;

    LayerCache cache;
    for (uint32_t idx : indices) {
        std::vector<float> cur(calib.image(idx), calib.image(idx) + model.input.size());
        widen(input_range, cur);
        for (size_t li = 0; li < model.layers.size(); ++li) {
            cur = forward_layer(const_cast<FloatLayer&>(model.layers[li]), cur, 1, cache, false);
            widen(ranges.backbone[li], cur);
            for (size_t e = 0; e < model.exits.size(); ++e) {
                if (model.exits[e].attach_index != li + 1) continue;
                std::vector<float> hx = cur;
                for (size_t hi = 0; hi < model.exits[e].head.size(); ++hi) {
                    hx = forward_layer(const_cast<FloatLayer&>(model.exits[e].head[hi]), hx, 1,
                                       cache, false);
                    widen(ranges.heads[e][hi], hx);
                }
            }
        }
    }

    QuantModel qm;
    qm.task = model.task;
    qm.input = model.input;
    qm.classes = model.classes;
    qm.det_grid = model.det_grid;
    qm.input_q = qparams_for(input_range);

    QuantParams prev = qm.input_q;
    for (size_t li = 0; li < model.layers.size(); ++li) {
        const auto& fl = model.layers[li];
        QuantParams outq =
            fl.kind == LayerKind::pool ? prev : qparams_for(ranges.backbone[li]);
        qm.layers.push_back(quantize_layer(fl, outq, prev.scale));
        prev = outq;
    }
    for (size_t e = 0; e < model.exits.size(); ++e) {
        QuantModel::Exit qe;
        qe.attach_index = model.exits[e].attach_index;
        QuantParams hprev = qm.layers[qe.attach_index - 1].outq;
        for (size_t hi = 0; hi < model.exits[e].head.size(); ++hi) {
            const auto& fl = model.exits[e].head[hi];
            QuantParams outq =
                fl.kind == LayerKind::pool ? hprev : qparams_for(ranges.heads[e][hi]);
            qe.head.push_back(quantize_layer(fl, outq, hprev.scale));
            hprev = outq;
        }
        qm.exits.push_back(std::move(qe));
    }
    return qm;
}

}  // namespace rademu::nn
