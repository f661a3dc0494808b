#include <doctest.h>

#include <cmath>

#include "rademu/engine.hpp"
#include "rademu/metrics.hpp"
#include "rademu/rng.hpp"

using namespace rademu;
using namespace rademu::nn;

namespace {

// Tiny two-layer classifier assembled by hand: dense(4->6, relu) + dense(6->3).
QuantModel tiny_model() {
    QuantModel m;
    m.task = TaskKind::classification;
    m.input = Shape{4, 1, 1};
    m.classes = 3;
    m.input_q = QuantParams{1.0f / 255.0f, -128};

    Rng rng(31);
    QuantTensorLayer l1;
    l1.spec.kind = LayerKind::dense;
    l1.spec.act = ActKind::relu;
    l1.spec.in = Shape{4, 1, 1};
    l1.spec.out = Shape{6, 1, 1};
    l1.wq = QuantParams{0.02f, 0};
    l1.outq = QuantParams{0.05f, -128};
    l1.theta = 0.0f;
    l1.w.resize(24);
    for (auto& w : l1.w) w = static_cast<int8_t>(static_cast<int64_t>(rng.uniform(255)) - 127);
    l1.bias.assign(6, 25);
    m.layers.push_back(l1);

    QuantTensorLayer l2 = l1;
    l2.spec.in = Shape{6, 1, 1};
    l2.spec.out = Shape{3, 1, 1};
    l2.spec.act = ActKind::none;
    l2.outq = QuantParams{0.05f, 0};
    l2.w.resize(18);
    for (auto& w : l2.w) w = static_cast<int8_t>(static_cast<int64_t>(rng.uniform(255)) - 127);
    l2.bias.assign(3, 0);
    m.layers.push_back(l2);
    return m;
}

}  // namespace

TEST_CASE("logclip branch table") {
    const float theta = 5.0f;
    CHECK(logclip(-3.0f, theta) == 0.0f);
    CHECK(logclip(0.0f, theta) == 0.0f);
    CHECK(logclip(std::exp(1.0f) - 1.0f, theta) == doctest::Approx(1.0f));
    CHECK(logclip(5.0f, theta) == doctest::Approx(std::log(6.0f)));
    CHECK(logclip(5.0f + 1e-4f, theta) == 0.0f);
    CHECK(logclip(6.0f, theta) == 0.0f);
}

TEST_CASE("logclip range, monotonicity and concavity on a grid") {
    const float theta = 7.5f;
    const double bound = std::log(theta + 1.0);
    double prev = -1.0;
    double prev_step = 1e9;
    const int n = 1000;
    for (int i = 1; i <= n; ++i) {
        const float x = theta * static_cast<float>(i) / n;
        const double y = logclip(x, theta);
        CHECK(y >= 0.0);
        CHECK(y <= bound + 1e-7);
        CHECK(y > prev);  // strictly increasing on (0, theta]
        if (i > 1) {
            const double step = y - prev;
            CHECK(step <= prev_step + 1e-9);  // concavity: shrinking increments
            prev_step = step;
        }
        prev = y;
    }
}

TEST_CASE("relu_clip") {
    CHECK(relu_clip(-1.0f, 5.0f) == 0.0f);
    CHECK(relu_clip(3.0f, 5.0f) == 3.0f);
    CHECK(relu_clip(9.0f, 5.0f) == 5.0f);
}

TEST_CASE("classifier exit rule uses a strict inequality") {
    CHECK(should_exit_classifier({0.7f, 0.3f}, 0.6f));
    CHECK(!should_exit_classifier({0.5f, 0.5f}, 0.5f));
    // uniform scores never clear a threshold at or above 1/k
    CHECK(!should_exit_classifier({0.25f, 0.25f, 0.25f, 0.25f}, 0.25f));
}

TEST_CASE("detector exit criterion, hand-evaluated") {
    DetectionSet d;
    d.objectness = {0.9f, 0.8f, 0.1f};
    d.class_conf = {1.0f, 0.5f, 0.9f};
    // S = {0, 1}; mean(0.9*1.0, 0.8*0.5) = 0.65
    CHECK(should_exit_detector(d, 0.5f, 0.3f));
    CHECK(!should_exit_detector(d, 0.5f, 0.7f));

    DetectionSet none;
    none.objectness = {0.1f, 0.2f};
    none.class_conf = {1.0f, 1.0f};
    CHECK(!should_exit_detector(none, 0.5f, 0.0f));  // empty presence set never exits
}

TEST_CASE("serialize | parse | serialize is byte-identical") {
    const QuantModel m = tiny_model();
    const std::vector<std::byte> a = serialize(m);
    Engine e = Engine::parse(a);
    CHECK(e.image == a);

    // structure made it through
    REQUIRE(e.layout.layers.size() == 2);
    CHECK(e.layout.layers[0].kind == LayerKind::dense);
    CHECK(e.layout.layers[0].act == ActKind::relu);
    CHECK(e.layout.layers[0].w_len == 24);
    CHECK(e.layout.classes == 3);
}

TEST_CASE("flipping a weight byte survives parsing and changes one weight") {
    const QuantModel m = tiny_model();
    std::vector<std::byte> image = serialize(m);
    Engine clean = Engine::parse(image);
    const uint64_t w_off = clean.layout.layers[0].w_off;

    image[w_off + 3] ^= std::byte{0x80};
    Engine corrupted = Engine::parse(image);  // weight corruption is silent
    int diffs = 0;
    for (uint64_t i = 0; i < clean.layout.layers[0].w_len; ++i)
        diffs += (clean.image[w_off + i] != corrupted.image[w_off + i]);
    CHECK(diffs == 1);
}

TEST_CASE("header corruption is a parse error") {
    const QuantModel m = tiny_model();
    std::vector<std::byte> image = serialize(m);
    image[0] ^= std::byte{1};  // magic
    CHECK_THROWS_AS(Engine::parse(image), ParseError);

    std::vector<std::byte> truncated = serialize(m);
    truncated.resize(truncated.size() / 2);
    CHECK_THROWS_AS(Engine::parse(truncated), ParseError);
}

TEST_CASE("layout index covers every parameter byte exactly once") {
    const QuantModel m = tiny_model();
    Engine e = Engine::parse(serialize(m));
    std::vector<int> covered(e.image.size(), 0);
    uint64_t param_bytes = 0;
    for (const auto& r : e.layout.layout_index) {
        for (uint64_t i = r.offset; i < r.offset + r.length; ++i) ++covered[i];
        param_bytes += r.length;
    }
    for (int c : covered) CHECK(c <= 1);  // disjoint
    uint64_t expected = 0;
    for (const auto& l : m.layers)
        expected += l.w.size() + l.bias.size() * 4 + l.bn_aux.size() * 4;
    CHECK(param_bytes == expected);
}

TEST_CASE("forward determinism and exit plumbing") {
    const QuantModel m = tiny_model();
    Engine e = Engine::parse(serialize(m));
    const std::vector<float> input{0.1f, 0.5f, 0.9f, 0.2f};

    ExitPolicy off;
    const Prediction a = forward(e.layout, e.image, input, off);
    const Prediction b = forward(e.layout, e.image, input, off);
    CHECK(a.output == b.output);
    CHECK(a.exit_index == e.layout.exits.size() + 1);
    CHECK(a.layers_executed == 2);
}

TEST_CASE("bounded amplification: logclip caps what a weight error can do to a layer") {
    // one dense unit with one weight, driven by input 1.0
    auto output_with_weight = [](ActKind act, float theta, float w) {
        return apply_activation(act, w * 1.0f, theta);
    };
    const float theta = 4.0f;
    const double logclip_bound = std::log(theta + 1.0);
    for (float w : {10.0f, 1e3f, 1e6f, 1e30f}) {
        CHECK(output_with_weight(ActKind::logclip, theta, w) <= logclip_bound);
        CHECK(output_with_weight(ActKind::clip, theta, w) <= theta);
    }
    // relu has no such bound: the output change tracks the weight error
    CHECK(output_with_weight(ActKind::relu, theta, 1e30f) == 1e30f);
}

TEST_CASE("ks statistic") {
    CHECK(ks_statistic({1.0f, 2.0f, 3.0f}, {1.0f, 2.0f, 3.0f}) == doctest::Approx(0.0));
    CHECK(ks_statistic({0.0f, 0.1f, 0.2f}, {5.0f, 6.0f, 7.0f}) == doctest::Approx(1.0));
    CHECK_THROWS_AS(ks_statistic({}, {1.0f}), std::invalid_argument);
}
