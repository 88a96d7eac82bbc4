#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <functional>

#include "ssnet/error.hpp"
#include "ssnet/nets.hpp"
#include "support/gradcheck.hpp"

using namespace ssnet;

namespace {

NetConfig mlp_config()
{
    NetConfig c;
    c.arch = Arch::mlp;
    c.in_channels = 2;
    c.hidden = 16;
    c.d_proj = 8;
    return c;
}

NetConfig unet_config(std::size_t classes = 2)
{
    NetConfig c;
    c.classes = classes;
    c.c1 = 4;
    c.c2 = 8;
    c.d_proj = 8;
    c.input_size = 16;
    return c;
}

void zero_classifier(ModelBundle& m)
{
    m.classifier.weight.mutable_value() = Tensor(m.classifier.weight.shape());
}

std::vector<double> to_double(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

// y = x W^T + b over row-major x [n,in].
std::vector<double> linear_ref(const std::vector<double>& x, std::size_t n, const std::vector<double>& w,
                               const std::vector<double>& b, std::size_t in, std::size_t out)
{
    std::vector<double> y(n * out);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t o = 0; o < out; ++o) {
            double s = b[o];
            for (std::size_t i = 0; i < in; ++i) s += x[r * in + i] * w[o * in + i];
            y[r * out + o] = s;
        }
    return y;
}

void leaky_ref(std::vector<double>& v, double slope)
{
    for (auto& x : v) x = x > 0 ? x : slope * x;
}

// The reference runs in double, so a tiny step is exact enough and keeps every
// perturbation on one side of each leaky_relu kink of the deeper layers.
constexpr double kink_safe_step = 1e-7;

// Central differences of `ref` over every entry of `p`, compared with `analytic`.
void check_against_fd(std::vector<double> p, const Tensor& analytic,
                      const std::function<double(const std::vector<double>&)>& ref)
{
    double worst = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double keep = p[i];
        p[i] = keep + kink_safe_step;
        const double up = ref(p);
        p[i] = keep - kink_safe_step;
        const double down = ref(p);
        p[i] = keep;
        const double fd = (up - down) / (2.0 * kink_safe_step);
        const double allowed =
            std::abs(fd) < testing::fd_small ? testing::fd_abs_tol : testing::fd_rel_tol * std::abs(fd);
        worst = std::max(worst, std::abs(analytic[i] - fd) / allowed);
    }
    CHECK(worst <= 1.0);
}

} // namespace

TEST_CASE("bundle structure")
{
    for (const NetConfig& cfg : {mlp_config(), unet_config(4)}) {
        const ModelBundle m = make_model(cfg, CounterRng(1));
        CHECK(m.classifier.weight.shape()[0] == cfg.classes);
        CHECK(m.projector_z.second.weight.shape()[0] == cfg.d_proj);
        CHECK(m.projector_f.second.weight.shape()[0] == cfg.d_proj);
        CHECK(m.attention_z.size() == cfg.classes);
        CHECK(m.attention_f.size() == cfg.classes);
        const auto named = m.named_parameters();
        CHECK(named.size() == m.parameters().size());
        for (std::size_t i = 1; i < named.size(); ++i) CHECK(named[i].first != named[i - 1].first);
        // Biases start at zero.
        for (float v : m.classifier.bias.value().data()) CHECK(v == 0.0f);
    }
    NetConfig bad = unet_config();
    bad.classes = 1;
    CHECK_THROWS_AS(bad.validate(), Error);
    bad = unet_config();
    bad.d_proj = 1;
    CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("mlp forward shapes and zero classifier")
{
    ModelBundle m = make_model(mlp_config(), CounterRng(2));
    const Var pts = constant(testing::CaseRng(3).tensor({7, 2}, -1.0, 2.0));
    const Forward f = mlp_forward(m, pts);
    CHECK(f.logits.shape() == Shape{7, 2});
    CHECK(f.features.shape() == Shape{7, 16});
    zero_classifier(m);
    const Tensor probs = probabilities(m, pts).value();
    for (float p : probs.data()) CHECK(p == doctest::Approx(0.5).epsilon(1e-7));
    CHECK_THROWS_AS(mlp_forward(m, constant(Tensor({7, 3}))), Error);
}

TEST_CASE("mlp first-layer gradient matches finite differences")
{
    const NetConfig cfg = mlp_config();
    const ModelBundle m = make_model(cfg, CounterRng(4));
    const Tensor pts = testing::CaseRng(5).tensor({6, 2}, -1.0, 1.0);
    const Var w0 = m.mlp_layers[0].weight;
    const auto g = gradients(mean(mlp_forward(m, constant(pts)).logits), std::vector{w0});
    REQUIRE_FALSE(g[0].detached);

    const auto ref = [&](const std::vector<double>& w_first) {
        std::vector<double> h = to_double(pts);
        std::size_t in = 2;
        for (std::size_t l = 0; l < m.mlp_layers.size(); ++l) {
            const auto w = l == 0 ? w_first : to_double(m.mlp_layers[l].weight.value());
            h = linear_ref(h, 6, w, to_double(m.mlp_layers[l].bias.value()), in, cfg.hidden);
            leaky_ref(h, cfg.leaky_slope);
            in = cfg.hidden;
        }
        const auto out = linear_ref(h, 6, to_double(m.classifier.weight.value()),
                                    to_double(m.classifier.bias.value()), in, cfg.classes);
        double s = 0.0;
        for (double v : out) s += v;
        return s / static_cast<double>(out.size());
    };
    CHECK(mean(mlp_forward(m, constant(pts)).logits).value().item() == doctest::Approx(ref(to_double(w0.value()))));
    check_against_fd(to_double(w0.value()), g[0].value, ref);
}

TEST_CASE("segnet forward shapes, errors and probabilities")
{
    ModelBundle m = make_model(unet_config(3), CounterRng(6));
    const Var x = constant(testing::CaseRng(7).tensor({2, 1, 32, 32}, 0.0, 1.0));
    const Forward f = segnet_forward(m, x);
    CHECK(f.logits.shape() == Shape{2, 3, 32, 32});
    CHECK(f.features.shape() == Shape{2, 4, 32, 32});
    const Tensor p = probabilities(m, x).value();
    CHECK(p.shape() == Shape{2 * 32 * 32, 3});
    for (std::size_t r = 0; r < p.dim(0); ++r)
        CHECK(std::abs(p[3 * r] + p[3 * r + 1] + p[3 * r + 2] - 1.0f) <= 1e-6f);

    try {
        segnet_forward(m, constant(Tensor({1, 1, 31, 32})));
        FAIL("expected IndivisibleSpatialDims");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::indivisible_spatial_dims);
    }
    CHECK_THROWS_AS(segnet_forward(m, constant(Tensor({1, 2, 32, 32}))), Error);

    zero_classifier(m);
    const Tensor uniform = probabilities(m, x).value();
    for (float v : uniform.data()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-6));
}

TEST_CASE("forwards are bitwise deterministic")
{
    const ModelBundle a = make_model(unet_config(), CounterRng(8));
    const ModelBundle b = make_model(unet_config(), CounterRng(8));
    const Var x = constant(testing::CaseRng(9).tensor({1, 1, 16, 16}, 0.0, 1.0));
    CHECK(segnet_forward(a, x).logits.value() == segnet_forward(a, x).logits.value());
    CHECK(segnet_forward(a, x).logits.value() == segnet_forward(b, x).logits.value());
    const ModelBundle c = make_model(unet_config(), CounterRng(10));
    CHECK_FALSE(segnet_forward(a, x).logits.value() == segnet_forward(c, x).logits.value());
}

TEST_CASE("conv-only network commutes with translation in the interior")
{
    NetConfig cfg = unet_config();
    cfg.arch = Arch::conv_only;
    const ModelBundle m = make_model(cfg, CounterRng(11));
    const std::size_t n = 20, shift = 3, reach = 2; // two 3x3 layers see 2 pixels out
    const Tensor big = testing::CaseRng(12).tensor({1, 1, n, n + shift}, 0.0, 1.0);
    Tensor left({1, 1, n, n}), right({1, 1, n, n});
    for (std::size_t y = 0; y < n; ++y)
        for (std::size_t x = 0; x < n; ++x) {
            left[y * n + x] = big[y * (n + shift) + x];
            right[y * n + x] = big[y * (n + shift) + x + shift];
        }
    const Tensor a = segnet_forward(m, constant(left)).logits.value();
    const Tensor b = segnet_forward(m, constant(right)).logits.value();
    double worst = 0.0;
    for (std::size_t c = 0; c < cfg.classes; ++c)
        for (std::size_t y = reach; y + reach < n; ++y)
            for (std::size_t x = reach; x + shift + reach < n; ++x)
                worst = std::max(worst, double(std::abs(b[(c * n + y) * n + x] - a[(c * n + y) * n + x + shift])));
    CHECK(worst <= 1e-5);
}

TEST_CASE("project_features")
{
    const std::size_t d = 4;
    Projector id;
    Tensor eye({d, d});
    for (std::size_t i = 0; i < d; ++i) eye[i * d + i] = 1.0f;
    id.first = {constant(eye), constant(Tensor({d}))};
    id.second = {constant(eye), constant(Tensor({d}))};
    const Tensor feats = testing::CaseRng(13).tensor({1, d, 2, 2}, -1.0, 1.0);
    const Tensor out = project_features(id, constant(feats), 1.0f).value();
    REQUIRE(out.shape() == Shape{4, d});
    for (std::size_t p = 0; p < 4; ++p)
        for (std::size_t c = 0; c < d; ++c) CHECK(out[p * d + c] == feats[c * 4 + p]);

    const ModelBundle m = make_model(unet_config(), CounterRng(14));
    CHECK(project_features(m.projector_f, constant(Tensor({1, 4, 2, 2}))).shape() == Shape{4, 8});
    CHECK_THROWS_AS(project_features(m.projector_f, constant(Tensor({1, 5, 2, 2}))), Error);
}

TEST_CASE("projector gradient matches finite differences")
{
    const ModelBundle m = make_model(unet_config(), CounterRng(15));
    const Projector& pr = m.projector_z;
    const Tensor rows = testing::CaseRng(16).tensor({5, 4}, -1.0, 1.0);
    const Var w = pr.first.weight;
    const auto g = gradients(mean(project_rows(pr, constant(rows))), std::vector{w});
    const auto ref = [&](const std::vector<double>& w_first) {
        auto h = linear_ref(to_double(rows), 5, w_first, to_double(pr.first.bias.value()), 4, pr.first.weight.shape()[0]);
        leaky_ref(h, 0.01);
        const auto out = linear_ref(h, 5, to_double(pr.second.weight.value()), to_double(pr.second.bias.value()),
                                    pr.first.weight.shape()[0], 8);
        double s = 0.0;
        for (double v : out) s += v;
        return s / static_cast<double>(out.size());
    };
    check_against_fd(to_double(w.value()), g[0].value, ref);
}

TEST_CASE("attention scores")
{
    const ModelBundle m = make_model(unet_config(), CounterRng(17));
    AttentionHead zero = m.attention_f[0];
    zero.score.weight = constant(Tensor(zero.score.weight.shape()));
    zero.score.bias = constant(Tensor(zero.score.bias.shape()));
    const Tensor f = testing::CaseRng(18).tensor({5, 8}, -1.0, 1.0);
    const Tensor s0 = attention_scores(zero, constant(f)).value();
    REQUIRE(s0.shape() == Shape{5});
    for (float v : s0.data()) CHECK(v == s0[0]);
    CHECK(s0[0] == doctest::Approx(std::log(2.0) + attention_floor).epsilon(1e-6));

    Tensor dup({2, 8});
    std::copy_n(f.raw() + 8, 8, dup.raw());
    std::copy_n(f.raw() + 8, 8, dup.raw() + 8);
    const Tensor s = attention_scores(m.attention_f[1], constant(dup)).value();
    CHECK(s[0] == s[1]);
    const Tensor positive = attention_scores(m.attention_f[1], constant(f)).value();
    for (float v : positive.data()) CHECK(v > 0.0f);
    CHECK_THROWS_AS(attention_scores(zero, constant(Tensor({5, 7}))), Error);
}
