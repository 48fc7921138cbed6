#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "posepipe/decode.hpp"
#include "posepipe/error.hpp"
#include "posepipe/synth.hpp"

using namespace posepipe;
using namespace posepipe::decode;

namespace {

Heatmap one_hot(std::size_t w, std::size_t h, std::size_t px, std::size_t py) {
    Heatmap m(1, h, w, HeatmapKind::probability);
    m.at(0, py, px) = 1.0;
    return m;
}

Heatmap random_logits(std::size_t w, std::size_t h, std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    Heatmap m(1, h, w, HeatmapKind::logits);
    for (auto& v : m.joint(0)) v = n(rng);
    return m;
}

} // namespace

TEST_CASE("two-step normalization of constant and saturated logits") {
    const auto z = normalize_two_step(Heatmap(1, 4, 4, HeatmapKind::logits));
    for (double c : z.confidence.values()) CHECK(c == doctest::Approx(0.5));
    for (double p : z.probability.values()) CHECK(p == doctest::Approx(1.0 / 16.0));
    CHECK(max_value(z.confidence, 0) == doctest::Approx(0.5));

    Heatmap s(1, 4, 4, HeatmapKind::logits, std::vector<double>(16, -20.0));
    s.at(0, 1, 2) = 20.0;
    const auto n = normalize_two_step(s);
    CHECK(max_value(n.confidence, 0) == doctest::Approx(1.0).epsilon(1e-8));
    CHECK(n.probability.at(0, 1, 2) == doctest::Approx(1.0).epsilon(1e-7));
}

TEST_CASE("two-step normalization matches the scalar oracle") {
    const auto g = synth::gen_heatmap({6.3, 4.8}, 1.5, 12, 10, 3.0);
    const auto n = normalize_two_step(g.logits);
    std::vector<double> c, p;
    synth::oracle::two_step(g.logits.values(), c, p);
    for (std::size_t i = 0; i < c.size(); ++i) {
        CHECK(std::abs(n.confidence.values()[i] - c[i]) <= 1e-9);
        CHECK(std::abs(n.probability.values()[i] - p[i]) <= 1e-9);
    }
    CHECK_NOTHROW(n.probability.validate());
}

TEST_CASE("normalization errors") {
    const double inf = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(normalize_two_step(Heatmap(1, 2, 2, HeatmapKind::logits, std::vector<double>(4, -inf))),
                    NumericalError);
    CHECK_THROWS_AS(normalize_softmax(Heatmap(1, 2, 2, HeatmapKind::logits, std::vector<double>(4, -inf))),
                    NumericalError);
    CHECK_THROWS_AS(normalize_two_step(Heatmap(1, 2, 2, HeatmapKind::logits, {0, 0, std::nan(""), 0})),
                    InvalidArgument);
}

TEST_CASE("soft_argmax of delta, uniform and Gaussian maps") {
    const auto d = soft_argmax(one_hot(8, 8, 3, 5), 0);
    CHECK(d.x == 3.0);
    CHECK(d.y == 5.0);

    Heatmap u(1, 8, 8, HeatmapKind::probability, std::vector<double>(64, 1.0 / 64.0));
    const auto c = soft_argmax(u, 0);
    CHECK(c.x == doctest::Approx(3.5));
    CHECK(c.y == doctest::Approx(3.5));

    Heatmap g(1, 16, 16, HeatmapKind::probability);
    double total = 0.0;
    for (std::size_t y = 0; y < 16; ++y)
        for (std::size_t x = 0; x < 16; ++x) {
            const double dx = x - 3.7, dy = y - 2.2;
            g.at(0, y, x) = std::exp(-(dx * dx + dy * dy) / 2.0);
            total += g.at(0, y, x);
        }
    for (auto& v : g.joint(0)) v /= total;
    double ex = 0.0, ey = 0.0;
    for (std::size_t y = 0; y < 16; ++y)
        for (std::size_t x = 0; x < 16; ++x) {
            ex += x * g.at(0, y, x);
            ey += y * g.at(0, y, x);
        }
    const auto s = soft_argmax(g, 0);
    CHECK(std::abs(s.x - ex) <= 1e-9);
    CHECK(std::abs(s.y - ey) <= 1e-9);
}

TEST_CASE("soft_argmax stays inside the grid") {
    std::mt19937_64 rng(3);
    for (int i = 0; i < 200; ++i) {
        Heatmap l = random_logits(9, 5, rng);
        for (auto& v : l.joint(0)) v *= 10.0;
        for (auto method : {Normalization::two_step, Normalization::softmax}) {
            const auto s = soft_argmax(normalize(l, method).probability, 0);
            CHECK(s.x >= 0.0);
            CHECK(s.x <= 8.0);
            CHECK(s.y >= 0.0);
            CHECK(s.y <= 4.0);
        }
    }
}

TEST_CASE("decode_pose applies the crop transform") {
    const auto layout = SkeletonLayout::builtin("coco17");
    Heatmap l(17, 8, 8, HeatmapKind::logits, std::vector<double>(17 * 64, -30.0));
    for (std::size_t j = 0; j < 17; ++j) l.at(j, 5, 3) = 30.0;
    const CropTransform t{2.0, 2.0, 10.0, 0.0};
    const auto pose = decode_pose(l, layout, t, {0, 0, 20, 20});
    for (const auto& k : pose.keypoints) {
        CHECK(k.x == doctest::Approx(16.0).epsilon(1e-9));
        CHECK(k.y == doctest::Approx(10.0).epsilon(1e-9));
    }
    CHECK(pose.score == doctest::Approx(1.0).epsilon(1e-9));
    const auto ident = decode_pose(l, layout, CropTransform{}, {0, 0, 8, 8});
    CHECK(ident.keypoints[0].x == doctest::Approx(3.0));
    CHECK(ident.keypoints[0].y == doctest::Approx(5.0));
    CHECK_THROWS_AS(decode_pose(Heatmap(3, 8, 8, HeatmapKind::logits), layout, t, {0, 0, 20, 20}), InvalidArgument);
}

TEST_CASE("integral gradient examples") {
    std::mt19937_64 rng(5);
    const auto n = normalize_two_step(random_logits(8, 8, rng));
    for (double g : grad_integral(n, 0, 3.0, 3.0, Axis::x, GradientForm::probability)) CHECK(g == 0.0);
    const auto g = grad_integral(n, 0, 4.0, 2.0, Axis::x, GradientForm::probability);
    for (std::size_t y = 0; y < 8; ++y)
        for (std::size_t x = 0; x < 8; ++x) CHECK(g[y * 8 + x] == doctest::Approx(static_cast<double>(x)));
}

TEST_CASE("ASG sign pattern") {
    std::mt19937_64 rng(5);
    const auto n = normalize_two_step(random_logits(8, 8, rng));
    const auto g = grad_asg_axis(n, 0, 4.0, 2.0, Axis::x, {1.0}, GradientForm::probability);
    for (std::size_t y = 0; y < 8; ++y)
        for (std::size_t x = 0; x < 8; ++x) CHECK(g[y * 8 + x] == (x > 4 ? 1.0 : x < 4 ? -1.0 : 0.0));
    for (double v : grad_asg(n, 0, {4.0, 3.0}, {4.0, 3.0}, {1.0})) CHECK(v == 0.0);
    CHECK(AsgConfig::for_width(16).a_grad == 2.0);
}

TEST_CASE("ASG is constant in magnitude and antisymmetric about mu_hat") {
    std::mt19937_64 rng(9);
    const auto n = normalize_two_step(random_logits(16, 1, rng));
    const auto g = grad_asg_axis(n, 0, 7.5, 3.0, Axis::x, {2.0}, GradientForm::probability);
    for (std::size_t x = 0; x < 8; ++x) {
        CHECK(std::abs(g[x]) == 2.0);
        CHECK(g[x] == -g[15 - x]);
    }
    const auto i = grad_integral(n, 0, 7.5, 3.0, Axis::x, GradientForm::probability);
    for (std::size_t x = 1; x < 16; ++x) CHECK(i[x] - i[x - 1] == doctest::Approx(1.0));
}

TEST_CASE("logit gradient of the location loss matches central differences") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(0.0, 7.0);
    for (auto method : {Normalization::two_step, Normalization::softmax}) {
        for (int t = 0; t < 20; ++t) {
            const Heatmap l = random_logits(8, 8, rng);
            const Point2 mu{u(rng), u(rng)};
            const auto norm = normalize(l, method);
            const auto mh = soft_argmax(norm.probability, 0);
            auto gx = grad_integral(norm, 0, mh.x, mu.x, Axis::x, GradientForm::logits);
            const auto gy = grad_integral(norm, 0, mh.y, mu.y, Axis::y, GradientForm::logits);
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i];
            const double h = 1e-6;
            for (std::size_t i = 0; i < gx.size(); ++i) {
                Heatmap a = l, b = l;
                a.joint(0)[i] += h;
                b.joint(0)[i] -= h;
                const double fd = (location_l1_loss(a, 0, mu, method) - location_l1_loss(b, 0, mu, method)) / (2 * h);
                CHECK(std::abs(fd - gx[i]) <= 1e-5 * std::max(1.0, std::abs(fd)));
            }
        }
    }
}

TEST_CASE("lipschitz probe guards") {
    LipschitzProbeConfig cfg;
    cfg.n_trials = 50;
    CHECK_THROWS_AS(lipschitz_probe(cfg), InvalidArgument);
    cfg.n_trials = 100;
    cfg.perturbation_scale = 0.0;
    const auto e = lipschitz_probe(cfg);
    CHECK(e.trials_used == 0);
    CHECK(e.trials_skipped == 100);
    CHECK(std::isnan(e.ratio_integral));
    CHECK(std::isnan(e.ratio_asg));
}

TEST_CASE("confidence is independent of bump width under two-step normalization") {
    std::vector<double> conf, soft;
    for (double sigma : {0.5, 1.0, 2.0, 4.0}) {
        const auto g = synth::gen_heatmap({8.0, 8.0}, sigma, 17, 17, 2.0);
        conf.push_back(max_value(normalize_two_step(g.logits).confidence, 0));
        soft.push_back(max_value(normalize_softmax(g.logits).confidence, 0));
    }
    for (double c : conf) CHECK(std::abs(c - conf[0]) <= 1e-9);
    for (std::size_t i = 1; i < soft.size(); ++i) CHECK(soft[i] < soft[i - 1]);
}

TEST_CASE("integral ratio grows linearly with width") {
    LipschitzProbeConfig a;
    a.n_trials = 100;
    a.seed = 4;
    LipschitzProbeConfig b = a;
    b.width = 32;
    const double slope = lipschitz_probe(b).ratio_integral / lipschitz_probe(a).ratio_integral;
    CHECK(slope >= 1.5);
    CHECK(slope <= 2.5);
}
