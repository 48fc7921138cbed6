#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "posepipe/error.hpp"
#include "posepipe/posenms.hpp"
#include "posepipe/synth.hpp"

using namespace posepipe;
using namespace posepipe::nms;

namespace {

LayoutPtr coco() { return SkeletonLayout::builtin("coco17"); }

Pose grid_pose(double x0, double y0, double conf, double score) {
    std::vector<Keypoint> k;
    for (std::size_t j = 0; j < 17; ++j) k.push_back({x0 + 5.0 * (j % 4), y0 + 10.0 * (j / 4), conf});
    return make_pose(coco(), k, score, {x0 - 5, y0 - 5, x0 + 25, y0 + 45});
}

std::vector<Pose> random_scene(std::mt19937_64& rng) {
    std::uniform_int_distribution<int> count(0, 8), clusters(1, 3);
    std::uniform_real_distribution<double> pos(0.0, 300.0), sc(0.1, 1.0), jit(-2.0, 2.0);
    const int n = count(rng);
    const int c = clusters(rng);
    std::vector<Pose> seeds;
    for (int i = 0; i < c; ++i)
        seeds.push_back(synth::random_pose(coco(), {pos(rng), pos(rng), 0, 0}, rng));
    for (auto& s : seeds) {
        const double x = s.box.x_min, y = s.box.y_min;
        s = synth::random_pose(coco(), {x, y, x + 60, y + 120}, rng);
    }
    std::vector<Pose> out;
    for (int i = 0; i < n; ++i) {
        Pose p = seeds[static_cast<std::size_t>(i % c)];
        for (auto& k : p.keypoints) {
            k.x += jit(rng);
            k.y += jit(rng);
        }
        p.score = sc(rng);
        out.push_back(p);
    }
    return out;
}

} // namespace

TEST_CASE("k_sim closed forms") {
    const Pose p = grid_pose(0, 0, 1.0, 1.0);
    CHECK(k_sim(p, p, 1.0) == doctest::Approx(17 * std::pow(std::tanh(1.0), 2)).epsilon(1e-12));
    CHECK(k_sim(p, grid_pose(500, 500, 1.0, 1.0), 1.0) == 0.0);
    const Pose z = grid_pose(0, 0, 1e-9, 1.0);
    CHECK(k_sim(z, z, 0.3) < 1e-12);
}

TEST_CASE("h_sim closed forms") {
    const Pose p = grid_pose(0, 0, 1.0, 1.0);
    CHECK(h_sim(p, p, 10.0) == doctest::Approx(17.0));
    Pose q = p;
    q.keypoints[4].x += std::sqrt(10.0);
    CHECK(h_sim(p, q, 10.0) == doctest::Approx(16.0 + std::exp(-1.0)).epsilon(1e-12));
    CHECK(h_sim(p, grid_pose(1e6, 1e6, 1.0, 1.0), 10.0) == 0.0);
}

TEST_CASE("pose_distance composition and window ownership") {
    const NmsParams prm{0.5, 10.0, 2.0, 1.0};
    const Pose p = grid_pose(0, 0, 1.0, 1.0);
    CHECK(pose_distance(p, p, prm) == doctest::Approx(17 * std::pow(std::tanh(2.0), 2) + 2.0 * 17));
    CHECK(pose_distance(grid_pose(0, 0, 0.0, 1.0), grid_pose(1e6, 0, 0.0, 1.0), prm) == 0.0);

    Pose big = p;
    big.box = {-500, -500, 500, 500};
    Pose moved = p;
    for (auto& k : moved.keypoints) k.x += 8.0;
    CHECK(k_sim(big, moved, 0.5) > 0.0);
    CHECK(k_sim(moved, big, 0.5) == 0.0);
}

TEST_CASE("pose_nms basics") {
    CHECK(pose_nms(std::vector<Pose>{}, {}).empty());
    const Pose a = grid_pose(0, 0, 1.0, 0.9);
    CHECK(pose_nms_indices(std::vector<Pose>{a}, {}).size() == 1);
    Pose b = a;
    b.score = 0.8;
    const auto keep = pose_nms_indices(std::vector<Pose>{b, a}, {});
    REQUIRE(keep.size() == 1);
    CHECK(keep[0] == 1);
    CHECK_THROWS_AS(pose_nms(std::vector<Pose>{a}, NmsParams{0.0, 1.0, 1.0, 1.0}), InvalidArgument);
}

TEST_CASE("pose_nms matches the brute-force oracle and is idempotent") {
    std::mt19937_64 rng(21);
    std::uniform_real_distribution<double> eta(5.0, 40.0);
    for (int t = 0; t < 200; ++t) {
        const auto poses = random_scene(rng);
        const NmsParams prm{0.3, 10.0, 1.0, eta(rng)};
        const auto keep = pose_nms_indices(poses, prm);
        CHECK(keep == synth::oracle::pose_nms(poses, prm));
        const auto once = pose_nms(poses, prm);
        const auto twice = pose_nms(once, prm);
        REQUIRE(once.size() == twice.size());
        for (std::size_t i = 0; i < once.size(); ++i) CHECK(once[i].score == twice[i].score);
        if (!poses.empty()) {
            const auto top = std::max_element(poses.begin(), poses.end(),
                                              [](const Pose& x, const Pose& y) { return x.score < y.score; });
            CHECK(std::find(keep.begin(), keep.end(), static_cast<std::size_t>(top - poses.begin())) != keep.end());
        }
        for (std::size_t i = 0; i < poses.size(); ++i)
            for (std::size_t j = 0; j < poses.size(); ++j)
                CHECK(pose_distance(poses[i], poses[j], prm) ==
                      doctest::Approx(synth::oracle::pose_distance(poses[i], poses[j], prm)).epsilon(1e-12));
    }
}

TEST_CASE("default grid sizes") {
    const auto g = ParamGrid::defaults(17);
    CHECK(g.sigma1.size() == 10);
    CHECK(g.sigma2.size() == 10);
    CHECK(g.lambda.size() == 11);
    CHECK(g.eta.size() == 20);
    CHECK(g.sigma1.front() == doctest::Approx(0.01));
    CHECK(g.sigma1.back() == doctest::Approx(10.0));
    CHECK(g.eta.front() == doctest::Approx(1.7));
    CHECK(g.eta.back() == doctest::Approx(34.0));
}

TEST_CASE("optimizer removes exact duplicates") {
    const auto val = synth::gen_duplicated_dataset(coco(), 20, 3, 2, 0.0, 4);
    const NmsParams none{0.3, 10.0, 1.0, 1e9};
    const auto r = optimize_params(val, none, ParamGrid::defaults(17), 5, 1);
    CHECK(r.map_best > r.map_initial);
    CHECK(r.map_best == doctest::Approx(1.0));
    CHECK(validation_map(val, r.params) == doctest::Approx(r.map_best));
}

TEST_CASE("optimizer with single-cell grid returns init") {
    const auto val = synth::gen_duplicated_dataset(coco(), 3, 2, 1, 1.0, 8);
    const NmsParams init{0.3, 10.0, 1.0, 10.0};
    const ParamGrid g{{0.3}, {10.0}, {1.0}, {10.0}};
    const auto r = optimize_params(val, init, g, 10, 1);
    CHECK(r.params == init);
    CHECK(r.iterations == 1);
    CHECK(r.map_best == r.map_initial);
    CHECK_THROWS_AS(optimize_params(std::vector<ValidationImage>{}, init, g, 10, 1), InvalidArgument);
}
