#include <doctest.h>

#include <cmath>
#include <random>

#include "posepipe/decode.hpp"
#include "posepipe/error.hpp"
#include "posepipe/synth.hpp"

using namespace posepipe;
using namespace posepipe::synth;

TEST_CASE("gen_heatmap peaks") {
    const auto g = gen_heatmap({5.0, 3.0}, 1.0, 12, 9, 4.0);
    const auto a = decode::argmax_location(g.logits, 0);
    CHECK(a.x == 5.0);
    CHECK(a.y == 3.0);
    const auto s = gen_heatmap({3.5, 3.5}, 1.3, 8, 8, 2.0);
    const auto e = decode::soft_argmax(decode::normalize_two_step(s.logits).probability, 0);
    CHECK(e.x == doctest::Approx(3.5).epsilon(1e-12));
    CHECK(e.y == doctest::Approx(3.5).epsilon(1e-12));
    CHECK(s.expectation.x == doctest::Approx(3.5).epsilon(1e-12));
    CHECK_THROWS_AS(gen_heatmap({9.0, 0.0}, 1.0, 8, 8, 1.0), InvalidArgument);
    CHECK_THROWS_AS(gen_heatmap({1.0, 1.0}, 0.0, 8, 8, 1.0), InvalidArgument);
}

TEST_CASE("duplicated scenes") {
    const auto l = SkeletonLayout::builtin("coco17");
    std::mt19937_64 rng(1);
    const auto z = gen_duplicated_scene(l, 4, 0, 3.0, rng);
    REQUIRE(z.candidates.size() == 4);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 17; ++j) {
            CHECK(z.candidates[i].keypoints[j].x == z.ground_truth[i].pose.keypoints[j].x);
            CHECK(z.candidates[i].keypoints[j].y == z.ground_truth[i].pose.keypoints[j].y);
        }

    const auto e = gen_duplicated_scene(l, 3, 2, 0.0, rng);
    REQUIRE(e.candidates.size() == 9);
    for (std::size_t i = 3; i < 9; ++i) {
        const auto& src = e.candidates[e.source[i]];
        for (std::size_t j = 0; j < 17; ++j) CHECK(e.candidates[i].keypoints[j].x == src.keypoints[j].x);
        CHECK(e.candidates[i].score < src.score);
    }

    const double jitter = 2.5;
    const auto m = gen_duplicated_scene(l, 5, 40, jitter, rng);
    double sum = 0.0, sq = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 5; i < m.candidates.size(); ++i)
        for (std::size_t j = 0; j < 17; ++j) {
            const double d = m.candidates[i].keypoints[j].x - m.candidates[m.source[i]].keypoints[j].x;
            sum += d;
            sq += d * d;
            ++n;
        }
    const double mean = sum / static_cast<double>(n);
    const double sd = std::sqrt(sq / static_cast<double>(n) - mean * mean);
    CHECK(std::abs(mean) <= 4.0 * jitter / std::sqrt(static_cast<double>(n)));
    CHECK(std::abs(sd - jitter) <= 0.05 * jitter);
}

TEST_CASE("generators are deterministic under a seed") {
    const auto l = SkeletonLayout::builtin("coco17");
    const auto a = gen_duplicated_dataset(l, 5, 3, 1, 1.0, 99);
    const auto b = gen_duplicated_dataset(l, 5, 3, 1, 1.0, 99);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        REQUIRE(a[i].candidates.size() == b[i].candidates.size());
        for (std::size_t c = 0; c < a[i].candidates.size(); ++c)
            CHECK(a[i].candidates[c].keypoints[3].x == b[i].candidates[c].keypoints[3].x);
    }
    std::mt19937_64 r1(5), r2(5);
    TrajectoryOptions opt;
    opt.emb_noise = 0.1;
    const auto s1 = gen_trajectories(3, 10, opt, r1), s2 = gen_trajectories(3, 10, opt, r2);
    for (std::size_t f = 0; f < 10; ++f)
        for (std::size_t d = 0; d < s1.frames[f].size(); ++d) {
            CHECK(s1.frames[f][d].true_id == s2.frames[f][d].true_id);
            CHECK(s1.frames[f][d].input.embedding->values() == s2.frames[f][d].input.embedding->values());
        }
}

TEST_CASE("trajectory ground truth covers every detection once") {
    std::mt19937_64 rng(2);
    TrajectoryOptions opt;
    opt.crossing = true;
    opt.occlusions = {{2, 3, 8}};
    const auto s = gen_trajectories(3, 20, opt, rng);
    REQUIRE(s.frames.size() == 20);
    for (std::size_t f = 0; f < 20; ++f) {
        CHECK(s.frames[f].size() == s.ground_truth[f].people.size());
        CHECK(s.frames[f].size() == (f >= 3 && f < 8 ? 2u : 3u));
        std::vector<int> seen(4, 0);
        for (const auto& d : s.frames[f]) ++seen[static_cast<std::size_t>(d.true_id)];
        for (const auto& p : s.ground_truth[f].people) CHECK(seen[static_cast<std::size_t>(p.track_id)] == 1);
    }
}

TEST_CASE("attention map values") {
    const auto l = SkeletonLayout::builtin("coco17");
    std::vector<Keypoint> k(17, {0, 0, 0});
    k[0] = {2, 2, 1};
    k[1] = {6, 2, 1};
    const Pose p = make_pose(l, k, 1, {0, 0, 20, 20});
    const auto a = attention_from_pose(p, 20, 20, 1.5);
    CHECK(a.at(0, 2, 2) == doctest::Approx(1.0));
    CHECK(a.at(0, 19, 19) < 1e-12);
    CHECK(a.at(0, 2, 4) == doctest::Approx(std::exp(-4.0 / (2.0 * 1.5 * 1.5))).epsilon(1e-12));
    CHECK_NOTHROW(a.validate(true));
}
