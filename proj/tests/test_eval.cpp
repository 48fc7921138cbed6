#include <doctest.h>

#include <cmath>
#include <random>

#include "posepipe/error.hpp"
#include "posepipe/eval.hpp"
#include "posepipe/synth.hpp"

using namespace posepipe;
using namespace posepipe::eval;

namespace {

Pose pose_at(const LayoutPtr& l, double x0, double y0, double score) {
    std::vector<Keypoint> k;
    for (std::size_t j = 0; j < l->joint_count(); ++j)
        k.push_back({x0 + 3.0 * static_cast<double>(j % 8), y0 + 4.0 * static_cast<double>(j / 8), 1.0});
    return make_pose(l, k, score, {x0, y0, x0 + 60, y0 + 80});
}

TrackFrame frame_of(std::int64_t f, std::vector<TrackedPose> people) { return {f, std::move(people)}; }

} // namespace

TEST_CASE("oks spot values") {
    const auto l = SkeletonLayout::builtin("halpe136");
    const Pose p = pose_at(l, 10, 10, 1.0);
    CHECK(oks(p, p, 1e4) == doctest::Approx(1.0));
    CHECK(oks(pose_at(l, 1e7, 1e7, 1.0), p, 1e4) == doctest::Approx(0.0));

    Pose gt = p;
    for (auto& k : gt.keypoints) k.confidence = 0.0;
    gt.keypoints[30].confidence = 1.0;
    Pose pred = gt;
    pred.keypoints[30].x += 1.5;
    CHECK(l->oks_k()[30] == 0.015);
    CHECK(oks(pred, gt, 1e4) == doctest::Approx(std::exp(-0.5)).epsilon(1e-12));

    for (auto& k : gt.keypoints) k.confidence = 0.0;
    CHECK_THROWS_AS(oks(pred, gt, 1e4), InvalidArgument);
    CHECK_THROWS_AS(oks(p, p, 0.0), InvalidArgument);
}

TEST_CASE("oks decreases with joint distance") {
    const auto l = SkeletonLayout::builtin("coco17");
    const Pose gt = pose_at(l, 0, 0, 1.0);
    double last = 1.0;
    for (double d = 0.5; d < 20.0; d += 0.5) {
        Pose p = gt;
        p.keypoints[6].y += d;
        const double v = oks(p, gt, 4800.0);
        CHECK(v < last);
        last = v;
    }
}

TEST_CASE("perfect predictions give AP 1, empty predictions AP 0") {
    const auto l = SkeletonLayout::builtin("coco17");
    std::vector<ImageGroundTruth> gts;
    std::vector<ImagePredictions> preds, none;
    for (int i = 0; i < 4; ++i) {
        ImageGroundTruth g{i, {}};
        ImagePredictions p{i, {}};
        for (int j = 0; j < 3; ++j) {
            const Pose q = pose_at(l, 100.0 * j, 0, 0.9 - 0.1 * j - 0.01 * i);
            g.instances.push_back({q, 0.0});
            p.poses.push_back(q);
        }
        gts.push_back(g);
        preds.push_back(p);
    }
    const auto r = map_eval(preds, gts);
    CHECK(r.ap == doctest::Approx(1.0));
    CHECK(r.ar == doctest::Approx(1.0));
    for (double a : r.ap_per_threshold) CHECK(a == doctest::Approx(1.0));
    const auto e = map_eval(none, gts);
    CHECK(e.ap == 0.0);
    CHECK(e.ar == 0.0);
}

TEST_CASE("hand-simulated precision-recall case") {
    const auto l = SkeletonLayout::builtin("coco17");
    const Pose a = pose_at(l, 0, 0, 0.9), b = pose_at(l, 0, 0, 0.7), c = pose_at(l, 0, 0, 1.0);
    std::vector<ImageGroundTruth> gts{{1, {{a, 0.0}}}, {2, {{b, 0.0}}}, {3, {{c, 0.0}}}};
    std::vector<ImagePredictions> preds{{1, {a}}, {2, {pose_at(l, 5000, 5000, 0.8), b}}};
    // Ranked TP, FP, TP over 3 ground truths: recall 1/3 holds precision 1 on
    // 34 recall points, recall 2/3 holds 2/3 on 33 points.
    const auto r = map_eval(preds, gts);
    CHECK(std::abs(r.ap - 56.0 / 101.0) <= 1e-9);
    CHECK(std::abs(r.ar - 2.0 / 3.0) <= 1e-9);
}

TEST_CASE("AP is invariant to monotone score rescaling") {
    const auto l = SkeletonLayout::builtin("coco17");
    std::mt19937_64 rng(12);
    std::normal_distribution<double> n(0.0, 3.0);
    std::uniform_real_distribution<double> s(0.05, 0.95);
    std::vector<ImageGroundTruth> gts;
    std::vector<ImagePredictions> preds, scaled;
    for (int i = 0; i < 6; ++i) {
        ImageGroundTruth g{i, {}};
        ImagePredictions p{i, {}};
        for (int j = 0; j < 3; ++j) {
            const Pose q = pose_at(l, 100.0 * j, 0, 1.0);
            g.instances.push_back({q, 0.0});
            Pose d = q;
            for (auto& k : d.keypoints) {
                k.x += n(rng);
                k.y += n(rng);
            }
            d.score = s(rng);
            p.poses.push_back(d);
        }
        gts.push_back(g);
        preds.push_back(p);
        ImagePredictions t = p;
        for (auto& d : t.poses) d.score = d.score * d.score * 0.5;
        scaled.push_back(t);
    }
    CHECK(map_eval(preds, gts).ap == map_eval(scaled, gts).ap);
}

TEST_CASE("map_eval argument errors") {
    const auto l = SkeletonLayout::builtin("coco17");
    const Pose a = pose_at(l, 0, 0, 0.9);
    std::vector<ImageGroundTruth> dup{{1, {{a, 0.0}}}, {1, {{a, 0.0}}}};
    CHECK_THROWS_AS(map_eval(std::vector<ImagePredictions>{}, dup), InvalidArgument);
    std::vector<ImageGroundTruth> one{{1, {{a, 0.0}}}};
    CHECK_THROWS_AS(map_eval(std::vector<ImagePredictions>{{7, {a}}}, one), InvalidArgument);
}

TEST_CASE("mot_eval on identity predictions") {
    const auto l = SkeletonLayout::builtin("halpe136");
    std::vector<TrackFrame> gt;
    for (int f = 0; f < 10; ++f) gt.push_back(frame_of(f, {{1, pose_at(l, 10.0 * f, 0, 1)}, {2, pose_at(l, 500, 10.0 * f, 1)}}));
    const auto r = mot_eval(gt, gt);
    CHECK(r.mota == doctest::Approx(1.0));
    CHECK(r.motp == doctest::Approx(0.0));
    CHECK(r.precision == doctest::Approx(1.0));
    CHECK(r.recall == doctest::Approx(1.0));
    CHECK(r.id_switches == 0);
}

TEST_CASE("mot_eval on a single identity swap") {
    const auto l = SkeletonLayout::builtin("halpe136");
    const std::int64_t T = 10, swap_at = 4;
    std::vector<TrackFrame> gt, pred;
    for (std::int64_t f = 0; f < T; ++f) {
        const Pose a = pose_at(l, 0, 0, 1), b = pose_at(l, 500, 0, 1);
        gt.push_back(frame_of(f, {{1, a}, {2, b}}));
        if (f < swap_at) pred.push_back(frame_of(f, {{1, a}, {2, b}}));
        else pred.push_back(frame_of(f, {{2, a}, {1, b}}));
    }
    const auto r = mot_eval(pred, gt);
    CHECK(r.id_switches == 2 * l->joint_count());
    for (const auto& j : r.per_joint) {
        CHECK(j.id_switches == 2);
        CHECK(j.mota == doctest::Approx(1.0 - 2.0 / (2.0 * T)));
    }
    CHECK(r.mota == doctest::Approx(1.0 - 1.0 / static_cast<double>(T)));
}

TEST_CASE("mot_eval with every prediction dropped") {
    const auto l = SkeletonLayout::builtin("halpe136");
    std::vector<TrackFrame> gt, pred;
    for (int f = 0; f < 5; ++f) {
        gt.push_back(frame_of(f, {{1, pose_at(l, 0, 0, 1)}}));
        pred.push_back(frame_of(f, {}));
    }
    const auto r = mot_eval(pred, gt);
    CHECK(r.mota == doctest::Approx(0.0));
    CHECK(r.recall == 0.0);
}

TEST_CASE("mot_eval argument errors") {
    const auto coco = SkeletonLayout::builtin("coco17");
    std::vector<TrackFrame> c{frame_of(0, {{1, pose_at(coco, 0, 0, 1)}})};
    CHECK_THROWS_AS(mot_eval(c, c), InvalidArgument);
    const auto l = SkeletonLayout::builtin("halpe136");
    std::vector<TrackFrame> gt{frame_of(0, {{1, pose_at(l, 0, 0, 1)}})};
    std::vector<TrackFrame> pred{frame_of(3, {{1, pose_at(l, 0, 0, 1)}})};
    CHECK_THROWS_AS(mot_eval(pred, gt), InvalidArgument);
}
