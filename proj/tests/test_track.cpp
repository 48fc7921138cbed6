#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <map>
#include <set>

#include "posepipe/error.hpp"
#include "posepipe/synth.hpp"
#include "posepipe/track.hpp"

using namespace posepipe;
using namespace posepipe::track;

namespace {

IdentityEmbedding basis(std::size_t i, double sign = 1.0) {
    std::vector<double> v(kEmbeddingDim, 0.0);
    v[i] = sign;
    return IdentityEmbedding::normalized(v);
}

IdentityEmbedding random_embedding(std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    std::vector<double> v(kEmbeddingDim);
    for (auto& x : v) x = n(rng);
    return IdentityEmbedding::normalized(v);
}

FeatureMap random_map(std::size_t c, std::size_t h, std::size_t w, std::mt19937_64& rng, double lo = -1.0,
                      double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    FeatureMap m(c, h, w);
    for (auto& v : m.values) v = u(rng);
    return m;
}

DistanceMatrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng, double hi) {
    std::uniform_real_distribution<double> u(0.0, hi);
    DistanceMatrix m(r, c);
    for (auto& v : m.values) v = std::round(u(rng) * 20.0) / 20.0;
    return m;
}

Pose shape(const LayoutPtr& l, double x0, double y0, double s) {
    std::vector<Keypoint> k;
    for (std::size_t j = 0; j < l->joint_count(); ++j)
        k.push_back({x0 + s * (0.1 + 0.05 * static_cast<double>(j % 10)),
                     y0 + s * 2.0 * (0.05 + 0.1 * static_cast<double>(j / 10)), 1.0});
    return make_pose(l, k, 1.0, {x0, y0, x0 + s, y0 + 2.0 * s});
}

Track make_track(std::int64_t id, const DetectionBox& b, std::optional<Pose> pose = std::nullopt) {
    return Track{id, BoxKalman(b, {}), std::move(pose), std::nullopt, 0, 0, TrackStatus::active};
}

} // namespace

TEST_CASE("identity embedding normalisation") {
    std::vector<double> v(kEmbeddingDim, 2.0);
    const auto e = IdentityEmbedding::normalized(v);
    double n = 0.0;
    for (double x : e.values()) n += x * x;
    CHECK(std::sqrt(n) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK_THROWS_AS(IdentityEmbedding::normalized(std::vector<double>(kEmbeddingDim, 0.0)), NumericalError);
    CHECK_THROWS_AS(IdentityEmbedding::normalized(std::vector<double>(3, 1.0)), InvalidArgument);
}

TEST_CASE("pga_fuse") {
    std::mt19937_64 rng(1);
    const auto id = random_map(4, 3, 3, rng);
    const auto z = pga_fuse(id, FeatureMap(4, 3, 3, 0.0));
    CHECK(z.values == id.values);
    const auto o = pga_fuse(id, FeatureMap(4, 3, 3, 1.0));
    for (std::size_t i = 0; i < id.values.size(); ++i) CHECK(o.values[i] == 2.0 * id.values[i]);
    for (int t = 0; t < 20; ++t) {
        const auto a = random_map(4, 3, 3, rng, 0.0, 1.0);
        const auto m = random_map(4, 3, 3, rng);
        const auto f = pga_fuse(m, a), r = synth::oracle::pga_fuse(m, a);
        for (std::size_t i = 0; i < f.values.size(); ++i) CHECK(std::abs(f.values[i] - r.values[i]) <= 1e-12);
        const auto a1 = random_map(1, 3, 3, rng, 0.0, 1.0);
        const auto b = pga_fuse(m, a1), rb = synth::oracle::pga_fuse(m, a1);
        for (std::size_t i = 0; i < b.values.size(); ++i) CHECK(std::abs(b.values[i] - rb.values[i]) <= 1e-12);
    }
    CHECK_THROWS_AS(pga_fuse(id, FeatureMap(2, 3, 3, 0.0)), InvalidArgument);
    CHECK_THROWS_AS(pga_fuse(id, FeatureMap(4, 3, 3, 2.0)), InvalidArgument);
}

TEST_CASE("embedder") {
    const Embedder e(2 * 4 * 4, 42);
    CHECK_THROWS_AS(e.embed(FeatureMap(2, 4, 4, 0.0)), NumericalError);
    CHECK_THROWS_AS(e.embed(FeatureMap(1, 4, 4, 1.0)), InvalidArgument);
    std::mt19937_64 rng(2);
    const auto m = random_map(2, 4, 4, rng);
    CHECK(e.embed(m).values() == Embedder(32, 42).embed(m).values());

    Eigen::MatrixXd w = Eigen::MatrixXd::Zero(kEmbeddingDim, 8);
    for (int i = 0; i < 8; ++i) w(i, i) = 1.0;
    const Embedder block(w);
    FeatureMap a(1, 2, 4, 0.0), b(1, 2, 4, 0.0);
    a.values = {1, 2, 0, 0, 3, 0, 0, 0};
    b.values = {0, 0, 5, 1, 0, 2, 2, 7};
    CHECK(std::abs(block.embed(a).dot(block.embed(b))) <= 1e-12);
    CHECK_THROWS_AS(Embedder(Eigen::MatrixXd::Zero(3, 8)), InvalidArgument);
}

TEST_CASE("embedding affinity") {
    const std::vector<IdentityEmbedding> d{basis(0), basis(1)};
    const std::vector<IdentityEmbedding> t{basis(0), basis(1, -1.0), basis(1)};
    const auto m = embedding_affinity(d, t);
    CHECK(m.at(0, 0) == doctest::Approx(0.0));
    CHECK(m.at(1, 1) == doctest::Approx(1.0));
    CHECK(m.at(1, 2) == doctest::Approx(0.0));
    CHECK(m.at(0, 1) == doctest::Approx(0.5));
    std::mt19937_64 rng(3);
    std::vector<IdentityEmbedding> rd, rt;
    for (int i = 0; i < 5; ++i) rd.push_back(random_embedding(rng));
    for (int i = 0; i < 4; ++i) rt.push_back(random_embedding(rng));
    const auto r = embedding_affinity(rd, rt);
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < 4; ++j) {
            double dot = 0.0;
            for (std::size_t k = 0; k < kEmbeddingDim; ++k) dot += rd[i].values()[k] * rt[j].values()[k];
            CHECK(std::abs(r.at(i, j) - (1.0 - dot) / 2.0) <= 1e-9);
        }
}

TEST_CASE("stage_match examples") {
    DistanceMatrix a(1, 1, 0.3);
    const auto l = stage_match(a, 0.7);
    REQUIRE(l.links.size() == 1);
    CHECK(l.untracked.empty());
    DistanceMatrix b(1, 1, 0.8);
    const auto u = stage_match(b, 0.7);
    CHECK(u.links.empty());
    CHECK(u.untracked == std::vector<std::size_t>{0});

    DistanceMatrix c(2, 2);
    c.values = {0.2, 0.5, 0.1, 0.6};
    const auto r = stage_match(c, 0.7);
    REQUIRE(r.links.size() == 1);
    CHECK(r.links[0] == std::pair<std::size_t, std::size_t>{1, 0});
    CHECK(r.untracked == std::vector<std::size_t>{0});
}

TEST_CASE("stage_match agrees with the rule oracle") {
    std::mt19937_64 rng(4);
    std::uniform_int_distribution<std::size_t> dim(0, 4);
    for (int t = 0; t < 1000; ++t) {
        const auto m = random_matrix(dim(rng), dim(rng), rng, 1.0);
        const auto r = stage_match(m, 0.7);
        CHECK(r.links == synth::oracle::stage_links(m, 0.7));
        CHECK(r.links.size() + r.untracked.size() == m.rows);
    }
}

TEST_CASE("cascade agrees with the oracle") {
    std::mt19937_64 rng(5);
    std::uniform_int_distribution<std::size_t> dim(0, 6);
    std::bernoulli_distribution valid(0.7);
    const MsimConfig cfg;
    for (int t = 0; t < 1000; ++t) {
        const std::size_t r = dim(rng), c = dim(rng);
        const auto emb = random_matrix(r, c, rng, 1.0);
        const auto fus = random_matrix(r, c, rng, 1.5);
        std::vector<bool> vr(r), vc(c);
        for (std::size_t i = 0; i < r; ++i) vr[i] = valid(rng);
        for (std::size_t i = 0; i < c; ++i) vc[i] = valid(rng);
        const auto res = cascade_match(emb, vr, vc, fus, cfg);
        auto links = res.links;
        std::sort(links.begin(), links.end());
        CHECK(links == synth::oracle::cascade(emb, vr, vc, fus, cfg));
        std::set<std::size_t> rows, cols;
        for (const auto& [p, q] : res.links) {
            CHECK(rows.insert(p).second);
            CHECK(cols.insert(q).second);
        }
        CHECK(res.links.size() + res.unmatched.size() == r);
        CHECK(res.stages.size() == res.links.size());
    }
}

TEST_CASE("normalized pose distance") {
    const auto l = SkeletonLayout::builtin("halpe136");
    const nms::NmsParams prm = MsimConfig{}.shape;
    const Pose a = shape(l, 10, 20, 50);
    CHECK(normalized_pose_distance(a, a, prm) == doctest::Approx(0.0));
    CHECK(normalized_pose_distance(a, shape(l, 300, -40, 120), prm) == doctest::Approx(0.0).epsilon(1e-12));
    Pose b = shape(l, 300, -40, 120);
    for (std::size_t j = 5; j < 11; ++j) b.keypoints[j].x += 30.0;
    const double d = normalized_pose_distance(a, b, prm);
    CHECK(d > 0.0);
    CHECK(d == doctest::Approx(synth::oracle::normalized_pose_distance(a, b, prm)).epsilon(1e-12));
    Pose bad = a;
    bad.box.x_max = bad.box.x_min;
    CHECK_THROWS_AS(normalized_pose_distance(a, bad, prm), InvalidArgument);
}

TEST_CASE("fusion matrix") {
    const auto l = SkeletonLayout::builtin("halpe136");
    const MsimConfig cfg;
    const Pose a = shape(l, 0, 0, 50);
    std::vector<TrackInput> dets{{a.box, a, std::nullopt}};
    std::vector<Track> tracks{make_track(1, a.box, a)};
    CHECK(fusion_matrix(dets, tracks, 3.0, cfg.shape).at(0, 0) == doctest::Approx(0.0).epsilon(1e-9));

    Pose far = shape(l, 1000, 1000, 50);
    for (auto& k : far.keypoints) {
        k.x = far.box.x_max - (k.x - far.box.x_min);
        k.y = far.box.y_max - (k.y - far.box.y_min);
    }
    tracks = {make_track(1, far.box, far)};
    const double v = fusion_matrix(dets, tracks, 1.0, cfg.shape).at(0, 0);
    CHECK(v > 1.9);
    CHECK(v <= 2.0);

    std::mt19937_64 rng(6);
    std::vector<TrackInput> rd;
    std::vector<Track> rt;
    for (int i = 0; i < 4; ++i) {
        const Pose p = synth::random_pose(l, {40.0 * i, 10, 40.0 * i + 60, 160}, rng);
        rd.push_back({p.box, p, std::nullopt});
    }
    for (int i = 0; i < 3; ++i) {
        const Pose p = synth::random_pose(l, {50.0 * i, 0, 50.0 * i + 60, 150}, rng);
        rt.push_back(make_track(i + 1, p.box, i == 2 ? std::nullopt : std::optional<Pose>(p)));
    }
    const auto m = fusion_matrix(rd, rt, 1.0, cfg.shape);
    for (std::size_t i = 0; i < rd.size(); ++i)
        for (std::size_t j = 0; j < rt.size(); ++j) {
            double e = 1.0 - iou(rd[i].box, rt[j].kalman.box());
            if (rt[j].last_pose) e += synth::oracle::normalized_pose_distance(*rd[i].pose, *rt[j].last_pose, cfg.shape);
            CHECK(m.at(i, j) == doctest::Approx(e).epsilon(1e-12));
        }
}

TEST_CASE("kalman is exact under zero noise") {
    KalmanConfig cfg;
    cfg.measurement_var.fill(0.0);
    cfg.process_var.fill(0.0);
    auto truth = [](int t) {
        const double cx = 100.0 + 3.5 * t, cy = 50.0 - 1.25 * t;
        return DetectionBox{cx - 20, cy - 40, cx + 20, cy + 40};
    };
    BoxKalman k(truth(0), cfg);
    for (int t = 1; t < 30; ++t) {
        k.predict();
        if (t > 2) {
            const auto p = k.box(), e = truth(t);
            CHECK(std::abs(p.x_min - e.x_min) <= 1e-6);
            CHECK(std::abs(p.y_min - e.y_min) <= 1e-6);
            CHECK(std::abs(p.x_max - e.x_max) <= 1e-6);
            CHECK(std::abs(p.y_max - e.y_max) <= 1e-6);
        }
        k.update(truth(t));
        const Eigen::SelfAdjointEigenSolver<Eigen::Matrix<double, 8, 8>> es(k.covariance());
        CHECK(es.eigenvalues().minCoeff() >= -1e-9);
    }
}

TEST_CASE("cold start and id uniqueness") {
    Tracker tr;
    std::vector<TrackInput> d{{{0, 0, 10, 20}, std::nullopt, std::nullopt},
                              {{100, 0, 110, 20}, std::nullopt, std::nullopt},
                              {{200, 0, 210, 20}, std::nullopt, std::nullopt}};
    const auto a = tr.step(0, d);
    REQUIRE(a.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(a[i].detection == i);
        CHECK(a[i].track_id == static_cast<std::int64_t>(i + 1));
        CHECK(a[i].stage == MatchStage::fresh);
    }
    const auto b = tr.step(1, d);
    for (std::size_t i = 0; i < 3; ++i) CHECK(b[i].track_id == static_cast<std::int64_t>(i + 1));
    CHECK_NOTHROW(tr.track_box(2));
    CHECK_THROWS_AS(tr.track_box(99), NotFound);

    MsimConfig cfg;
    cfg.max_lost = 2;
    Tracker t2(cfg);
    std::set<std::int64_t> seen;
    for (std::int64_t f = 0; f < 40; ++f) {
        std::vector<TrackInput> one{{{1000.0 * static_cast<double>(f % 3), 0, 1000.0 * static_cast<double>(f % 3) + 10, 20},
                                     std::nullopt, std::nullopt}};
        const auto r = t2.step(f, one);
        if (r[0].stage == MatchStage::fresh) CHECK(seen.insert(r[0].track_id).second);
        CHECK(t2.pool().tracks.size() <= 3);
    }
}

TEST_CASE("crossing with orthogonal embeddings keeps identities") {
    std::mt19937_64 rng(7);
    synth::TrajectoryOptions opt;
    opt.crossing = true;
    const auto scene = synth::gen_trajectories(2, 100, opt, rng);
    Tracker tr;
    std::map<std::int64_t, std::int64_t> truth_to_id;
    for (std::size_t f = 0; f < scene.frames.size(); ++f) {
        std::vector<TrackInput> in;
        for (const auto& d : scene.frames[f]) in.push_back(d.input);
        for (const auto& a : tr.step(static_cast<std::int64_t>(f), in)) {
            const auto t = scene.frames[f][a.detection].true_id;
            const auto [it, fresh] = truth_to_id.emplace(t, a.track_id);
            CHECK(it->second == a.track_id);
        }
    }
}

TEST_CASE("msim config validation") {
    MsimConfig c;
    CHECK_NOTHROW(c.validate());
    c.relax_factor = 1.0;
    CHECK_THROWS_AS(c.validate(), InvalidArgument);
    c = {};
    c.mu_emb = 0.0;
    CHECK_THROWS_AS(c.validate(), InvalidArgument);
}
