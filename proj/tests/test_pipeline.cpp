#include <doctest.h>

#include <atomic>
#include <chrono>
#include <random>
#include <thread>

#include "posepipe/error.hpp"
#include "posepipe/pipeline.hpp"

using namespace posepipe;
using namespace posepipe::pipeline;

namespace {

Source counting_source(std::int64_t n) {
    auto next = std::make_shared<std::int64_t>(0);
    return [n, next]() -> std::optional<FrameBundle> {
        if (*next >= n) return std::nullopt;
        FrameBundle b;
        b.frame = (*next)++;
        return b;
    };
}

std::vector<StageSpec> stages(std::size_t cap, std::function<void(StageName, FrameBundle&)> f) {
    std::vector<StageSpec> out;
    for (std::size_t i = 0; i < kStageCount; ++i) {
        const auto name = static_cast<StageName>(i);
        out.push_back({name, cap, [f, name](FrameBundle& b) { f(name, b); }});
    }
    return out;
}

} // namespace

TEST_CASE("bounded queue") {
    BoundedQueue<int> q(2);
    CHECK_THROWS_AS(BoundedQueue<int>(0), InvalidArgument);
    int a = 1, b = 2, c = 3;
    CHECK(q.try_push(a));
    CHECK(q.try_push(b));
    CHECK_FALSE(q.try_push(c));
    CHECK(q.size() == 2);
    CHECK(*q.pop() == 1);
    q.close();
    CHECK(*q.pop() == 2);
    CHECK_FALSE(q.pop().has_value());
    CHECK_FALSE(q.push(4));
}

TEST_CASE("identity workers preserve order") {
    for (bool sequential : {false, true}) {
        std::vector<std::int64_t> seen;
        const auto st = run_pipeline(stages(4, [](StageName, FrameBundle&) {}), counting_source(100),
                                     [&](FrameBundle&& b) { seen.push_back(b.frame); }, {sequential});
        REQUIRE(seen.size() == 100);
        for (std::int64_t i = 0; i < 100; ++i) CHECK(seen[static_cast<std::size_t>(i)] == i);
        CHECK(st.frames == 100);
        CHECK(st.stage_latency[0].samples == 100);
    }
}

TEST_CASE("stage outputs flow downstream") {
    std::vector<std::string> out;
    run_pipeline(stages(2,
                        [](StageName s, FrameBundle& b) {
                            b.output.push_back(std::string(stage_name(s)) + ":" + std::to_string(b.frame));
                        }),
                 counting_source(3), [&](FrameBundle&& b) {
                     CHECK(b.output.size() == 5);
                     out.push_back(b.output.back());
                 });
    CHECK(out == std::vector<std::string>{"post:0", "post:1", "post:2"});
}

TEST_CASE("randomized latencies lose and duplicate nothing") {
    std::atomic<std::uint64_t> salt{1};
    auto jitter = [&](StageName, FrameBundle& b) {
        std::mt19937_64 rng(static_cast<std::uint64_t>(b.frame) * 7919 + salt.fetch_add(1));
        if (rng() % 8 == 0) std::this_thread::sleep_for(std::chrono::microseconds(rng() % 200));
    };
    std::vector<int> count(2000, 0);
    std::int64_t last = -1;
    bool ordered = true;
    const auto st = run_pipeline(stages(3, jitter), counting_source(2000), [&](FrameBundle&& b) {
        ++count[static_cast<std::size_t>(b.frame)];
        ordered = ordered && b.frame == last + 1;
        last = b.frame;
    });
    for (int c : count) CHECK(c == 1);
    CHECK(ordered);
    CHECK(st.peak_in_flight <= 5 + 5 * 3);
}

TEST_CASE("back-pressure bounds in-flight bundles") {
    std::atomic<int> loaded{0};
    auto slow_post = [&](StageName s, FrameBundle&) {
        if (s == StageName::load) ++loaded;
        if (s == StageName::post) std::this_thread::sleep_for(std::chrono::milliseconds(2));
    };
    int sunk = 0;
    std::size_t max_gap = 0;
    const auto st = run_pipeline(stages(1, slow_post), counting_source(60), [&](FrameBundle&&) {
        ++sunk;
        max_gap = std::max(max_gap, static_cast<std::size_t>(loaded.load() - sunk));
    });
    CHECK(sunk == 60);
    CHECK(st.peak_in_flight <= 5 + 5 * 1);
    CHECK(max_gap <= 5 + 5 * 1);
    CHECK(st.peak_in_flight >= 3);
}

TEST_CASE("worker failure surfaces frame and stage") {
    auto fail = [](StageName s, FrameBundle& b) {
        if (s == StageName::transform && b.frame == 17) throw InvalidArgument("bad crop");
    };
    for (bool sequential : {false, true}) {
        std::size_t sunk = 0;
        try {
            run_pipeline(stages(2, fail), counting_source(50), [&](FrameBundle&&) { ++sunk; }, {sequential});
            FAIL("expected a pipeline error");
        } catch (const PipelineError& e) {
            CHECK(e.frame() == 17);
            CHECK(e.stage() == StageName::transform);
        }
        CHECK(sunk <= 17);
    }
}

TEST_CASE("stage list validation") {
    auto s = stages(2, [](StageName, FrameBundle&) {});
    std::swap(s[1], s[2]);
    CHECK_THROWS_AS(run_pipeline(s, counting_source(1), [](FrameBundle&&) {}), InvalidArgument);
    s.pop_back();
    CHECK_THROWS_AS(run_pipeline(s, counting_source(1), [](FrameBundle&&) {}), InvalidArgument);
}

TEST_CASE("file detector and pose backend") {
    std::map<std::int64_t, std::vector<DetectionRecord>> frames;
    frames[3] = {{{0, 0, 10, 10, 0.9, 0}, 0, std::nullopt, std::nullopt},
                 {{5, 5, 15, 15, 0.05, 0}, 1, std::nullopt, std::nullopt},
                 {{5, 5, 15, 15, 0.1, 0}, 2, std::nullopt, std::nullopt}};
    const FileDetector det(frames);
    CHECK(det.detect(3) == std::vector<std::size_t>{0, 2});
    CHECK(det.records(3).size() == 3);
    CHECK(det.frames() == std::vector<std::int64_t>{3});
    CHECK_THROWS_AS(det.records(4), NotFound);

    const FilePoseBackend pb({Heatmap(1, 2, 2, HeatmapKind::logits, {1, 2, 3, 4})});
    CHECK(pb.heatmap(0).at(0, 1, 1) == 4.0);
    CHECK_THROWS_AS(pb.heatmap(1), NotFound);
}

TEST_CASE("latency histogram buckets") {
    LatencyHistogram h;
    h.add(0.5e-6);
    h.add(3e-6);
    h.add(3e-6);
    CHECK(h.samples == 3);
    CHECK(h.counts[0] == 1);
    CHECK(h.counts[2] == 2);
    CHECK(h.mean_seconds() == doctest::Approx(6.5e-6 / 3));
}
