#include "posepipe/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <thread>

namespace posepipe::pipeline {

const char* stage_name(StageName s) {
    switch (s) {
    case StageName::load: return "load";
    case StageName::detect: return "detect";
    case StageName::transform: return "transform";
    case StageName::pose: return "pose";
    case StageName::post: return "post";
    }
    return "unknown";
}

void LatencyHistogram::add(double seconds) {
    const double us = std::max(seconds * 1e6, 0.0);
    std::size_t b = 0;
    if (us >= 1.0) b = std::min<std::size_t>(static_cast<std::size_t>(std::floor(std::log2(us))) + 1, kBuckets - 1);
    ++counts[b];
    ++samples;
    total_seconds += seconds;
    max_seconds = std::max(max_seconds, seconds);
}

PipelineError::PipelineError(std::int64_t frame, StageName stage, const std::string& message)
    : Error(std::string("stage ") + stage_name(stage) + " failed on frame " + std::to_string(frame) + ": " +
            message),
      frame_(frame), stage_(stage) {}

namespace {

using Clock = std::chrono::steady_clock;

struct Item {
    std::uint64_t seq = 0;
    FrameBundle bundle;
};

struct Failure {
    std::int64_t frame = 0;
    StageName stage = StageName::load;
    std::string message;
};

class Run {
public:
    Run(std::span<const StageSpec> stages, const Source& source, const Sink& sink)
        : stages_(stages), source_(source), sink_(sink) {
        for (const auto& s : stages) queues_.push_back(std::make_unique<BoundedQueue<Item>>(s.capacity));
    }

    RunStats concurrent() {
        const auto start = Clock::now();
        std::vector<std::thread> workers;
        for (std::size_t i = 0; i < kStageCount; ++i) workers.emplace_back([this, i] { stage_loop(i); });
        feed_loop();
        for (auto& t : workers) t.join();
        return finish(start);
    }

    RunStats sequential() {
        const auto start = Clock::now();
        bool source_done = false;
        while (!failed_) {
            bool progressed = false;
            for (std::size_t i = kStageCount; i-- > 0 && !failed_;) {
                auto item = queues_[i]->try_pop();
                if (!item) continue;
                progressed = true;
                if (!execute(i, *item)) break;
                forward(i, std::move(*item));
            }
            if (failed_) break;
            if (!source_done && queues_[0]->size() < queues_[0]->capacity()) {
                auto item = next_item();
                if (item) {
                    admit_and_push(std::move(*item));
                } else {
                    source_done = true;
                }
                progressed = true;
            }
            if (!progressed && source_done) break;
        }
        return finish(start);
    }

private:
    void fail(std::int64_t frame, StageName stage, std::string message) {
        std::lock_guard lock(failure_mutex_);
        if (!failure_) failure_ = Failure{frame, stage, std::move(message)};
        failed_ = true;
    }

    // Pulls the next bundle from the source and checks per-source ordering.
    std::optional<Item> next_item() {
        std::optional<FrameBundle> b;
        try {
            b = source_();
        } catch (const std::exception& e) {
            fail(last_frame_ + 1, StageName::load, e.what());
            return std::nullopt;
        }
        if (!b) return std::nullopt;
        auto [it, inserted] = last_per_source_.try_emplace(b->source, b->frame);
        if (!inserted) {
            if (b->frame <= it->second) {
                fail(b->frame, StageName::load, "frame indices must increase per source");
                return std::nullopt;
            }
            it->second = b->frame;
        }
        last_frame_ = b->frame;
        return Item{next_seq_++, std::move(*b)};
    }

    void admit_and_push(Item item) {
        queues_[0]->push(std::move(item), [this] {
            const std::size_t now = ++in_flight_;
            std::size_t peak = peak_.load();
            while (now > peak && !peak_.compare_exchange_weak(peak, now)) {
            }
        });
    }

    void feed_loop() {
        while (!failed_) {
            auto item = next_item();
            if (!item) break;
            admit_and_push(std::move(*item));
        }
        queues_[0]->close();
    }

    bool execute(std::size_t i, Item& item) {
        const auto t0 = Clock::now();
        try {
            stages_[i].worker(item.bundle);
        } catch (const std::exception& e) {
            fail(item.bundle.frame, stages_[i].name, e.what());
            --in_flight_;
            return false;
        }
        stats_.stage_latency[i].add(std::chrono::duration<double>(Clock::now() - t0).count());
        return true;
    }

    void forward(std::size_t i, Item item) {
        if (i + 1 < kStageCount) {
            queues_[i + 1]->push(std::move(item));
            return;
        }
        // Reorder buffer: release strictly by admission sequence.
        const std::int64_t frame = item.bundle.frame;
        pending_.emplace(item.seq, std::move(item.bundle));
        while (!pending_.empty() && pending_.begin()->first == next_out_) {
            try {
                sink_(std::move(pending_.begin()->second));
            } catch (const std::exception& e) {
                fail(frame, StageName::post, e.what());
            }
            pending_.erase(pending_.begin());
            ++next_out_;
            ++sunk_;
            --in_flight_;
        }
    }

    void stage_loop(std::size_t i) {
        while (auto item = queues_[i]->pop()) {
            if (failed_) {
                --in_flight_;
                continue;
            }
            if (!execute(i, *item)) continue;
            if (failed_) {
                --in_flight_;
                continue;
            }
            forward(i, std::move(*item));
        }
        if (i + 1 < kStageCount) queues_[i + 1]->close();
    }

    RunStats finish(Clock::time_point start) {
        if (failure_) throw PipelineError(failure_->frame, failure_->stage, failure_->message);
        stats_.frames = sunk_;
        stats_.elapsed_seconds = std::chrono::duration<double>(Clock::now() - start).count();
        stats_.throughput_fps =
            stats_.elapsed_seconds > 0.0 ? static_cast<double>(sunk_) / stats_.elapsed_seconds : 0.0;
        stats_.peak_in_flight = peak_;
        return stats_;
    }

    std::span<const StageSpec> stages_;
    const Source& source_;
    const Sink& sink_;
    std::vector<std::unique_ptr<BoundedQueue<Item>>> queues_;
    std::atomic<std::size_t> in_flight_{0};
    std::atomic<std::size_t> peak_{0};
    std::atomic<bool> failed_{false};
    std::mutex failure_mutex_;
    std::optional<Failure> failure_;
    std::map<std::int64_t, std::int64_t> last_per_source_;
    std::int64_t last_frame_ = -1;
    std::uint64_t next_seq_ = 0;
    std::uint64_t next_out_ = 0;
    std::uint64_t sunk_ = 0;
    std::map<std::uint64_t, FrameBundle> pending_;
    RunStats stats_;
};

} // namespace

RunStats run_pipeline(std::span<const StageSpec> stages, const Source& source, const Sink& sink,
                      const RunOptions& options) {
    if (stages.size() != kStageCount) throw InvalidArgument("the pipeline needs exactly five stages");
    for (std::size_t i = 0; i < kStageCount; ++i) {
        if (stages[i].name != static_cast<StageName>(i))
            throw InvalidArgument("stages must be ordered load, detect, transform, pose, post");
        if (stages[i].capacity == 0) throw InvalidArgument("queue capacity must be at least 1");
        if (!stages[i].worker) throw InvalidArgument(std::string("stage ") + stage_name(stages[i].name) + " has no worker");
    }
    if (!source || !sink) throw InvalidArgument("source and sink are required");
    Run run(stages, source, sink);
    return options.sequential ? run.sequential() : run.concurrent();
}

FileDetector::FileDetector(std::map<std::int64_t, std::vector<DetectionRecord>> frames, double score_floor)
    : frames_(std::move(frames)), score_floor_(score_floor) {}

const std::vector<DetectionRecord>& FileDetector::records(std::int64_t frame) const {
    auto it = frames_.find(frame);
    if (it == frames_.end()) throw NotFound("no detections recorded for frame " + std::to_string(frame));
    return it->second;
}

std::vector<std::size_t> FileDetector::detect(std::int64_t frame) const {
    const auto& recs = records(frame);
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < recs.size(); ++i)
        if (recs[i].box.score >= score_floor_) out.push_back(i);
    return out;
}

std::vector<std::int64_t> FileDetector::frames() const {
    std::vector<std::int64_t> out;
    for (const auto& [f, _] : frames_) out.push_back(f);
    return out;
}

FilePoseBackend::FilePoseBackend(std::vector<Heatmap> heatmaps) : heatmaps_(std::move(heatmaps)) {}

const Heatmap& FilePoseBackend::heatmap(std::size_t crop_id) const {
    if (crop_id >= heatmaps_.size())
        throw NotFound("no heatmap for crop " + std::to_string(crop_id) + " (file holds " +
                       std::to_string(heatmaps_.size()) + ")");
    return heatmaps_[crop_id];
}

} // namespace posepipe::pipeline
