#pragma once

/// \file pipeline.hpp
/// \brief Five-stage frame pipeline connected by bounded FIFO queues, plus
/// file-backed detector and pose-backend stubs.

#include <array>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "posepipe/error.hpp"
#include "posepipe/geometry.hpp"
#include "posepipe/track.hpp"

namespace posepipe::pipeline {

inline constexpr std::size_t kStageCount = 5;
inline constexpr std::size_t kDefaultQueueCapacity = 64;

enum class StageName { load = 0, detect = 1, transform = 2, pose = 3, post = 4 };

const char* stage_name(StageName s);

/// Per-detection inputs read from the detection file.
struct DetectionRecord {
    DetectionBox box;
    std::optional<std::size_t> heatmap; ///< record index in the heatmap file
    std::optional<std::vector<double>> embedding;
    std::optional<track::FeatureMap> feature;
};

struct FrameBundle {
    std::int64_t frame = 0;
    std::int64_t source = 0;
    std::vector<DetectionRecord> records;           ///< load
    std::vector<DetectionBox> detections;           ///< detect
    std::vector<std::size_t> record_index;          ///< detect: record of each detection
    std::vector<CropTransform> crops;               ///< transform
    std::vector<Heatmap> heatmaps;                  ///< pose
    std::vector<std::optional<track::IdentityEmbedding>> embeddings; ///< pose
    std::vector<Pose> poses;                        ///< pose
    std::vector<track::Assignment> links;           ///< pose, when tracking
    std::vector<DetectionBox> track_boxes;          ///< pose, filtered box per link
    std::vector<std::string> output;                ///< post
};

using StageFn = std::function<void(FrameBundle&)>;

struct StageSpec {
    StageName name = StageName::load;
    std::size_t capacity = kDefaultQueueCapacity; ///< input queue capacity
    StageFn worker;
};

/// Blocking FIFO with a fixed capacity. close() wakes every waiter; pop then
/// drains what is left and returns nullopt once empty.
template <typename T>
class BoundedQueue {
public:
    explicit BoundedQueue(std::size_t capacity) : capacity_(capacity) {
        if (capacity == 0) throw InvalidArgument("queue capacity must be at least 1");
    }

    /// Blocks while full. `on_admit` runs under the lock once space exists.
    /// Returns false when the queue was closed.
    template <typename F>
    bool push(T value, F&& on_admit) {
        std::unique_lock lock(mutex_);
        not_full_.wait(lock, [&] { return closed_ || items_.size() < capacity_; });
        if (closed_) return false;
        on_admit();
        items_.push_back(std::move(value));
        not_empty_.notify_one();
        return true;
    }
    bool push(T value) {
        return push(std::move(value), [] {});
    }

    bool try_push(T& value) {
        std::lock_guard lock(mutex_);
        if (closed_ || items_.size() >= capacity_) return false;
        items_.push_back(std::move(value));
        not_empty_.notify_one();
        return true;
    }

    std::optional<T> pop() {
        std::unique_lock lock(mutex_);
        not_empty_.wait(lock, [&] { return closed_ || !items_.empty(); });
        return take();
    }

    std::optional<T> try_pop() {
        std::lock_guard lock(mutex_);
        return take();
    }

    void close() {
        std::lock_guard lock(mutex_);
        closed_ = true;
        not_empty_.notify_all();
        not_full_.notify_all();
    }

    std::size_t size() const {
        std::lock_guard lock(mutex_);
        return items_.size();
    }
    std::size_t capacity() const { return capacity_; }

private:
    std::optional<T> take() {
        if (items_.empty()) return std::nullopt;
        T v = std::move(items_.front());
        items_.pop_front();
        not_full_.notify_one();
        return v;
    }

    std::size_t capacity_;
    mutable std::mutex mutex_;
    std::condition_variable not_empty_;
    std::condition_variable not_full_;
    std::deque<T> items_;
    bool closed_ = false;
};

/// Power-of-two microsecond buckets: bucket b counts samples in [2^(b-1), 2^b) us.
struct LatencyHistogram {
    static constexpr std::size_t kBuckets = 32;
    std::array<std::uint64_t, kBuckets> counts{};
    std::uint64_t samples = 0;
    double total_seconds = 0.0;
    double max_seconds = 0.0;

    void add(double seconds);
    double mean_seconds() const { return samples ? total_seconds / static_cast<double>(samples) : 0.0; }
};

struct RunStats {
    std::uint64_t frames = 0;
    double elapsed_seconds = 0.0;
    double throughput_fps = 0.0;
    std::size_t peak_in_flight = 0;
    std::array<LatencyHistogram, kStageCount> stage_latency;
};

/// Raised after the pipeline drained because a stage worker threw.
class PipelineError : public Error {
public:
    PipelineError(std::int64_t frame, StageName stage, const std::string& message);
    std::int64_t frame() const { return frame_; }
    StageName stage() const { return stage_; }

private:
    std::int64_t frame_;
    StageName stage_;
};

/// Returns the next bundle to process, or nullopt at end of stream. Frame
/// indices must increase strictly per source.
using Source = std::function<std::optional<FrameBundle>()>;
using Sink = std::function<void(FrameBundle&&)>;

struct RunOptions {
    bool sequential = false; ///< step the stages round-robin on the calling thread
};

/// Runs every bundle through the five stages in order and hands it to `sink`
/// in input order. Each stage owns a thread and a bounded input queue, so a
/// slow stage blocks its upstream once the queues fill. In-flight bundles
/// (admitted to the first queue, not yet sunk) never exceed
/// 5 + sum of capacities. Throws InvalidArgument unless exactly five stages
/// are given in canonical order, and PipelineError after a worker or the
/// sink fails.
RunStats run_pipeline(std::span<const StageSpec> stages, const Source& source, const Sink& sink,
                      const RunOptions& options = {});

/// Replays detections per frame; detections below the score floor are dropped.
class FileDetector {
public:
    FileDetector(std::map<std::int64_t, std::vector<DetectionRecord>> frames, double score_floor = 0.1);

    /// Throws NotFound for a frame absent from the file.
    const std::vector<DetectionRecord>& records(std::int64_t frame) const;
    /// Indices into records(frame) that pass the floor.
    std::vector<std::size_t> detect(std::int64_t frame) const;
    std::vector<std::int64_t> frames() const;

private:
    std::map<std::int64_t, std::vector<DetectionRecord>> frames_;
    double score_floor_;
};

/// Replays precomputed heatmaps by crop id.
class FilePoseBackend {
public:
    explicit FilePoseBackend(std::vector<Heatmap> heatmaps);

    /// Throws NotFound for an unknown crop id.
    const Heatmap& heatmap(std::size_t crop_id) const;
    std::size_t size() const { return heatmaps_.size(); }

private:
    std::vector<Heatmap> heatmaps_;
};

} // namespace posepipe::pipeline
