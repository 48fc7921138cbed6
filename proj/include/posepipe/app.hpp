#pragma once

/// \file app.hpp
/// \brief File-level operations behind the command-line tool. Each returns a
/// JSON report; results go to the files named in the options.

#include <cstdint>
#include <optional>
#include <string>

#include <json.hpp>

namespace posepipe::app {

using Json = nlohmann::json;

struct RunOptions {
    std::string detections;
    std::string heatmaps;
    std::string layout = "halpe136";
    std::string out;
    std::optional<std::string> nms_params; ///< file; default parameters otherwise
    bool nms = true;
    bool track = false;
    bool sequential = false;
    std::size_t queue_capacity = 64;
    std::uint64_t seed = 0; ///< seeds the feature-to-embedding projection
    std::optional<std::string> openpose_dir;
    std::optional<std::string> mot_csv;
};

/// Detections + heatmaps through the five-stage pipeline. Writes track
/// JSONL with tracking, a COCO results array otherwise.
Json run(const RunOptions& options);

Json eval_map(const std::string& predictions, const std::string& ground_truth, const std::string& layout,
              const std::optional<std::string>& part);

Json eval_mot(const std::string& predictions, const std::string& ground_truth, const std::string& layout,
              double pckh_threshold);

struct NmsOptions {
    std::string candidates;
    std::optional<std::string> ground_truth; ///< present: optimise parameters
    std::optional<std::string> params;
    std::string layout = "halpe136";
    std::string out;
    std::size_t max_iterations = 10;
    unsigned threads = 0;
};

/// With ground truth, searches parameters and writes them to `out`;
/// without, applies the parameters and writes the surviving candidates.
Json nms(const NmsOptions& options);

Json pgpg_fit(const std::string& data, const std::string& part, std::size_t components, std::uint64_t seed,
              std::size_t bic_max, const std::string& out);

Json pgpg_sample(const std::string& model, const std::array<double, 4>& gt_box, std::size_t n, bool uniform,
                 std::uint64_t seed, const std::string& out);

struct BenchOptions {
    std::size_t frames = 200;
    double latency_ms = 2.0;
    std::size_t queue_capacity = 8;
};

/// Five equal sleeping stages, concurrent versus sequential.
Json bench(const BenchOptions& options);

struct SynthOptions {
    std::string out_dir;
    std::string layout = "halpe136";
    std::size_t frames = 10;
    std::size_t people = 2;
    std::size_t duplicates = 1;
    std::size_t heatmap_width = 16;
    std::size_t heatmap_height = 32;
    std::uint64_t seed = 0;
};

/// Writes detections.jsonl, heatmaps.hmap, gt_tracks.jsonl and gt_coco.json.
Json synth(const SynthOptions& options);

} // namespace posepipe::app
