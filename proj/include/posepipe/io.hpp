#pragma once

/// \file io.hpp
/// \brief Readers and writers for the on-disk formats used by the CLI.
///
/// Formats:
///  - detections JSONL, one frame per line:
///    {"frame": 3, "detections": [{"box": [x1, y1, x2, y2], "score": 0.9,
///     "category": 0, "heatmap": 7, "embedding": [...128],
///     "feature": {"shape": [C, H, W], "values": [...]}}]}
///    "heatmap" defaults to the running index of the detection in the file.
///  - heatmap file (.hmap): back-to-back records of "HMAP", u32 joints,
///    u32 height, u32 width, u8 kind, then joints*height*width little-endian
///    f32 values in row-major order.
///  - COCO keypoint ground truth ({"annotations": [...]}) and results
///    ([{"image_id", "category_id", "keypoints", "score"}]).
///  - track JSONL: {"frame", "track_id", "box", "keypoints", "score"} per line.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "posepipe/eval.hpp"
#include "posepipe/geometry.hpp"
#include "posepipe/pgpg.hpp"
#include "posepipe/pipeline.hpp"
#include "posepipe/posenms.hpp"

namespace posepipe::io {

using Json = nlohmann::json;

/// Builtin layout name, or a JSON file {"name", "joints", "parts":
/// [{"name", "begin", "end"}], "oks_k", "head_segment": [h, n]}.
LayoutPtr load_layout(const std::string& name_or_path);

std::string read_text(const std::string& path);
void write_text(const std::string& path, const std::string& text);
Json read_json(const std::string& path);

std::vector<Heatmap> read_hmap(const std::string& path);
void write_hmap(const std::string& path, const std::vector<Heatmap>& heatmaps);

struct FrameRecords {
    std::int64_t frame = 0;
    std::vector<pipeline::DetectionRecord> detections;
};

std::map<std::int64_t, std::vector<pipeline::DetectionRecord>> read_detections(const std::string& path);
void write_detections(const std::string& path, const std::vector<FrameRecords>& frames);

Json box_to_json(const DetectionBox& box);
DetectionBox box_from_json(const Json& j);
/// Flat [x, y, c, ...] keypoint array.
Json keypoints_to_json(const Pose& pose);

std::vector<eval::ImageGroundTruth> read_coco_ground_truth(const std::string& path, const LayoutPtr& layout);
/// Poses without a "bbox" get the tight box around their confident keypoints.
std::vector<eval::ImagePredictions> read_coco_results(const std::string& path, const LayoutPtr& layout);
Json coco_results_json(const std::vector<eval::ImagePredictions>& preds);

std::vector<eval::TrackFrame> read_track_jsonl(const std::string& path, const LayoutPtr& layout);
std::string track_line(std::int64_t frame, std::int64_t track_id, const DetectionBox& box, const Pose& pose);
/// MOT-challenge CSV row: frame,id,x,y,w,h,score,-1,-1,-1 (1-based frame).
std::string mot_csv_line(std::int64_t frame, std::int64_t track_id, const DetectionBox& box);
/// OpenPose-style frame document with one "people" entry per pose.
Json openpose_frame(const std::vector<Pose>& poses, const std::vector<std::int64_t>& person_ids);

nms::NmsParams read_nms_params(const std::string& path);
Json nms_params_json(const nms::NmsParams& params);

/// JSON lines {"part": "body", "gt": [x1, y1, x2, y2], "det": [x1, y1, x2, y2]}.
std::vector<pgpg::OffsetSample> read_offset_dataset(const std::string& path);
Json offset_model_json(const pgpg::OffsetModel& model);
pgpg::OffsetModel offset_model_from_json(const Json& j);

} // namespace posepipe::io
