#pragma once

/// \file eval.hpp
/// \brief Keypoint metrics: OKS, COCO-style AP over OKS thresholds, and
/// joint-wise multi-object-tracking accuracy with PCKh gating.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "posepipe/geometry.hpp"

namespace posepipe::eval {

/// {0.50, 0.55, ..., 0.95}
std::vector<double> default_oks_thresholds();

/// Object keypoint similarity: mean over labeled ground-truth joints of
/// exp(-d^2 / (2 * area * k^2)). Ground-truth joints with confidence 0 are
/// unlabeled and skipped. `part` restricts the joints considered.
/// Throws InvalidArgument on layout mismatch or area <= 0, and
/// InvalidArgument("no labeled ground-truth joints") when nothing is labeled.
double oks(const Pose& pred, const Pose& gt, double gt_area, const PartRange* part = nullptr);

struct GtInstance {
    Pose pose;
    double area = 0.0; ///< object area (s^2); <= 0 falls back to the box area
};

struct ImagePredictions {
    std::int64_t image_id = 0;
    std::vector<Pose> poses;
};

struct ImageGroundTruth {
    std::int64_t image_id = 0;
    std::vector<GtInstance> instances;
};

struct MapOptions {
    std::vector<double> thresholds = default_oks_thresholds();
    std::optional<std::string> part; ///< restrict OKS to one layout part
    std::size_t max_dets = 20;
};

struct MapResult {
    double ap = 0.0;
    double ap50 = 0.0;
    double ap75 = 0.0;
    double ap_medium = 0.0; ///< objects with 32^2 <= area < 96^2; -1 when none
    double ap_large = 0.0;  ///< objects with area >= 96^2; -1 when none
    double ar = 0.0;
    std::vector<double> ap_per_threshold;
};

/// COCO keypoint AP: per image, predictions in descending score order are
/// greedily matched to the unmatched ground truth of highest OKS; precision
/// is interpolated on 101 recall points and averaged over thresholds.
/// Throws InvalidArgument on duplicate image ids or on predictions for an
/// image without ground truth.
MapResult map_eval(std::span<const ImagePredictions> preds, std::span<const ImageGroundTruth> gts,
                   const MapOptions& options = {});

struct TrackedPose {
    std::int64_t track_id = 0;
    Pose pose;
};

struct TrackFrame {
    std::int64_t frame = 0;
    std::vector<TrackedPose> people;
};

struct JointMot {
    std::size_t gt = 0;
    std::size_t matches = 0;
    std::size_t false_positives = 0;
    std::size_t misses = 0;
    std::size_t id_switches = 0;
    double distance_sum = 0.0;
    double mota = 0.0;
    double motp = 0.0; ///< mean matched distance in pixels
    double precision = 0.0;
    double recall = 0.0;
};

struct MotReport {
    std::vector<JointMot> per_joint; ///< indexed by joint; joints without ground truth have gt == 0
    double mota = 0.0;
    double motp = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    std::size_t id_switches = 0;
};

/// Runs the CLEAR-MOT counts independently per joint. A predicted joint
/// (confidence > 0) matches a labeled ground-truth joint when their distance
/// is at most pckh_threshold times the ground truth's head segment; pairs are
/// taken greedily by increasing distance. Totals are averages over joints that
/// have ground truth. Throws InvalidArgument when the layout has no head
/// segment or a ground-truth person lacks labeled head/neck joints, and when
/// a predicted frame has no ground-truth counterpart.
MotReport mot_eval(std::span<const TrackFrame> predictions, std::span<const TrackFrame> ground_truth,
                   double pckh_threshold = 0.5);

} // namespace posepipe::eval
