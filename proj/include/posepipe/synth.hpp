#pragma once

/// \file synth.hpp
/// \brief Synthetic scenes with known ground truth and brute-force reference
/// implementations used to check the main modules.

#include <cstdint>
#include <random>
#include <vector>

#include "posepipe/decode.hpp"
#include "posepipe/eval.hpp"
#include "posepipe/posenms.hpp"
#include "posepipe/track.hpp"

namespace posepipe::synth {

struct SynthHeatmap {
    Heatmap logits;             ///< one joint
    decode::Point2 peak;        ///< true peak location
    decode::Point2 expectation; ///< exact mean of the two-step probability map
};

/// Logits A - |g - peak|^2 / (2 sigma^2) over a W x H grid, i.e. a
/// log-Gaussian bump whose peak logit is `amplitude`. Throws InvalidArgument
/// when the peak is outside [0, W-1] x [0, H-1] or sigma <= 0.
SynthHeatmap gen_heatmap(decode::Point2 peak, double sigma, std::size_t width, std::size_t height, double amplitude);

struct DuplicatedScene {
    std::vector<Pose> candidates;               ///< originals first, then duplicates
    std::vector<eval::GtInstance> ground_truth;
    std::vector<std::size_t> source;            ///< ground-truth index of each candidate
};

struct SceneOptions {
    double image_width = 1280.0;
    double min_box = 80.0;
    double max_box = 160.0;
    double min_score = 0.5;
    double max_score = 1.0;
    double score_decay = 0.85; ///< each further duplicate scores decay times the previous one
};

/// Ground-truth people placed side by side without overlap. Each person
/// yields an exact candidate plus `dup_per_person` duplicates whose keypoints
/// and box edges carry independent N(0, jitter^2) noise.
DuplicatedScene gen_duplicated_scene(const LayoutPtr& layout, std::size_t n_people, std::size_t dup_per_person,
                                     double jitter, std::mt19937_64& rng, const SceneOptions& options = {});

/// Validation images built from gen_duplicated_scene with 1..max_people people each.
std::vector<nms::ValidationImage> gen_duplicated_dataset(const LayoutPtr& layout, std::size_t n_images,
                                                         std::size_t max_people, std::size_t dup_per_person,
                                                         double jitter, std::uint64_t seed,
                                                         const SceneOptions& options = {});

struct OcclusionWindow {
    std::size_t person = 0;
    std::int64_t begin = 0; ///< first hidden frame
    std::int64_t end = 0;   ///< one past the last hidden frame
};

struct TrajectoryOptions {
    bool crossing = false;  ///< people 0 and 1 swap horizontal positions at mid-sequence
    std::vector<OcclusionWindow> occlusions;
    double emb_noise = 0.0; ///< std of the Gaussian noise added to each embedding entry
    bool orthogonal_embeddings = true; ///< basis vectors; otherwise all people share one embedding
    double lane_offset = 0.0; ///< vertical offset between the crossing people
    LayoutPtr layout;         ///< halpe136 when unset; needs a head segment
};

struct SynthDetection {
    track::TrackInput input;
    std::int64_t true_id = 0; ///< person index + 1
};

struct TrajectoryScene {
    std::vector<std::vector<SynthDetection>> frames;
    std::vector<eval::TrackFrame> ground_truth;
};

/// Linear motion per person across `n_frames` frames. Detections are
/// shuffled within each frame.
TrajectoryScene gen_trajectories(std::size_t n_people, std::size_t n_frames, const TrajectoryOptions& options,
                                 std::mt19937_64& rng);

/// Single-channel H x W attention: max over confident keypoints of
/// exp(-|g - k|^2 / (2 sigma^2)), keypoints given in grid coordinates.
track::FeatureMap attention_from_pose(const Pose& pose, std::size_t height, std::size_t width, double sigma);

/// Random pose inside `box` with confidences in [min_conf, 1].
Pose random_pose(const LayoutPtr& layout, const DetectionBox& box, std::mt19937_64& rng, double min_conf = 0.5);

namespace oracle {

/// Elementwise sigmoid then sum-to-one normalisation, written without the
/// clipping shortcuts of the decoder.
void two_step(const std::vector<double>& logits, std::vector<double>& confidence, std::vector<double>& probability);

/// Pose similarity by explicit loops.
double pose_distance(const Pose& candidate, const Pose& reference, const nms::NmsParams& params);

/// Greedy scheme by repeated linear scans over the surviving set.
std::vector<std::size_t> pose_nms(const std::vector<Pose>& poses, const nms::NmsParams& params);

/// Row-minimum threshold rule with conflicts settled by the smaller distance,
/// evaluated pair by pair.
std::vector<std::pair<std::size_t, std::size_t>> stage_links(const track::DistanceMatrix& m, double threshold);

/// Embedding stage on the valid rows and columns, then the fusion stage and
/// its relaxed retry on whatever is still free. Links ordered by detection.
std::vector<std::pair<std::size_t, std::size_t>> cascade(const track::DistanceMatrix& emb,
                                                         const std::vector<bool>& valid_rows,
                                                         const std::vector<bool>& valid_cols,
                                                         const track::DistanceMatrix& fusion,
                                                         const track::MsimConfig& config);

track::FeatureMap pga_fuse(const track::FeatureMap& m_id, const track::FeatureMap& m_a);

double normalized_pose_distance(const Pose& a, const Pose& b, const nms::NmsParams& params);

} // namespace oracle

} // namespace posepipe::synth
