#pragma once

/// \file track.hpp
/// \brief Pose-guided identity features and multi-stage identity matching
/// over a pool of Kalman-smoothed tracks.

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "posepipe/geometry.hpp"
#include "posepipe/posenms.hpp"

namespace posepipe::track {

inline constexpr std::size_t kEmbeddingDim = 128;

/// Unit-norm identity vector of length kEmbeddingDim.
class IdentityEmbedding {
public:
    IdentityEmbedding() = default;
    /// Normalises `values`. Throws InvalidArgument for a wrong length or
    /// non-finite entries and NumericalError("zero-norm embedding").
    static IdentityEmbedding normalized(std::span<const double> values);

    const std::vector<double>& values() const { return values_; }
    bool empty() const { return values_.empty(); }
    double dot(const IdentityEmbedding& other) const;

private:
    std::vector<double> values_;
};

/// C x H x W grid, row-major per channel.
struct FeatureMap {
    std::size_t channels = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<double> values;

    FeatureMap() = default;
    FeatureMap(std::size_t c, std::size_t h, std::size_t w, double fill = 0.0);

    std::size_t size() const { return channels * height * width; }
    double& at(std::size_t c, std::size_t y, std::size_t x) { return values[(c * height + y) * width + x]; }
    double at(std::size_t c, std::size_t y, std::size_t x) const {
        return values[(c * height + y) * width + x];
    }
    /// Throws InvalidArgument on a size mismatch or non-finite values; with
    /// `attention` also requires values in [0, 1].
    void validate(bool attention = false) const;
};

/// m_id * m_A + m_id elementwise. An attention map with a single channel is
/// broadcast over the channels of m_id. Throws InvalidArgument otherwise
/// when the dimensions differ.
FeatureMap pga_fuse(const FeatureMap& m_id, const FeatureMap& m_a);

/// Fixed linear projection from a flattened feature map to an embedding.
class Embedder {
public:
    /// Gaussian random weights scaled by 1/sqrt(input_size).
    Embedder(std::size_t input_size, std::uint64_t seed);
    /// Throws InvalidArgument unless `weights` has kEmbeddingDim rows.
    explicit Embedder(Eigen::MatrixXd weights);

    std::size_t input_size() const { return static_cast<std::size_t>(weights_.cols()); }
    const Eigen::MatrixXd& weights() const { return weights_; }
    /// Throws InvalidArgument on size mismatch, NumericalError("zero-norm embedding").
    IdentityEmbedding embed(const FeatureMap& m_wid) const;

private:
    Eigen::MatrixXd weights_;
};

/// Row-major rows x cols matrix of distances.
struct DistanceMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> values;

    DistanceMatrix() = default;
    DistanceMatrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), values(r * c, fill) {}
    double& at(std::size_t r, std::size_t c) { return values[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
};

/// (1 - cosine similarity) / 2 for every (detection, track) pair.
DistanceMatrix embedding_affinity(std::span<const IdentityEmbedding> detections,
                                  std::span<const IdentityEmbedding> tracks);

struct StageResult {
    std::vector<std::pair<std::size_t, std::size_t>> links; ///< (row, col), ascending row
    std::vector<std::size_t> untracked;                      ///< ascending
};

/// Row p links to column q when q is the row minimum (lowest column on
/// ties) and M[p][q] <= threshold. When several rows pick the same column the
/// smallest distance wins (lowest row on ties); the others become untracked.
StageResult stage_match(const DistanceMatrix& m, double threshold);

/// Poses are mapped so that their boxes become the unit square centred at
/// the origin, then compared with the pose-NMS similarity using a window and
/// parameters on that scale. Returns 1 - d / (m (tanh^2(1/sigma1) + lambda))
/// clamped to [0, 1]. Throws InvalidArgument when either box is degenerate.
double normalized_pose_distance(const Pose& a, const Pose& b, const nms::NmsParams& params);

struct KalmanConfig {
    /// Variances of the (cx, cy, area, aspect) measurements.
    std::array<double, 4> measurement_var{1.0, 1.0, 10.0, 1e-2};
    /// Per-frame process variances of the eight state entries.
    std::array<double, 8> process_var{1.0, 1.0, 1.0, 1e-2, 1e-2, 1e-2, 1e-4, 1e-4};
    std::array<double, 4> initial_position_var{10.0, 10.0, 10.0, 10.0};
    std::array<double, 4> initial_velocity_var{1e4, 1e4, 1e4, 1e4};
};

/// Constant-velocity filter over (cx, cy, area, aspect) and their velocities.
class BoxKalman {
public:
    BoxKalman(const DetectionBox& box, const KalmanConfig& config);

    void predict();
    void update(const DetectionBox& box);
    DetectionBox box() const;
    const Eigen::Matrix<double, 8, 1>& state() const { return x_; }
    const Eigen::Matrix<double, 8, 8>& covariance() const { return p_; }

private:
    Eigen::Matrix<double, 8, 1> x_;
    Eigen::Matrix<double, 8, 8> p_;
    Eigen::Matrix<double, 8, 8> q_;
    Eigen::Matrix<double, 4, 4> r_;
    double score_ = 1.0;
    int category_ = 0;
};

enum class TrackStatus { active, lost, removed };

struct Track {
    std::int64_t id = 0;
    BoxKalman kalman;
    std::optional<Pose> last_pose;
    std::optional<IdentityEmbedding> embedding;
    std::int64_t last_seen = 0;
    std::size_t lost_frames = 0;
    TrackStatus status = TrackStatus::active;
};

struct TrackPool {
    std::vector<Track> tracks; ///< ascending id
    std::int64_t next_id = 1;
};

struct MsimConfig {
    double mu_emb = 0.7;
    double mu_f = 0.5;
    double lambda_np = 1.0;
    /// The retry stage uses mu_f / relax_factor.
    double relax_factor = 2.0 / 3.0;
    std::size_t max_lost = 30;
    double ema_alpha = 0.9; ///< weight of the previous embedding
    nms::NmsParams shape{0.3, 0.01, 1.0, 0.0};
    KalmanConfig kalman;

    /// Throws InvalidArgument unless thresholds are in (0, 1], relax_factor
    /// in (0, 1) and ema_alpha in [0, 1].
    void validate() const;
};

struct TrackInput {
    DetectionBox box;
    std::optional<Pose> pose;
    std::optional<IdentityEmbedding> embedding;
};

/// (1 - IoU(det, predicted track box)) + lambda_np * dist_np. The pose term
/// is 0 when either side has no pose.
DistanceMatrix fusion_matrix(std::span<const TrackInput> detections, std::span<const Track> tracks,
                             double lambda_np, const nms::NmsParams& shape);

enum class MatchStage { embedding = 1, fusion = 2, relaxed = 3, fresh = 4 };

struct Assignment {
    std::size_t detection = 0;
    std::int64_t track_id = 0;
    MatchStage stage = MatchStage::fresh;
};

struct CascadeResult {
    std::vector<std::pair<std::size_t, std::size_t>> links; ///< (detection, track column)
    std::vector<MatchStage> stages;                          ///< parallel to links
    std::vector<std::size_t> unmatched;                      ///< ascending detections
};

/// The three matching stages on precomputed matrices. Rows of `emb` or
/// columns without an embedding are skipped by setting `emb_valid_rows` /
/// `emb_valid_cols` to false. Stages two and three only see rows and
/// columns left unmatched by the earlier stages.
CascadeResult cascade_match(const DistanceMatrix& emb, const std::vector<bool>& emb_valid_rows,
                            const std::vector<bool>& emb_valid_cols, const DistanceMatrix& fusion,
                            const MsimConfig& config);

/// One tracking step: predict, cascade, fresh ids, Kalman and embedding
/// updates, ageing. Returns one assignment per detection, ascending.
std::vector<Assignment> msim_step(std::int64_t frame, std::span<const TrackInput> detections,
                                  TrackPool& pool, const MsimConfig& config);

/// Per-stream tracker.
class Tracker {
public:
    explicit Tracker(MsimConfig config = {});

    std::vector<Assignment> step(std::int64_t frame, std::span<const TrackInput> detections);
    const TrackPool& pool() const { return pool_; }
    /// Filtered box of a live track. Throws NotFound.
    DetectionBox track_box(std::int64_t id) const;

private:
    MsimConfig config_;
    TrackPool pool_;
};

} // namespace posepipe::track
