#pragma once

/// \file posenms.hpp
/// \brief Parametric pose non-maximum suppression and its data-driven
/// parameter search.

#include <cstddef>
#include <span>
#include <vector>

#include "posepipe/eval.hpp"
#include "posepipe/geometry.hpp"

namespace posepipe::nms {

/// Side of the per-joint matching window relative to the candidate's box.
inline constexpr double kWindowFraction = 0.1;

/// Detection score floor used when generating candidates.
inline constexpr double kDetectionScoreFloor = 0.1;

struct NmsParams {
    double sigma1 = 0.3;  ///< confidence softness of the joint-count term
    double sigma2 = 10.0; ///< spatial softness (squared pixels)
    double lambda = 1.0;  ///< weight of the spatial term
    double eta = 10.0;    ///< elimination threshold

    /// Throws InvalidArgument unless sigma1, sigma2 > 0 and lambda >= 0.
    void validate() const;
    bool operator==(const NmsParams&) const = default;
};

/// Soft count of matching joints: sum of tanh(c_a / sigma1) * tanh(c_b / sigma1)
/// over joints whose keypoint in `b` falls inside the window centred on the
/// corresponding keypoint of `a` sized by a's box.
double k_sim(const Pose& a, const Pose& b, double sigma1);

/// Sum over joints of exp(-|k_a - k_b|^2 / sigma2).
double h_sim(const Pose& a, const Pose& b, double sigma2);

/// k_sim + lambda * h_sim. Similarity-shaped: large for near-identical poses.
/// `candidate` owns the matching window, so the value is not symmetric.
double pose_distance(const Pose& candidate, const Pose& reference, const NmsParams& params);

/// Indices of the surviving poses, highest score first. The highest-scoring
/// remaining pose (lowest index on ties) becomes the reference and every
/// remaining pose with pose_distance(pose, reference) >= eta is eliminated.
std::vector<std::size_t> pose_nms_indices(std::span<const Pose> poses, const NmsParams& params);

std::vector<Pose> pose_nms(std::span<const Pose> poses, const NmsParams& params);

struct ParamGrid {
    std::vector<double> sigma1;
    std::vector<double> sigma2;
    std::vector<double> lambda;
    std::vector<double> eta;

    /// sigma1, sigma2 log-spaced over [0.01, 10] (10 points), lambda over
    /// [0, 5] (11 points), eta over [0.1 m, 2 m] (20 points).
    static ParamGrid defaults(std::size_t joint_count);
};

struct ValidationImage {
    std::vector<Pose> candidates;
    std::vector<eval::GtInstance> ground_truth;
};

struct OptimizeResult {
    NmsParams params;
    double map_initial = 0.0;
    double map_best = 0.0;
    std::size_t iterations = 0;
};

/// AP of the validation set after suppressing each image's candidates.
double validation_map(std::span<const ValidationImage> validation, const NmsParams& params);

/// Coordinate search: alternates a grid search over (sigma1, sigma2) with
/// (lambda, eta) fixed, and over (lambda, eta) with (sigma1, sigma2) fixed,
/// keeping a cell only when it strictly improves the validation AP. Stops
/// after an iteration without improvement or after `max_iterations`. Grid
/// cells are evaluated on `threads` workers (0 = hardware concurrency).
/// Throws InvalidArgument for an empty validation set or an empty grid axis.
OptimizeResult optimize_params(std::span<const ValidationImage> validation, const NmsParams& init,
                               const ParamGrid& grid, std::size_t max_iterations,
                               unsigned threads = 0);

} // namespace posepipe::nms
