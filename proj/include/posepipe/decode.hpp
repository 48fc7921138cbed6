#pragma once

/// \file decode.hpp
/// \brief Heatmap decoding by symmetric integral regression.
///
/// Logits are normalised in two steps: an elementwise logistic gives the
/// confidence map C (joint confidence = max C), and dividing C by its sum
/// gives the probability map P whose expectation is the sub-pixel location.
/// The gradient helpers exist to check the location loss analysis
/// numerically; nothing here trains a network.

#include <cstdint>
#include <span>
#include <vector>

#include "posepipe/geometry.hpp"

namespace posepipe::decode {

/// Logits are clipped to this magnitude before the logistic.
inline constexpr double kLogitClip = 30.0;

enum class Normalization { two_step, softmax };
enum class Axis { x, y };

struct Point2 {
    double x = 0.0;
    double y = 0.0;
};

struct NormalizedHeatmap {
    Heatmap confidence;  ///< per-pixel confidence; for softmax this is P itself
    Heatmap probability; ///< sums to one per joint
    Normalization method = Normalization::two_step;
};

/// Throws NumericalError("empty heatmap") when a joint's logits are all -inf
/// and InvalidArgument on NaN or +inf.
NormalizedHeatmap normalize_two_step(const Heatmap& logits);

/// One-step soft-max baseline. Same error behaviour as normalize_two_step.
NormalizedHeatmap normalize_softmax(const Heatmap& logits);

NormalizedHeatmap normalize(const Heatmap& logits, Normalization method);

/// Expectation of the pixel coordinates under `prob`, computed per axis from
/// the marginals.
Point2 soft_argmax(const Heatmap& prob, std::size_t joint);

/// Integer location of the maximum (first one in row-major order on ties).
Point2 argmax_location(const Heatmap& map, std::size_t joint);

double max_value(const Heatmap& map, std::size_t joint);

struct DecodedJoint {
    Point2 mu_hat;     ///< heatmap coordinates
    double confidence; ///< max of the confidence map
};

std::vector<DecodedJoint> decode_joints(const Heatmap& logits);

/// Decodes every joint and maps it to image coordinates. The pose score is
/// the mean joint confidence. Throws InvalidArgument if logits.joints()
/// differs from the layout's joint count.
Pose decode_pose(const Heatmap& logits, LayoutPtr layout, const CropTransform& transform,
                 const DetectionBox& proposal);

struct AsgConfig {
    double a_grad = 1.0;

    /// The calibrated amplitude W / 8.
    static AsgConfig for_width(std::size_t width) { return {static_cast<double>(width) / 8.0}; }
};

enum class GradientForm {
    probability, ///< d|mu - mu_hat| / dp_x
    logits,      ///< chained through the normalisation to the logits
};

/// sgn with sgn(0) = 0.
inline double sgn(double v) { return static_cast<double>((0.0 < v) - (v < 0.0)); }

/// Conventional integral-regression gradient of |mu - mu_hat| along one axis.
/// Probability form: coord * sgn(mu_hat - mu). Logits form: the exact chain
/// rule through `norm.method`, which for soft-max is
/// sgn(mu_hat - mu) * (coord - mu_hat) * p_x.
std::vector<double> grad_integral(const NormalizedHeatmap& norm, std::size_t joint, double mu_hat,
                                  double mu, Axis axis, GradientForm form);

/// Amplitude-symmetric gradient along one axis:
/// a_grad * sgn(coord - mu_hat) * sgn(mu_hat - mu), optionally chained to the logits.
std::vector<double> grad_asg_axis(const NormalizedHeatmap& norm, std::size_t joint, double mu_hat,
                                  double mu, Axis axis, const AsgConfig& cfg, GradientForm form);

/// Two-dimensional ASG: the per-axis rule applied to x and y and summed.
std::vector<double> grad_asg(const NormalizedHeatmap& norm, std::size_t joint, Point2 mu_hat,
                             Point2 mu, const AsgConfig& cfg,
                             GradientForm form = GradientForm::probability);

/// Chains a per-pixel gradient w.r.t. the probability map back to the logits.
std::vector<double> logit_gradient(const NormalizedHeatmap& norm, std::size_t joint,
                                   std::span<const double> grad_wrt_prob);

/// |mu.x - mu_hat.x| + |mu.y - mu_hat.y| for one joint of a logit heatmap.
double location_l1_loss(const Heatmap& logits, std::size_t joint, Point2 mu, Normalization method);

enum class GradientRule { integral, asg };

struct LipschitzProbeConfig {
    std::size_t width = 16;
    std::size_t height = 16;
    std::size_t n_trials = 1000;
    double perturbation_scale = 1e-3;
    std::uint64_t seed = 0;
    Normalization normalization = Normalization::two_step;
    std::size_t power_iterations = 200;
};

struct LipschitzEstimate {
    double ratio_integral = 0.0; ///< max over trials, NaN when no trial was usable
    double ratio_asg = 0.0;
    std::size_t trials_used = 0;
    std::size_t trials_skipped = 0;
};

/// Estimates how strongly each rule's logit gradient reacts to a change of
/// the probability map, i.e. the factor multiplying the normalisation's own
/// Lipschitz constant. Per trial: Gaussian logits (sigma 1) and a uniform
/// target; the steepest tangent direction of the linearised map is found by
/// power iteration and a finite step of perturbation_scale * |p| is taken
/// along it. Trials where the step flips a sign pattern are skipped, as is
/// every trial when perturbation_scale is zero. Throws InvalidArgument for
/// n_trials < 100.
LipschitzEstimate lipschitz_probe(const LipschitzProbeConfig& cfg);

struct AmplitudeCalibration {
    double mean_integral = 0.0; ///< mean of |x - mu_hat| * p_x per axis
    double mean_asg_bound = 0.0; ///< mean of 2 * a_grad * p_x (the ASG logit-gradient bound)
    double mean_asg_actual = 0.0; ///< mean of the realised |p_x (g_x - <p, g>)| for ASG
    std::size_t samples = 0;
};

/// Monte-Carlo comparison of the average gradient amplitude of both rules
/// over random Gaussian-logit heatmaps.
AmplitudeCalibration amplitude_calibration(std::size_t width, std::size_t height,
                                           std::size_t n_samples, const AsgConfig& cfg,
                                           std::uint64_t seed);

} // namespace posepipe::decode
