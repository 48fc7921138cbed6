#pragma once

/// \file pgpg.hpp
/// \brief Part-guided proposal generation: distributions of normalised
/// detector-vs-ground-truth box offsets per body part, fitted with Gaussian
/// mixtures and resampled to produce augmented proposals.

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "posepipe/geometry.hpp"

namespace posepipe::pgpg {

/// Offsets of a detected box relative to a ground-truth box, normalised by
/// the ground-truth width (x) or height (y).
struct OffsetSample {
    double dx_min = 0.0;
    double dx_max = 0.0;
    double dy_min = 0.0;
    double dy_max = 0.0;
    std::string part;
};

/// Throws InvalidArgument when gt has zero or negative width or height.
OffsetSample compute_offsets(const DetectionBox& gt, const DetectionBox& det, std::string part = {});

/// Inverse of compute_offsets: places the offsets back onto `gt`.
DetectionBox apply_offsets(const DetectionBox& gt, const OffsetSample& offsets);

struct GaussianComponent {
    double weight = 1.0;
    Eigen::Vector2d mean = Eigen::Vector2d::Zero();
    Eigen::Matrix2d covariance = Eigen::Matrix2d::Identity();
};

/// Two-dimensional Gaussian mixture.
struct Mixture2 {
    std::vector<GaussianComponent> components;
    /// Mean log-likelihood per sample after each EM iteration.
    std::vector<double> log_likelihood_history;

    double density(const Eigen::Vector2d& v) const;
    double log_likelihood(std::span<const Eigen::Vector2d> points) const;
    /// CDF of the marginal along dimension `dim` (0 or 1).
    double marginal_cdf(int dim, double value) const;
    Eigen::Vector2d sample(std::mt19937_64& rng) const;
    Eigen::Vector2d mean() const;
    Eigen::Matrix2d covariance() const;
};

struct FitOptions {
    std::size_t components = 3;
    std::size_t max_iterations = 200;
    double tolerance = 1e-6; ///< on the change of mean log-likelihood
    double regularization = 1e-6;
    std::uint64_t seed = 0;
};

/// EM with k-means++ seeding. When fewer distinct seeds exist than requested
/// components (e.g. identical points) the mixture keeps only the distinct ones.
Mixture2 fit_mixture(std::span<const Eigen::Vector2d> points, const FitOptions& options);

/// Offsets are ordered (dx_min, dx_max, dy_min, dy_max).
struct UniformBox {
    std::array<double, 4> lo{};
    std::array<double, 4> hi{};
};

struct OffsetModel {
    std::string part;
    Mixture2 x_model; ///< over (dx_min, dx_max)
    Mixture2 y_model; ///< over (dy_min, dy_max)
    std::size_t components = 0;
    std::optional<UniformBox> uniform_box; ///< [5th, 95th] percentile per offset
};

/// Fits the x and y planes independently using the samples of `part`.
/// Throws InvalidArgument when fewer than 10 * components samples exist.
OffsetModel fit_offset_model(std::span<const OffsetSample> samples, const std::string& part,
                             const FitOptions& options = {});

struct BicEntry {
    std::size_t components = 0;
    double bic = 0.0; ///< x plane + y plane
};

/// BIC of the fitted model for each component count in [1, max_components].
std::vector<BicEntry> bic_sweep(std::span<const OffsetSample> samples, const std::string& part,
                                const FitOptions& options = {}, std::size_t max_components = 5);

enum class SampleMode { gmm, uniform };

OffsetSample sample_offsets(const OffsetModel& model, SampleMode mode, std::mt19937_64& rng);

/// Draws offsets and applies them to `gt`, redrawing degenerate boxes.
/// Throws NumericalError after 100 consecutive degenerate draws, and
/// InvalidArgument for uniform mode without a uniform box.
DetectionBox sample_proposal(const DetectionBox& gt, const OffsetModel& model, SampleMode mode,
                             std::mt19937_64& rng);

} // namespace posepipe::pgpg
