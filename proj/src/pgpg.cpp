#include "posepipe/pgpg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "posepipe/error.hpp"

namespace posepipe::pgpg {

OffsetSample compute_offsets(const DetectionBox& gt, const DetectionBox& det, std::string part) {
    const double w = gt.width(), h = gt.height();
    if (!(w > 0.0) || !(h > 0.0)) throw InvalidArgument("ground-truth box is degenerate");
    return {(det.x_min - gt.x_min) / w, (det.x_max - gt.x_max) / w, (det.y_min - gt.y_min) / h,
            (det.y_max - gt.y_max) / h, std::move(part)};
}

DetectionBox apply_offsets(const DetectionBox& gt, const OffsetSample& o) {
    const double w = gt.width(), h = gt.height();
    DetectionBox out = gt;
    out.x_min = gt.x_min + o.dx_min * w;
    out.x_max = gt.x_max + o.dx_max * w;
    out.y_min = gt.y_min + o.dy_min * h;
    out.y_max = gt.y_max + o.dy_max * h;
    return out;
}

namespace {

double log_gauss(const Eigen::Vector2d& x, const GaussianComponent& c) {
    const double det = c.covariance.determinant();
    const Eigen::Vector2d d = x - c.mean;
    const double maha = d.dot(c.covariance.inverse() * d);
    return -std::log(2.0 * std::numbers::pi) - 0.5 * std::log(det) - 0.5 * maha;
}

double log_sum_exp(const std::vector<double>& v) {
    const double m = *std::max_element(v.begin(), v.end());
    if (!std::isfinite(m)) return m;
    double s = 0.0;
    for (double x : v) s += std::exp(x - m);
    return m + std::log(s);
}

// Lower-triangular factor that tolerates a singular (e.g. zero) matrix.
Eigen::Matrix2d cholesky2(const Eigen::Matrix2d& s) {
    Eigen::Matrix2d l = Eigen::Matrix2d::Zero();
    l(0, 0) = std::sqrt(std::max(0.0, s(0, 0)));
    l(1, 0) = l(0, 0) > 0.0 ? s(1, 0) / l(0, 0) : 0.0;
    l(1, 1) = std::sqrt(std::max(0.0, s(1, 1) - l(1, 0) * l(1, 0)));
    return l;
}

double normal_cdf(double x, double mean, double var) {
    if (var <= 0.0) return x < mean ? 0.0 : 1.0;
    return 0.5 * std::erfc(-(x - mean) / std::sqrt(2.0 * var));
}

double percentile(std::vector<double> v, double q) {
    std::sort(v.begin(), v.end());
    const double pos = q * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

Eigen::Matrix2d sample_covariance(std::span<const Eigen::Vector2d> pts, const Eigen::Vector2d& mean) {
    Eigen::Matrix2d c = Eigen::Matrix2d::Zero();
    for (const auto& p : pts) c += (p - mean) * (p - mean).transpose();
    return c / static_cast<double>(pts.size());
}

} // namespace

double Mixture2::density(const Eigen::Vector2d& v) const {
    double s = 0.0;
    for (const auto& c : components) s += c.weight * std::exp(log_gauss(v, c));
    return s;
}

double Mixture2::log_likelihood(std::span<const Eigen::Vector2d> points) const {
    double ll = 0.0;
    std::vector<double> terms(components.size());
    for (const auto& p : points) {
        for (std::size_t k = 0; k < components.size(); ++k)
            terms[k] = std::log(components[k].weight) + log_gauss(p, components[k]);
        ll += log_sum_exp(terms);
    }
    return ll;
}

double Mixture2::marginal_cdf(int dim, double value) const {
    double s = 0.0;
    for (const auto& c : components) s += c.weight * normal_cdf(value, c.mean(dim), c.covariance(dim, dim));
    return s;
}

Eigen::Vector2d Mixture2::sample(std::mt19937_64& rng) const {
    if (components.empty()) throw InvalidArgument("cannot sample an empty mixture");
    std::vector<double> w;
    for (const auto& c : components) w.push_back(c.weight);
    std::discrete_distribution<std::size_t> pick(w.begin(), w.end());
    std::normal_distribution<double> gauss(0.0, 1.0);
    const auto& c = components[pick(rng)];
    const double z0 = gauss(rng);
    const double z1 = gauss(rng);
    return c.mean + cholesky2(c.covariance) * Eigen::Vector2d(z0, z1);
}

Eigen::Vector2d Mixture2::mean() const {
    Eigen::Vector2d m = Eigen::Vector2d::Zero();
    for (const auto& c : components) m += c.weight * c.mean;
    return m;
}

Eigen::Matrix2d Mixture2::covariance() const {
    const Eigen::Vector2d m = mean();
    Eigen::Matrix2d s = Eigen::Matrix2d::Zero();
    for (const auto& c : components)
        s += c.weight * (c.covariance + (c.mean - m) * (c.mean - m).transpose());
    return s;
}

Mixture2 fit_mixture(std::span<const Eigen::Vector2d> points, const FitOptions& options) {
    if (options.components == 0) throw InvalidArgument("need at least one mixture component");
    if (points.empty()) throw InvalidArgument("cannot fit a mixture to no points");
    const std::size_t n = points.size();
    const Eigen::Matrix2d ridge = options.regularization * Eigen::Matrix2d::Identity();
    std::mt19937_64 rng(options.seed);

    // k-means++ seeding.
    std::vector<Eigen::Vector2d> centers;
    std::uniform_int_distribution<std::size_t> first(0, n - 1);
    centers.push_back(points[first(rng)]);
    std::vector<double> d2(n);
    while (centers.size() < options.components) {
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::infinity();
            for (const auto& c : centers) best = std::min(best, (points[i] - c).squaredNorm());
            d2[i] = best;
            total += best;
        }
        if (!(total > 0.0)) break;
        std::discrete_distribution<std::size_t> pick(d2.begin(), d2.end());
        centers.push_back(points[pick(rng)]);
    }

    const std::size_t K = centers.size();
    Eigen::Vector2d global_mean = Eigen::Vector2d::Zero();
    for (const auto& p : points) global_mean += p;
    global_mean /= static_cast<double>(n);
    const Eigen::Matrix2d global_cov = sample_covariance(points, global_mean);

    std::vector<std::vector<Eigen::Vector2d>> clusters(K);
    for (const auto& p : points) {
        std::size_t best = 0;
        for (std::size_t k = 1; k < K; ++k)
            if ((p - centers[k]).squaredNorm() < (p - centers[best]).squaredNorm()) best = k;
        clusters[best].push_back(p);
    }
    Mixture2 mix;
    for (auto& cl : clusters) {
        if (cl.empty()) continue;
        GaussianComponent c;
        c.weight = static_cast<double>(cl.size()) / static_cast<double>(n);
        c.mean = Eigen::Vector2d::Zero();
        for (const auto& p : cl) c.mean += p;
        c.mean /= static_cast<double>(cl.size());
        c.covariance = (cl.size() >= 2 ? sample_covariance(cl, c.mean) : global_cov) + ridge;
        mix.components.push_back(c);
    }

    const std::size_t k_eff = mix.components.size();
    std::vector<double> resp(n * k_eff), terms(k_eff);
    double prev = -std::numeric_limits<double>::infinity();
    for (std::size_t iter = 0; iter < options.max_iterations; ++iter) {
        // E step.
        double ll = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t k = 0; k < k_eff; ++k)
                terms[k] = std::log(mix.components[k].weight) + log_gauss(points[i], mix.components[k]);
            const double lse = log_sum_exp(terms);
            ll += lse;
            for (std::size_t k = 0; k < k_eff; ++k) resp[i * k_eff + k] = std::exp(terms[k] - lse);
        }
        ll /= static_cast<double>(n);
        mix.log_likelihood_history.push_back(ll);
        if (std::abs(ll - prev) < options.tolerance) break;
        prev = ll;

        // M step.
        for (std::size_t k = 0; k < k_eff; ++k) {
            double nk = 0.0;
            Eigen::Vector2d m = Eigen::Vector2d::Zero();
            for (std::size_t i = 0; i < n; ++i) {
                nk += resp[i * k_eff + k];
                m += resp[i * k_eff + k] * points[i];
            }
            auto& c = mix.components[k];
            if (nk <= std::numeric_limits<double>::min()) {
                c.weight = std::numeric_limits<double>::min();
                continue;
            }
            m /= nk;
            Eigen::Matrix2d s = Eigen::Matrix2d::Zero();
            for (std::size_t i = 0; i < n; ++i)
                s += resp[i * k_eff + k] * (points[i] - m) * (points[i] - m).transpose();
            c.weight = nk / static_cast<double>(n);
            c.mean = m;
            c.covariance = s / nk + ridge;
        }
    }
    return mix;
}

OffsetModel fit_offset_model(std::span<const OffsetSample> samples, const std::string& part,
                             const FitOptions& options) {
    std::vector<Eigen::Vector2d> xs, ys;
    std::array<std::vector<double>, 4> dims;
    for (const auto& s : samples) {
        if (s.part != part) continue;
        xs.emplace_back(s.dx_min, s.dx_max);
        ys.emplace_back(s.dy_min, s.dy_max);
        dims[0].push_back(s.dx_min);
        dims[1].push_back(s.dx_max);
        dims[2].push_back(s.dy_min);
        dims[3].push_back(s.dy_max);
    }
    if (xs.size() < 10 * options.components)
        throw InvalidArgument("insufficient samples for part '" + part + "': " +
                              std::to_string(xs.size()) + " < " + std::to_string(10 * options.components));

    OffsetModel model;
    model.part = part;
    model.x_model = fit_mixture(xs, options);
    FitOptions y_options = options;
    y_options.seed = options.seed + 1;
    model.y_model = fit_mixture(ys, y_options);
    model.components = std::max(model.x_model.components.size(), model.y_model.components.size());
    UniformBox box;
    for (int d = 0; d < 4; ++d) {
        box.lo[d] = percentile(dims[d], 0.05);
        box.hi[d] = percentile(dims[d], 0.95);
    }
    model.uniform_box = box;
    return model;
}

std::vector<BicEntry> bic_sweep(std::span<const OffsetSample> samples, const std::string& part,
                                const FitOptions& options, std::size_t max_components) {
    std::vector<Eigen::Vector2d> xs, ys;
    for (const auto& s : samples)
        if (s.part == part) {
            xs.emplace_back(s.dx_min, s.dx_max);
            ys.emplace_back(s.dy_min, s.dy_max);
        }
    std::vector<BicEntry> out;
    const double logn = std::log(static_cast<double>(std::max<std::size_t>(xs.size(), 1)));
    for (std::size_t k = 1; k <= max_components; ++k) {
        if (xs.size() < 10 * k) break;
        FitOptions o = options;
        o.components = k;
        const auto mx = fit_mixture(xs, o);
        o.seed = options.seed + 1;
        const auto my = fit_mixture(ys, o);
        auto bic = [&](const Mixture2& m, std::span<const Eigen::Vector2d> pts) {
            const double kk = static_cast<double>(m.components.size());
            const double params = kk * 5.0 + (kk - 1.0);
            return -2.0 * m.log_likelihood(pts) + params * logn;
        };
        out.push_back({k, bic(mx, xs) + bic(my, ys)});
    }
    return out;
}

OffsetSample sample_offsets(const OffsetModel& model, SampleMode mode, std::mt19937_64& rng) {
    OffsetSample o;
    o.part = model.part;
    if (mode == SampleMode::gmm) {
        const auto x = model.x_model.sample(rng);
        const auto y = model.y_model.sample(rng);
        o.dx_min = x(0);
        o.dx_max = x(1);
        o.dy_min = y(0);
        o.dy_max = y(1);
        return o;
    }
    if (!model.uniform_box) throw InvalidArgument("model has no uniform box");
    const auto& b = *model.uniform_box;
    double v[4];
    for (int d = 0; d < 4; ++d) {
        std::uniform_real_distribution<double> u(b.lo[d], b.hi[d]);
        v[d] = b.hi[d] > b.lo[d] ? u(rng) : b.lo[d];
    }
    o.dx_min = v[0];
    o.dx_max = v[1];
    o.dy_min = v[2];
    o.dy_max = v[3];
    return o;
}

DetectionBox sample_proposal(const DetectionBox& gt, const OffsetModel& model, SampleMode mode,
                             std::mt19937_64& rng) {
    if (!(gt.width() > 0.0) || !(gt.height() > 0.0)) throw InvalidArgument("ground-truth box is degenerate");
    for (int attempt = 0; attempt < 100; ++attempt) {
        const auto box = apply_offsets(gt, sample_offsets(model, mode, rng));
        if (box.x_min < box.x_max && box.y_min < box.y_max) return box;
    }
    throw NumericalError("100 consecutive degenerate proposals");
}

} // namespace posepipe::pgpg
