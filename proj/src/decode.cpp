#include "posepipe/decode.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "posepipe/error.hpp"

namespace posepipe::decode {

namespace {

void check_logits(const Heatmap& logits) {
    if (logits.kind() != HeatmapKind::logits)
        throw InvalidArgument("expected a logit heatmap");
    for (std::size_t j = 0; j < logits.joints(); ++j) {
        bool all_neg_inf = true;
        for (double z : logits.joint(j)) {
            if (std::isnan(z) || z == std::numeric_limits<double>::infinity())
                throw InvalidArgument("logit heatmap contains NaN or +inf");
            if (z != -std::numeric_limits<double>::infinity()) all_neg_inf = false;
        }
        if (all_neg_inf) throw NumericalError("empty heatmap");
    }
}

double logistic(double z) {
    z = std::clamp(z, -kLogitClip, kLogitClip);
    return 1.0 / (1.0 + std::exp(-z));
}

double coordinate(std::size_t index, std::size_t width, Axis axis) {
    return axis == Axis::x ? static_cast<double>(index % width) : static_cast<double>(index / width);
}

} // namespace

NormalizedHeatmap normalize_two_step(const Heatmap& logits) {
    check_logits(logits);
    const std::size_t J = logits.joints(), H = logits.height(), W = logits.width();
    Heatmap conf(J, H, W, HeatmapKind::confidence);
    Heatmap prob(J, H, W, HeatmapKind::probability);
    for (std::size_t j = 0; j < J; ++j) {
        auto z = logits.joint(j);
        auto c = conf.joint(j);
        auto p = prob.joint(j);
        double sum = 0.0;
        for (std::size_t i = 0; i < z.size(); ++i) {
            c[i] = logistic(z[i]);
            sum += c[i];
        }
        for (std::size_t i = 0; i < z.size(); ++i) p[i] = c[i] / sum;
    }
    return {std::move(conf), std::move(prob), Normalization::two_step};
}

NormalizedHeatmap normalize_softmax(const Heatmap& logits) {
    check_logits(logits);
    const std::size_t J = logits.joints(), H = logits.height(), W = logits.width();
    Heatmap prob(J, H, W, HeatmapKind::probability);
    for (std::size_t j = 0; j < J; ++j) {
        auto z = logits.joint(j);
        auto p = prob.joint(j);
        const double zmax = *std::max_element(z.begin(), z.end());
        double sum = 0.0;
        for (std::size_t i = 0; i < z.size(); ++i) {
            p[i] = std::exp(z[i] - zmax);
            sum += p[i];
        }
        for (double& v : p) v /= sum;
    }
    Heatmap conf(J, H, W, HeatmapKind::confidence, prob.values());
    return {std::move(conf), std::move(prob), Normalization::softmax};
}

NormalizedHeatmap normalize(const Heatmap& logits, Normalization method) {
    return method == Normalization::two_step ? normalize_two_step(logits) : normalize_softmax(logits);
}

Point2 soft_argmax(const Heatmap& prob, std::size_t joint) {
    const std::size_t H = prob.height(), W = prob.width();
    auto p = prob.joint(joint);
    std::vector<double> mx(W, 0.0), my(H, 0.0);
    for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
            const double v = p[y * W + x];
            mx[x] += v;
            my[y] += v;
        }
    Point2 out;
    for (std::size_t x = 0; x < W; ++x) out.x += static_cast<double>(x) * mx[x];
    for (std::size_t y = 0; y < H; ++y) out.y += static_cast<double>(y) * my[y];
    return out;
}

Point2 argmax_location(const Heatmap& map, std::size_t joint) {
    auto v = map.joint(joint);
    const auto idx = static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
    return {static_cast<double>(idx % map.width()), static_cast<double>(idx / map.width())};
}

double max_value(const Heatmap& map, std::size_t joint) {
    auto v = map.joint(joint);
    return *std::max_element(v.begin(), v.end());
}

std::vector<DecodedJoint> decode_joints(const Heatmap& logits) {
    const auto norm = normalize_two_step(logits);
    std::vector<DecodedJoint> out(logits.joints());
    for (std::size_t j = 0; j < logits.joints(); ++j)
        out[j] = {soft_argmax(norm.probability, j), max_value(norm.confidence, j)};
    return out;
}

Pose decode_pose(const Heatmap& logits, LayoutPtr layout, const CropTransform& transform,
                 const DetectionBox& proposal) {
    if (!layout) throw InvalidArgument("decode_pose needs a layout");
    if (logits.joints() != layout->joint_count())
        throw InvalidArgument("heatmap has " + std::to_string(logits.joints()) +
                              " joints, layout expects " + std::to_string(layout->joint_count()));
    const auto joints = decode_joints(logits);
    Pose pose;
    pose.layout = std::move(layout);
    pose.box = proposal;
    pose.keypoints.reserve(joints.size());
    double conf_sum = 0.0;
    for (const auto& dj : joints) {
        pose.keypoints.push_back(
            {transform.to_image_x(dj.mu_hat.x), transform.to_image_y(dj.mu_hat.y), dj.confidence});
        conf_sum += dj.confidence;
    }
    pose.score = conf_sum / static_cast<double>(joints.size());
    return pose;
}

std::vector<double> logit_gradient(const NormalizedHeatmap& norm, std::size_t joint,
                                   std::span<const double> grad_wrt_prob) {
    auto p = norm.probability.joint(joint);
    auto c = norm.confidence.joint(joint);
    if (grad_wrt_prob.size() != p.size()) throw InvalidArgument("gradient size mismatch");
    double mean_g = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) mean_g += p[i] * grad_wrt_prob[i];
    std::vector<double> out(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
        out[i] = p[i] * (grad_wrt_prob[i] - mean_g);
        // d c / d z = c (1 - c); the 1/sum factor is already folded into p.
        if (norm.method == Normalization::two_step) out[i] *= (1.0 - c[i]);
    }
    return out;
}

std::vector<double> grad_integral(const NormalizedHeatmap& norm, std::size_t joint, double mu_hat,
                                  double mu, Axis axis, GradientForm form) {
    const std::size_t W = norm.probability.width();
    const std::size_t n = norm.probability.plane_size();
    const double s = sgn(mu_hat - mu);
    std::vector<double> g(n);
    for (std::size_t i = 0; i < n; ++i) g[i] = coordinate(i, W, axis) * s;
    if (form == GradientForm::probability) return g;
    return logit_gradient(norm, joint, g);
}

std::vector<double> grad_asg_axis(const NormalizedHeatmap& norm, std::size_t joint, double mu_hat,
                                  double mu, Axis axis, const AsgConfig& cfg, GradientForm form) {
    if (!(cfg.a_grad > 0.0)) throw InvalidArgument("a_grad must be positive");
    const std::size_t W = norm.probability.width();
    const std::size_t n = norm.probability.plane_size();
    const double s = sgn(mu_hat - mu);
    std::vector<double> g(n);
    for (std::size_t i = 0; i < n; ++i) g[i] = cfg.a_grad * sgn(coordinate(i, W, axis) - mu_hat) * s;
    if (form == GradientForm::probability) return g;
    return logit_gradient(norm, joint, g);
}

std::vector<double> grad_asg(const NormalizedHeatmap& norm, std::size_t joint, Point2 mu_hat,
                             Point2 mu, const AsgConfig& cfg, GradientForm form) {
    auto gx = grad_asg_axis(norm, joint, mu_hat.x, mu.x, Axis::x, cfg, form);
    const auto gy = grad_asg_axis(norm, joint, mu_hat.y, mu.y, Axis::y, cfg, form);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i];
    return gx;
}

double location_l1_loss(const Heatmap& logits, std::size_t joint, Point2 mu, Normalization method) {
    const auto norm = normalize(logits, method);
    const auto m = soft_argmax(norm.probability, joint);
    return std::abs(mu.x - m.x) + std::abs(mu.y - m.y);
}

namespace {

// The logit gradient written as a function of the probability map,
// F(p) = p * (g - <p, g>), with g the per-pixel rule summed over both axes.
// Locally F is linear in the tangent direction with Jacobian
// diag(d) - p c^T, where c = g and d = g - <p, g> for a frozen sign pattern.
struct RuleState {
    std::vector<double> value;  // F(p)
    std::vector<double> diag;   // d
    std::vector<double> rank1;  // c
    std::vector<int> signature; // every sign the rule depends on
};

RuleState evaluate_rule(std::span<const double> p, std::size_t width, Point2 mu, GradientRule rule,
                        double a_grad) {
    const std::size_t n = p.size();
    Point2 m;
    for (std::size_t i = 0; i < n; ++i) {
        m.x += coordinate(i, width, Axis::x) * p[i];
        m.y += coordinate(i, width, Axis::y) * p[i];
    }
    const double sx = sgn(m.x - mu.x), sy = sgn(m.y - mu.y);
    RuleState st;
    st.rank1.resize(n);
    st.signature = {static_cast<int>(sx), static_cast<int>(sy)};
    for (std::size_t i = 0; i < n; ++i) {
        const double cx = coordinate(i, width, Axis::x), cy = coordinate(i, width, Axis::y);
        if (rule == GradientRule::integral) {
            st.rank1[i] = sx * cx + sy * cy;
        } else {
            const double gx = sgn(cx - m.x), gy = sgn(cy - m.y);
            st.rank1[i] = a_grad * (sx * gx + sy * gy);
            st.signature.push_back(static_cast<int>(gx));
            st.signature.push_back(static_cast<int>(gy));
        }
    }
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += p[i] * st.rank1[i];
    st.diag.resize(n);
    st.value.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        st.diag[i] = st.rank1[i] - mean;
        st.value[i] = p[i] * st.diag[i];
    }
    return st;
}

void project_tangent(std::vector<double>& v) {
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    for (double& x : v) x -= mean;
}

double norm2(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

// Top right-singular vector of J = diag(d) - p c^T on the sum-zero subspace.
std::vector<double> steepest_direction(const RuleState& st, std::span<const double> p,
                                       std::size_t iterations, std::mt19937_64& rng) {
    const std::size_t n = p.size();
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<double> v(n), u(n);
    for (double& x : v) x = gauss(rng);
    project_tangent(v);
    for (std::size_t it = 0; it < iterations; ++it) {
        const double nv = norm2(v);
        if (nv == 0.0) break;
        for (double& x : v) x /= nv;
        double cv = 0.0;
        for (std::size_t i = 0; i < n; ++i) cv += st.rank1[i] * v[i];
        for (std::size_t i = 0; i < n; ++i) u[i] = st.diag[i] * v[i] - p[i] * cv;
        double pu = 0.0;
        for (std::size_t i = 0; i < n; ++i) pu += p[i] * u[i];
        for (std::size_t i = 0; i < n; ++i) v[i] = st.diag[i] * u[i] - st.rank1[i] * pu;
        project_tangent(v);
    }
    const double nv = norm2(v);
    if (nv > 0.0)
        for (double& x : v) x /= nv;
    return v;
}

} // namespace

LipschitzEstimate lipschitz_probe(const LipschitzProbeConfig& cfg) {
    if (cfg.n_trials < 100) throw InvalidArgument("lipschitz_probe needs at least 100 trials");
    if (cfg.width == 0 || cfg.height == 0) throw InvalidArgument("heatmap size must be positive");
    if (!(cfg.perturbation_scale >= 0.0)) throw InvalidArgument("perturbation scale must be >= 0");

    const std::size_t W = cfg.width, H = cfg.height, n = W * H;
    const double a_grad = static_cast<double>(W) / 8.0;
    std::mt19937_64 rng(cfg.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> ux(0.0, static_cast<double>(W - 1));
    std::uniform_real_distribution<double> uy(0.0, static_cast<double>(H - 1));

    LipschitzEstimate est;
    double best[2] = {0.0, 0.0};
    for (std::size_t t = 0; t < cfg.n_trials; ++t) {
        Heatmap z(1, H, W, HeatmapKind::logits);
        for (double& v : z.joint(0)) v = gauss(rng);
        const Point2 mu{ux(rng), uy(rng)};
        const auto norm = normalize(z, cfg.normalization);
        const auto p = norm.probability.joint(0);
        const double p_norm = norm2(p);

        double ratio[2] = {0.0, 0.0};
        bool usable = cfg.perturbation_scale > 0.0;
        for (int r = 0; r < 2 && usable; ++r) {
            const auto rule = r == 0 ? GradientRule::integral : GradientRule::asg;
            const auto base = evaluate_rule(p, W, mu, rule, a_grad);
            const auto dir = steepest_direction(base, p, cfg.power_iterations, rng);
            std::vector<double> moved(p.begin(), p.end());
            for (std::size_t i = 0; i < n; ++i) moved[i] += cfg.perturbation_scale * p_norm * dir[i];
            if (std::any_of(moved.begin(), moved.end(), [](double v) { return v < 0.0; })) {
                usable = false;
                break;
            }
            const auto after = evaluate_rule(moved, W, mu, rule, a_grad);
            if (after.signature != base.signature) {
                usable = false;
                break;
            }
            std::vector<double> dp(n), dg(n);
            for (std::size_t i = 0; i < n; ++i) {
                dp[i] = moved[i] - p[i];
                dg[i] = after.value[i] - base.value[i];
            }
            ratio[r] = norm2(dg) / norm2(dp);
        }
        if (!usable) {
            ++est.trials_skipped;
            continue;
        }
        ++est.trials_used;
        best[0] = std::max(best[0], ratio[0]);
        best[1] = std::max(best[1], ratio[1]);
    }
    if (est.trials_used == 0) {
        est.ratio_integral = est.ratio_asg = std::numeric_limits<double>::quiet_NaN();
    } else {
        est.ratio_integral = best[0];
        est.ratio_asg = best[1];
    }
    return est;
}

AmplitudeCalibration amplitude_calibration(std::size_t width, std::size_t height,
                                           std::size_t n_samples, const AsgConfig& cfg,
                                           std::uint64_t seed) {
    if (n_samples == 0) throw InvalidArgument("need at least one sample");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> ux(0.0, static_cast<double>(width - 1));

    AmplitudeCalibration out;
    out.samples = n_samples;
    const std::size_t n = width * height;
    double sum_int = 0.0, sum_bound = 0.0, sum_actual = 0.0;
    for (std::size_t s = 0; s < n_samples; ++s) {
        Heatmap z(1, height, width, HeatmapKind::logits);
        for (double& v : z.joint(0)) v = gauss(rng);
        const double mu = ux(rng);
        const auto norm = normalize_two_step(z);
        const auto p = norm.probability.joint(0);
        const auto m = soft_argmax(norm.probability, 0);
        double mean_sign = 0.0;
        for (std::size_t i = 0; i < n; ++i) mean_sign += p[i] * sgn(coordinate(i, width, Axis::x) - m.x);
        const double s_loss = sgn(m.x - mu);
        for (std::size_t i = 0; i < n; ++i) {
            const double x = coordinate(i, width, Axis::x);
            sum_int += std::abs(x - m.x) * p[i];
            sum_bound += 2.0 * cfg.a_grad * p[i];
            // Realised ASG logit gradient p_x * (g_x - <p, g>) for this heatmap.
            sum_actual += std::abs(cfg.a_grad * s_loss * p[i] * (sgn(x - m.x) - mean_sign));
        }
    }
    const double denom = static_cast<double>(n_samples * n);
    out.mean_integral = sum_int / denom;
    out.mean_asg_bound = sum_bound / denom;
    out.mean_asg_actual = sum_actual / denom;
    return out;
}

} // namespace posepipe::decode
