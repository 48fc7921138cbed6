#include "posepipe/track.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "posepipe/error.hpp"

namespace posepipe::track {

IdentityEmbedding IdentityEmbedding::normalized(std::span<const double> values) {
    if (values.size() != kEmbeddingDim)
        throw InvalidArgument("embedding must have " + std::to_string(kEmbeddingDim) + " values, got " +
                              std::to_string(values.size()));
    double norm2 = 0.0;
    for (double v : values) {
        if (!std::isfinite(v)) throw InvalidArgument("embedding contains a non-finite value");
        norm2 += v * v;
    }
    if (!(norm2 > 0.0)) throw NumericalError("zero-norm embedding");
    const double inv = 1.0 / std::sqrt(norm2);
    IdentityEmbedding e;
    e.values_.reserve(values.size());
    for (double v : values) e.values_.push_back(v * inv);
    return e;
}

double IdentityEmbedding::dot(const IdentityEmbedding& other) const {
    if (values_.size() != other.values_.size()) throw InvalidArgument("embedding size mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < values_.size(); ++i) s += values_[i] * other.values_[i];
    return s;
}

FeatureMap::FeatureMap(std::size_t c, std::size_t h, std::size_t w, double fill)
    : channels(c), height(h), width(w), values(c * h * w, fill) {}

void FeatureMap::validate(bool attention) const {
    if (values.size() != size()) throw InvalidArgument("feature map value count does not match its shape");
    for (double v : values) {
        if (!std::isfinite(v)) throw InvalidArgument("feature map contains a non-finite value");
        if (attention && (v < 0.0 || v > 1.0)) throw InvalidArgument("attention value outside [0, 1]");
    }
}

FeatureMap pga_fuse(const FeatureMap& m_id, const FeatureMap& m_a) {
    m_id.validate();
    m_a.validate(true);
    const bool broadcast = m_a.channels == 1 && m_id.channels != 1;
    if (m_a.height != m_id.height || m_a.width != m_id.width ||
        (!broadcast && m_a.channels != m_id.channels))
        throw InvalidArgument("feature map dimensions differ");
    FeatureMap out = m_id;
    const std::size_t plane = m_id.height * m_id.width;
    for (std::size_t i = 0; i < out.values.size(); ++i) {
        const double a = broadcast ? m_a.values[i % plane] : m_a.values[i];
        out.values[i] = m_id.values[i] * a + m_id.values[i];
    }
    return out;
}

Embedder::Embedder(std::size_t input_size, std::uint64_t seed) {
    if (input_size == 0) throw InvalidArgument("embedder input size must be positive");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0 / std::sqrt(static_cast<double>(input_size)));
    weights_.resize(static_cast<Eigen::Index>(kEmbeddingDim), static_cast<Eigen::Index>(input_size));
    for (Eigen::Index r = 0; r < weights_.rows(); ++r)
        for (Eigen::Index c = 0; c < weights_.cols(); ++c) weights_(r, c) = gauss(rng);
}

Embedder::Embedder(Eigen::MatrixXd weights) : weights_(std::move(weights)) {
    if (static_cast<std::size_t>(weights_.rows()) != kEmbeddingDim || weights_.cols() == 0)
        throw InvalidArgument("projection must have " + std::to_string(kEmbeddingDim) + " rows");
    if (!weights_.allFinite()) throw InvalidArgument("projection contains a non-finite value");
}

IdentityEmbedding Embedder::embed(const FeatureMap& m_wid) const {
    m_wid.validate();
    if (m_wid.size() != input_size())
        throw InvalidArgument("feature size " + std::to_string(m_wid.size()) + " does not match projection input " +
                              std::to_string(input_size()));
    const Eigen::Map<const Eigen::VectorXd> in(m_wid.values.data(), static_cast<Eigen::Index>(m_wid.size()));
    const Eigen::VectorXd out = weights_ * in;
    return IdentityEmbedding::normalized({out.data(), static_cast<std::size_t>(out.size())});
}

DistanceMatrix embedding_affinity(std::span<const IdentityEmbedding> detections,
                                  std::span<const IdentityEmbedding> tracks) {
    DistanceMatrix m(detections.size(), tracks.size());
    for (std::size_t p = 0; p < detections.size(); ++p)
        for (std::size_t q = 0; q < tracks.size(); ++q)
            m.at(p, q) = std::clamp((1.0 - detections[p].dot(tracks[q])) / 2.0, 0.0, 1.0);
    return m;
}

StageResult stage_match(const DistanceMatrix& m, double threshold) {
    constexpr std::size_t none = std::numeric_limits<std::size_t>::max();
    std::vector<std::size_t> choice(m.rows, none);
    for (std::size_t p = 0; p < m.rows; ++p) {
        if (m.cols == 0) continue;
        std::size_t best = 0;
        for (std::size_t q = 1; q < m.cols; ++q)
            if (m.at(p, q) < m.at(p, best)) best = q;
        if (m.at(p, best) <= threshold) choice[p] = best;
    }
    std::vector<std::size_t> owner(m.cols, none);
    for (std::size_t p = 0; p < m.rows; ++p) {
        if (choice[p] == none) continue;
        std::size_t& o = owner[choice[p]];
        if (o == none || m.at(p, choice[p]) < m.at(o, choice[p])) o = p;
    }
    StageResult res;
    for (std::size_t p = 0; p < m.rows; ++p) {
        if (choice[p] != none && owner[choice[p]] == p)
            res.links.emplace_back(p, choice[p]);
        else
            res.untracked.push_back(p);
    }
    return res;
}

namespace {

Pose unit_pose(const Pose& p) {
    const double w = p.box.width(), h = p.box.height();
    if (!(w > 0.0) || !(h > 0.0)) throw InvalidArgument("pose needs a non-degenerate box");
    Pose out = p;
    const double cx = p.box.center_x(), cy = p.box.center_y();
    for (auto& k : out.keypoints) {
        k.x = (k.x - cx) / w;
        k.y = (k.y - cy) / h;
    }
    out.box = {-0.5, -0.5, 0.5, 0.5, p.box.score, p.box.category};
    return out;
}

} // namespace

double normalized_pose_distance(const Pose& a, const Pose& b, const nms::NmsParams& params) {
    params.validate();
    const Pose na = unit_pose(a);
    const Pose nb = unit_pose(b);
    const double t = std::tanh(1.0 / params.sigma1);
    const double d_max = static_cast<double>(na.keypoints.size()) * (t * t + params.lambda);
    if (!(d_max > 0.0)) throw InvalidArgument("pose has no joints");
    return std::clamp(1.0 - nms::pose_distance(na, nb, params) / d_max, 0.0, 1.0);
}

BoxKalman::BoxKalman(const DetectionBox& box, const KalmanConfig& config)
    : score_(box.score), category_(box.category) {
    if (!(box.width() > 0.0) || !(box.height() > 0.0)) throw InvalidArgument("cannot track a degenerate box");
    x_.setZero();
    x_ << box.center_x(), box.center_y(), box.area(), box.width() / box.height(), 0, 0, 0, 0;
    p_.setZero();
    q_.setZero();
    r_.setZero();
    for (int i = 0; i < 4; ++i) {
        p_(i, i) = config.initial_position_var[i];
        p_(i + 4, i + 4) = config.initial_velocity_var[i];
        r_(i, i) = config.measurement_var[i];
    }
    for (int i = 0; i < 8; ++i) q_(i, i) = config.process_var[i];
}

void BoxKalman::predict() {
    if (x_(2) + x_(6) <= 0.0) x_(6) = 0.0;
    Eigen::Matrix<double, 8, 8> f = Eigen::Matrix<double, 8, 8>::Identity();
    for (int i = 0; i < 4; ++i) f(i, i + 4) = 1.0;
    x_ = f * x_;
    p_ = f * p_ * f.transpose() + q_;
}

void BoxKalman::update(const DetectionBox& box) {
    if (!(box.width() > 0.0) || !(box.height() > 0.0)) throw InvalidArgument("cannot update with a degenerate box");
    Eigen::Vector4d z(box.center_x(), box.center_y(), box.area(), box.width() / box.height());
    Eigen::Matrix<double, 4, 8> h = Eigen::Matrix<double, 4, 8>::Zero();
    for (int i = 0; i < 4; ++i) h(i, i) = 1.0;
    const Eigen::Matrix4d s = h * p_ * h.transpose() + r_;
    // Pseudo-inverse keeps the noise-free case (singular S) well defined.
    const Eigen::Matrix4d s_inv = s.completeOrthogonalDecomposition().pseudoInverse();
    const Eigen::Matrix<double, 8, 4> k = p_ * h.transpose() * s_inv;
    x_ += k * (z - h * x_);
    const Eigen::Matrix<double, 8, 8> i_kh = Eigen::Matrix<double, 8, 8>::Identity() - k * h;
    // Joseph form keeps P symmetric positive semidefinite.
    p_ = i_kh * p_ * i_kh.transpose() + k * r_ * k.transpose();
    p_ = 0.5 * (p_ + p_.transpose());
    score_ = box.score;
    category_ = box.category;
}

DetectionBox BoxKalman::box() const {
    const double area = std::max(x_(2), 0.0);
    const double aspect = std::max(x_(3), 0.0);
    const double w = std::sqrt(area * aspect);
    const double h = w > 0.0 ? area / w : 0.0;
    return {x_(0) - w / 2.0, x_(1) - h / 2.0, x_(0) + w / 2.0, x_(1) + h / 2.0, score_, category_};
}

void MsimConfig::validate() const {
    if (!(mu_emb > 0.0 && mu_emb <= 1.0)) throw InvalidArgument("mu_emb must be in (0, 1]");
    if (!(mu_f > 0.0 && mu_f <= 1.0)) throw InvalidArgument("mu_f must be in (0, 1]");
    if (!(relax_factor > 0.0 && relax_factor < 1.0)) throw InvalidArgument("relax_factor must be in (0, 1)");
    if (!(lambda_np >= 0.0)) throw InvalidArgument("lambda_np must be non-negative");
    if (!(ema_alpha >= 0.0 && ema_alpha <= 1.0)) throw InvalidArgument("ema_alpha must be in [0, 1]");
    shape.validate();
}

DistanceMatrix fusion_matrix(std::span<const TrackInput> detections, std::span<const Track> tracks,
                             double lambda_np, const nms::NmsParams& shape) {
    DistanceMatrix m(detections.size(), tracks.size());
    std::vector<DetectionBox> predicted;
    predicted.reserve(tracks.size());
    for (const auto& t : tracks) predicted.push_back(t.kalman.box());
    for (std::size_t p = 0; p < detections.size(); ++p)
        for (std::size_t q = 0; q < tracks.size(); ++q) {
            double np = 0.0;
            if (detections[p].pose && tracks[q].last_pose)
                np = normalized_pose_distance(*detections[p].pose, *tracks[q].last_pose, shape);
            m.at(p, q) = (1.0 - iou(detections[p].box, predicted[q])) + lambda_np * np;
        }
    return m;
}

namespace {

// Runs stage_match on the submatrix of `rows` x `cols` and maps the result back.
StageResult sub_match(const DistanceMatrix& m, const std::vector<std::size_t>& rows,
                      const std::vector<std::size_t>& cols, double threshold) {
    DistanceMatrix sub(rows.size(), cols.size());
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < cols.size(); ++j) sub.at(i, j) = m.at(rows[i], cols[j]);
    StageResult r = stage_match(sub, threshold);
    for (auto& [p, q] : r.links) {
        p = rows[p];
        q = cols[q];
    }
    for (auto& p : r.untracked) p = rows[p];
    return r;
}

} // namespace

CascadeResult cascade_match(const DistanceMatrix& emb, const std::vector<bool>& emb_valid_rows,
                            const std::vector<bool>& emb_valid_cols, const DistanceMatrix& fusion,
                            const MsimConfig& config) {
    config.validate();
    const std::size_t n_det = fusion.rows, n_trk = fusion.cols;
    if (emb.rows != n_det || emb.cols != n_trk || emb_valid_rows.size() != n_det ||
        emb_valid_cols.size() != n_trk)
        throw InvalidArgument("matching matrices disagree in shape");

    std::vector<bool> det_done(n_det, false), trk_done(n_trk, false);
    CascadeResult res;
    auto run = [&](const DistanceMatrix& m, double threshold, MatchStage stage, bool emb_stage) {
        std::vector<std::size_t> rows, cols;
        for (std::size_t p = 0; p < n_det; ++p)
            if (!det_done[p] && (!emb_stage || emb_valid_rows[p])) rows.push_back(p);
        for (std::size_t q = 0; q < n_trk; ++q)
            if (!trk_done[q] && (!emb_stage || emb_valid_cols[q])) cols.push_back(q);
        if (rows.empty() || cols.empty()) return;
        for (const auto& [p, q] : sub_match(m, rows, cols, threshold).links) {
            det_done[p] = trk_done[q] = true;
            res.links.emplace_back(p, q);
            res.stages.push_back(stage);
        }
    };
    run(emb, config.mu_emb, MatchStage::embedding, true);
    run(fusion, config.mu_f, MatchStage::fusion, false);
    run(fusion, config.mu_f / config.relax_factor, MatchStage::relaxed, false);
    for (std::size_t p = 0; p < n_det; ++p)
        if (!det_done[p]) res.unmatched.push_back(p);
    return res;
}

std::vector<Assignment> msim_step(std::int64_t frame, std::span<const TrackInput> detections,
                                  TrackPool& pool, const MsimConfig& config) {
    config.validate();
    for (auto& t : pool.tracks) t.kalman.predict();

    const std::size_t n_det = detections.size(), n_trk = pool.tracks.size();
    std::vector<bool> valid_rows(n_det), valid_cols(n_trk);
    DistanceMatrix emb(n_det, n_trk, 1.0);
    for (std::size_t p = 0; p < n_det; ++p) valid_rows[p] = detections[p].embedding.has_value();
    for (std::size_t q = 0; q < n_trk; ++q) valid_cols[q] = pool.tracks[q].embedding.has_value();
    for (std::size_t p = 0; p < n_det; ++p)
        for (std::size_t q = 0; q < n_trk; ++q)
            if (valid_rows[p] && valid_cols[q])
                emb.at(p, q) = std::clamp((1.0 - detections[p].embedding->dot(*pool.tracks[q].embedding)) / 2.0,
                                          0.0, 1.0);
    const DistanceMatrix fusion = fusion_matrix(detections, pool.tracks, config.lambda_np, config.shape);
    const CascadeResult cascade = cascade_match(emb, valid_rows, valid_cols, fusion, config);

    std::vector<Assignment> out;
    std::vector<bool> matched(n_trk, false);
    for (std::size_t i = 0; i < cascade.links.size(); ++i) {
        const auto [p, q] = cascade.links[i];
        Track& t = pool.tracks[q];
        matched[q] = true;
        t.kalman.update(detections[p].box);
        if (detections[p].pose) t.last_pose = detections[p].pose;
        if (detections[p].embedding) {
            if (t.embedding) {
                std::vector<double> mix(kEmbeddingDim);
                for (std::size_t k = 0; k < kEmbeddingDim; ++k)
                    mix[k] = config.ema_alpha * t.embedding->values()[k] +
                             (1.0 - config.ema_alpha) * detections[p].embedding->values()[k];
                try {
                    t.embedding = IdentityEmbedding::normalized(mix);
                } catch (const NumericalError&) {
                    t.embedding = detections[p].embedding;
                }
            } else {
                t.embedding = detections[p].embedding;
            }
        }
        t.last_seen = frame;
        t.lost_frames = 0;
        t.status = TrackStatus::active;
        out.push_back({p, t.id, cascade.stages[i]});
    }

    for (auto& t : pool.tracks) {
        const auto q = static_cast<std::size_t>(&t - pool.tracks.data());
        if (matched[q]) continue;
        ++t.lost_frames;
        t.status = t.lost_frames > config.max_lost ? TrackStatus::removed : TrackStatus::lost;
    }
    std::erase_if(pool.tracks, [](const Track& t) { return t.status == TrackStatus::removed; });

    for (std::size_t p : cascade.unmatched) {
        pool.tracks.push_back(Track{pool.next_id++, BoxKalman(detections[p].box, config.kalman),
                                    detections[p].pose, detections[p].embedding, frame, 0,
                                    TrackStatus::active});
        out.push_back({p, pool.tracks.back().id, MatchStage::fresh});
    }
    std::sort(out.begin(), out.end(),
              [](const Assignment& a, const Assignment& b) { return a.detection < b.detection; });
    return out;
}

Tracker::Tracker(MsimConfig config) : config_(std::move(config)) { config_.validate(); }

std::vector<Assignment> Tracker::step(std::int64_t frame, std::span<const TrackInput> detections) {
    return msim_step(frame, detections, pool_, config_);
}

DetectionBox Tracker::track_box(std::int64_t id) const {
    for (const auto& t : pool_.tracks)
        if (t.id == id) return t.kalman.box();
    throw NotFound("no live track with id " + std::to_string(id));
}

} // namespace posepipe::track
