#include "posepipe/synth.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "posepipe/error.hpp"

namespace posepipe::synth {

SynthHeatmap gen_heatmap(decode::Point2 peak, double sigma, std::size_t width, std::size_t height,
                         double amplitude) {
    if (width == 0 || height == 0) throw InvalidArgument("heatmap must be non-empty");
    if (!(sigma > 0.0)) throw InvalidArgument("sigma must be positive");
    if (!(peak.x >= 0.0 && peak.x <= static_cast<double>(width - 1) && peak.y >= 0.0 &&
          peak.y <= static_cast<double>(height - 1)))
        throw InvalidArgument("peak outside the grid");
    SynthHeatmap out{Heatmap(1, height, width, HeatmapKind::logits), peak, {}};
    for (std::size_t y = 0; y < height; ++y)
        for (std::size_t x = 0; x < width; ++x) {
            const double dx = static_cast<double>(x) - peak.x;
            const double dy = static_cast<double>(y) - peak.y;
            out.logits.at(0, y, x) = amplitude - (dx * dx + dy * dy) / (2.0 * sigma * sigma);
        }
    std::vector<double> c, p;
    oracle::two_step(out.logits.values(), c, p);
    for (std::size_t y = 0; y < height; ++y)
        for (std::size_t x = 0; x < width; ++x) {
            out.expectation.x += p[y * width + x] * static_cast<double>(x);
            out.expectation.y += p[y * width + x] * static_cast<double>(y);
        }
    return out;
}

Pose random_pose(const LayoutPtr& layout, const DetectionBox& box, std::mt19937_64& rng, double min_conf) {
    std::uniform_real_distribution<double> ux(box.x_min, box.x_max), uy(box.y_min, box.y_max), uc(min_conf, 1.0);
    std::vector<Keypoint> kps(layout->joint_count());
    for (auto& k : kps) {
        k.x = ux(rng);
        k.y = uy(rng);
        k.confidence = uc(rng);
    }
    return make_pose(layout, std::move(kps), box.score, box);
}

DuplicatedScene gen_duplicated_scene(const LayoutPtr& layout, std::size_t n_people, std::size_t dup_per_person,
                                     double jitter, std::mt19937_64& rng, const SceneOptions& options) {
    if (!(jitter >= 0.0)) throw InvalidArgument("jitter must be non-negative");
    const double slot = options.image_width / static_cast<double>(std::max<std::size_t>(n_people, 1));
    if (n_people > 0 && slot < options.max_box) throw InvalidArgument("too many people for the image width");
    std::uniform_real_distribution<double> usize(options.min_box, options.max_box);
    std::uniform_real_distribution<double> uscore(options.min_score, options.max_score);
    std::normal_distribution<double> noise(0.0, 1.0);

    DuplicatedScene scene;
    std::vector<Pose> originals;
    for (std::size_t i = 0; i < n_people; ++i) {
        const double w = usize(rng), h = usize(rng);
        const double x0 = slot * static_cast<double>(i) + 0.5 * (slot - w);
        const double y0 = 100.0;
        DetectionBox box{x0, y0, x0 + w, y0 + h, uscore(rng), 0};
        Pose cand = random_pose(layout, box, rng);
        Pose gt = cand;
        for (auto& k : gt.keypoints) k.confidence = 1.0;
        scene.ground_truth.push_back({gt, box.area()});
        originals.push_back(cand);
        scene.candidates.push_back(cand);
        scene.source.push_back(i);
    }
    for (std::size_t i = 0; i < n_people; ++i)
        for (std::size_t d = 1; d <= dup_per_person; ++d) {
            Pose dup = originals[i];
            dup.score = originals[i].score * std::pow(options.score_decay, static_cast<double>(d));
            for (auto& k : dup.keypoints) {
                k.x += jitter * noise(rng);
                k.y += jitter * noise(rng);
            }
            dup.box.x_min += jitter * noise(rng);
            dup.box.y_min += jitter * noise(rng);
            dup.box.x_max += jitter * noise(rng);
            dup.box.y_max += jitter * noise(rng);
            if (dup.box.x_max <= dup.box.x_min || dup.box.y_max <= dup.box.y_min) dup.box = originals[i].box;
            dup.box.score = dup.score;
            scene.candidates.push_back(std::move(dup));
            scene.source.push_back(i);
        }
    return scene;
}

std::vector<nms::ValidationImage> gen_duplicated_dataset(const LayoutPtr& layout, std::size_t n_images,
                                                         std::size_t max_people, std::size_t dup_per_person,
                                                         double jitter, std::uint64_t seed,
                                                         const SceneOptions& options) {
    if (max_people == 0) throw InvalidArgument("max_people must be positive");
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> upeople(1, max_people);
    std::vector<nms::ValidationImage> out;
    for (std::size_t i = 0; i < n_images; ++i) {
        auto scene = gen_duplicated_scene(layout, upeople(rng), dup_per_person, jitter, rng, options);
        out.push_back({std::move(scene.candidates), std::move(scene.ground_truth)});
    }
    return out;
}

namespace {

// Halpe-136 pose in a box: random joints except a fixed head and neck.
Pose template_pose(const LayoutPtr& layout, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.05, 0.95);
    std::vector<Keypoint> kps(layout->joint_count());
    for (auto& k : kps) k = {u(rng), 0.25 + 0.7 * u(rng), 1.0};
    if (const auto& hs = layout->head_segment()) {
        kps[hs->first] = {0.5, 0.06, 1.0};
        kps[hs->second] = {0.5, 0.2, 1.0};
    }
    return make_pose(layout, std::move(kps), 1.0, {0.0, 0.0, 1.0, 1.0, 1.0, 0});
}

Pose place(const Pose& unit, const DetectionBox& box) {
    Pose p = unit;
    for (auto& k : p.keypoints) {
        k.x = box.x_min + k.x * box.width();
        k.y = box.y_min + k.y * box.height();
    }
    p.box = box;
    p.score = box.score;
    return p;
}

} // namespace

TrajectoryScene gen_trajectories(std::size_t n_people, std::size_t n_frames, const TrajectoryOptions& options,
                                 std::mt19937_64& rng) {
    if (n_people > track::kEmbeddingDim) throw InvalidArgument("too many people");
    const auto layout = options.layout ? options.layout : SkeletonLayout::builtin("halpe136");
    constexpr double box_w = 60.0, box_h = 150.0, x_start = 100.0, x_end = 900.0;

    struct Person {
        Pose unit;
        std::vector<double> embedding;
        double y = 0.0;
        double x0 = 0.0;
        double x1 = 0.0;
    };
    std::vector<Person> people(n_people);
    for (std::size_t i = 0; i < n_people; ++i) {
        auto& p = people[i];
        p.unit = template_pose(layout, rng);
        p.embedding.assign(track::kEmbeddingDim, 0.0);
        p.embedding[options.orthogonal_embeddings ? i : 0] = 1.0;
        p.y = 100.0 + 250.0 * static_cast<double>(i);
        p.x0 = x_start;
        p.x1 = x_end;
    }
    if (options.crossing && n_people >= 2) {
        people[1].y = people[0].y + options.lane_offset;
        std::swap(people[1].x0, people[1].x1);
    }

    std::normal_distribution<double> noise(0.0, 1.0);
    TrajectoryScene scene;
    for (std::size_t f = 0; f < n_frames; ++f) {
        const auto frame = static_cast<std::int64_t>(f);
        const double t = n_frames > 1 ? static_cast<double>(f) / static_cast<double>(n_frames - 1) : 0.0;
        std::vector<SynthDetection> dets;
        eval::TrackFrame gt{frame, {}};
        for (std::size_t i = 0; i < n_people; ++i) {
            const bool hidden = std::any_of(options.occlusions.begin(), options.occlusions.end(), [&](const auto& w) {
                return w.person == i && frame >= w.begin && frame < w.end;
            });
            if (hidden) continue;
            const auto& p = people[i];
            const double cx = p.x0 + t * (p.x1 - p.x0);
            const DetectionBox box{cx - box_w / 2, p.y - box_h / 2, cx + box_w / 2, p.y + box_h / 2, 1.0, 0};
            Pose pose = place(p.unit, box);
            std::vector<double> e = p.embedding;
            if (options.emb_noise > 0.0)
                for (auto& v : e) v += options.emb_noise * noise(rng);
            const auto id = static_cast<std::int64_t>(i + 1);
            dets.push_back({{box, pose, track::IdentityEmbedding::normalized(e)}, id});
            gt.people.push_back({id, std::move(pose)});
        }
        std::shuffle(dets.begin(), dets.end(), rng);
        scene.frames.push_back(std::move(dets));
        scene.ground_truth.push_back(std::move(gt));
    }
    return scene;
}

track::FeatureMap attention_from_pose(const Pose& pose, std::size_t height, std::size_t width, double sigma) {
    if (!(sigma > 0.0)) throw InvalidArgument("sigma must be positive");
    track::FeatureMap m(1, height, width, 0.0);
    for (std::size_t y = 0; y < height; ++y)
        for (std::size_t x = 0; x < width; ++x) {
            double best = 0.0;
            for (const auto& k : pose.keypoints) {
                if (k.confidence <= 0.0) continue;
                const double dx = static_cast<double>(x) - k.x, dy = static_cast<double>(y) - k.y;
                best = std::max(best, std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma)));
            }
            m.at(0, y, x) = std::clamp(best, 0.0, 1.0);
        }
    return m;
}

namespace oracle {

void two_step(const std::vector<double>& logits, std::vector<double>& confidence, std::vector<double>& probability) {
    confidence.resize(logits.size());
    probability.resize(logits.size());
    double total = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        confidence[i] = 1.0 / (1.0 + std::exp(-logits[i]));
        total += confidence[i];
    }
    for (std::size_t i = 0; i < logits.size(); ++i) probability[i] = confidence[i] / total;
}

double pose_distance(const Pose& candidate, const Pose& reference, const nms::NmsParams& params) {
    const double half_w = 0.5 * 0.1 * (candidate.box.x_max - candidate.box.x_min);
    const double half_h = 0.5 * 0.1 * (candidate.box.y_max - candidate.box.y_min);
    double k = 0.0, h = 0.0;
    for (std::size_t n = 0; n < candidate.keypoints.size(); ++n) {
        const auto& a = candidate.keypoints[n];
        const auto& b = reference.keypoints[n];
        if (std::abs(b.x - a.x) <= half_w && std::abs(b.y - a.y) <= half_h)
            k += std::tanh(a.confidence / params.sigma1) * std::tanh(b.confidence / params.sigma1);
        h += std::exp(-((a.x - b.x) * (a.x - b.x) + (a.y - b.y) * (a.y - b.y)) / params.sigma2);
    }
    return k + params.lambda * h;
}

std::vector<std::size_t> pose_nms(const std::vector<Pose>& poses, const nms::NmsParams& params) {
    std::vector<bool> alive(poses.size(), true);
    std::vector<std::size_t> kept;
    for (;;) {
        std::size_t ref = poses.size();
        for (std::size_t i = 0; i < poses.size(); ++i)
            if (alive[i] && (ref == poses.size() || poses[i].score > poses[ref].score)) ref = i;
        if (ref == poses.size()) break;
        kept.push_back(ref);
        alive[ref] = false;
        for (std::size_t i = 0; i < poses.size(); ++i)
            if (alive[i] && oracle::pose_distance(poses[i], poses[ref], params) >= params.eta) alive[i] = false;
    }
    return kept;
}

std::vector<std::pair<std::size_t, std::size_t>> stage_links(const track::DistanceMatrix& m, double threshold) {
    // Column chosen by row p, or cols when none.
    auto choice = [&](std::size_t p) {
        for (std::size_t q = 0; q < m.cols; ++q) {
            bool is_min = true;
            for (std::size_t r = 0; r < m.cols; ++r)
                if (m.at(p, r) < m.at(p, q) || (r < q && m.at(p, r) == m.at(p, q))) is_min = false;
            if (is_min) return m.at(p, q) <= threshold ? q : m.cols;
        }
        return m.cols;
    };
    std::vector<std::pair<std::size_t, std::size_t>> links;
    for (std::size_t p = 0; p < m.rows; ++p) {
        const std::size_t q = choice(p);
        if (q == m.cols) continue;
        bool wins = true;
        for (std::size_t o = 0; o < m.rows; ++o) {
            if (o == p || choice(o) != q) continue;
            if (m.at(o, q) < m.at(p, q) || (m.at(o, q) == m.at(p, q) && o < p)) wins = false;
        }
        if (wins) links.emplace_back(p, q);
    }
    return links;
}

std::vector<std::pair<std::size_t, std::size_t>> cascade(const track::DistanceMatrix& emb,
                                                         const std::vector<bool>& valid_rows,
                                                         const std::vector<bool>& valid_cols,
                                                         const track::DistanceMatrix& fusion,
                                                         const track::MsimConfig& config) {
    std::vector<bool> row_used(fusion.rows, false), col_used(fusion.cols, false);
    std::vector<std::pair<std::size_t, std::size_t>> all;
    auto stage = [&](const track::DistanceMatrix& m, double threshold, bool emb_stage) {
        std::vector<std::size_t> rows, cols;
        for (std::size_t p = 0; p < m.rows; ++p)
            if (!row_used[p] && (!emb_stage || valid_rows[p])) rows.push_back(p);
        for (std::size_t q = 0; q < m.cols; ++q)
            if (!col_used[q] && (!emb_stage || valid_cols[q])) cols.push_back(q);
        track::DistanceMatrix sub(rows.size(), cols.size());
        for (std::size_t i = 0; i < rows.size(); ++i)
            for (std::size_t j = 0; j < cols.size(); ++j) sub.at(i, j) = m.at(rows[i], cols[j]);
        for (const auto& [i, j] : stage_links(sub, threshold)) {
            row_used[rows[i]] = col_used[cols[j]] = true;
            all.emplace_back(rows[i], cols[j]);
        }
    };
    stage(emb, config.mu_emb, true);
    stage(fusion, config.mu_f, false);
    stage(fusion, config.mu_f / config.relax_factor, false);
    std::sort(all.begin(), all.end());
    return all;
}

track::FeatureMap pga_fuse(const track::FeatureMap& m_id, const track::FeatureMap& m_a) {
    track::FeatureMap out(m_id.channels, m_id.height, m_id.width);
    for (std::size_t c = 0; c < m_id.channels; ++c)
        for (std::size_t y = 0; y < m_id.height; ++y)
            for (std::size_t x = 0; x < m_id.width; ++x) {
                const double a = m_a.at(m_a.channels == 1 ? 0 : c, y, x);
                out.at(c, y, x) = m_id.at(c, y, x) * (1.0 + a);
            }
    return out;
}

double normalized_pose_distance(const Pose& a, const Pose& b, const nms::NmsParams& params) {
    const std::size_t m = a.keypoints.size();
    double k = 0.0, h = 0.0;
    for (std::size_t n = 0; n < m; ++n) {
        const double ax = (a.keypoints[n].x - a.box.center_x()) / a.box.width();
        const double ay = (a.keypoints[n].y - a.box.center_y()) / a.box.height();
        const double bx = (b.keypoints[n].x - b.box.center_x()) / b.box.width();
        const double by = (b.keypoints[n].y - b.box.center_y()) / b.box.height();
        if (std::abs(bx - ax) <= 0.05 && std::abs(by - ay) <= 0.05)
            k += std::tanh(a.keypoints[n].confidence / params.sigma1) *
                 std::tanh(b.keypoints[n].confidence / params.sigma1);
        h += std::exp(-((ax - bx) * (ax - bx) + (ay - by) * (ay - by)) / params.sigma2);
    }
    const double t = std::tanh(1.0 / params.sigma1);
    const double d = 1.0 - (k + params.lambda * h) / (static_cast<double>(m) * (t * t + params.lambda));
    return std::min(1.0, std::max(0.0, d));
}

} // namespace oracle

} // namespace posepipe::synth
