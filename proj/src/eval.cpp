#include "posepipe/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <unordered_map>

#include "posepipe/error.hpp"

namespace posepipe::eval {

std::vector<double> default_oks_thresholds() {
    std::vector<double> t(10);
    for (int i = 0; i < 10; ++i) t[i] = 0.5 + 0.05 * i;
    return t;
}

namespace {

void check_same_layout(const Pose& a, const Pose& b) {
    check_pose(a);
    check_pose(b);
    if (a.layout->joint_count() != b.layout->joint_count() || a.layout->name() != b.layout->name())
        throw InvalidArgument("poses use different skeleton layouts");
}

std::pair<std::size_t, std::size_t> joint_range(const Pose& p, const PartRange* part) {
    if (part) return {part->begin, part->end};
    return {0, p.joint_count()};
}

std::size_t labeled_count(const Pose& gt, const PartRange* part) {
    auto [b, e] = joint_range(gt, part);
    std::size_t n = 0;
    for (std::size_t j = b; j < e; ++j) n += gt.keypoints[j].confidence > 0.0 ? 1 : 0;
    return n;
}

double instance_area(const GtInstance& g) { return g.area > 0.0 ? g.area : g.pose.box.area(); }

double prediction_area(const Pose& p) {
    if (p.box.width() > 0.0 && p.box.height() > 0.0) return p.box.area();
    double x0 = std::numeric_limits<double>::infinity(), y0 = x0, x1 = -x0, y1 = -x0;
    for (const auto& k : p.keypoints) {
        x0 = std::min(x0, k.x);
        y0 = std::min(y0, k.y);
        x1 = std::max(x1, k.x);
        y1 = std::max(y1, k.y);
    }
    return p.keypoints.empty() ? 0.0 : (x1 - x0) * (y1 - y0);
}

struct AreaRange {
    double lo, hi;
};

constexpr AreaRange kAll{0.0, 1e10};
constexpr AreaRange kMedium{32.0 * 32.0, 96.0 * 96.0};
constexpr AreaRange kLarge{96.0 * 96.0, 1e10};

// Per-image, per-threshold matching outcome for one area range.
struct ImageMatch {
    std::vector<double> scores;             // kept detections, sorted
    std::vector<std::vector<char>> matched; // [t][d]
    std::vector<std::vector<char>> ignored; // [t][d]
    std::size_t gt_not_ignored = 0;
};

ImageMatch match_image(const std::vector<Pose>* preds, const std::vector<GtInstance>& gts,
                       const std::vector<double>& thresholds, const PartRange* part,
                       std::size_t max_dets, AreaRange range) {
    ImageMatch out;
    const std::size_t T = thresholds.size();

    // Ground truth, non-ignored first (stable).
    std::vector<std::size_t> gorder(gts.size());
    std::vector<char> gignore(gts.size());
    for (std::size_t g = 0; g < gts.size(); ++g) {
        const double a = instance_area(gts[g]);
        gignore[g] = labeled_count(gts[g].pose, part) == 0 || a < range.lo || a > range.hi;
    }
    std::iota(gorder.begin(), gorder.end(), 0);
    std::stable_sort(gorder.begin(), gorder.end(),
                     [&](std::size_t a, std::size_t b) { return gignore[a] < gignore[b]; });
    for (char ig : gignore) out.gt_not_ignored += ig ? 0 : 1;

    std::vector<std::size_t> dorder;
    if (preds) {
        dorder.resize(preds->size());
        std::iota(dorder.begin(), dorder.end(), 0);
        std::stable_sort(dorder.begin(), dorder.end(), [&](std::size_t a, std::size_t b) {
            return (*preds)[a].score > (*preds)[b].score;
        });
        if (dorder.size() > max_dets) dorder.resize(max_dets);
    }
    const std::size_t D = dorder.size(), G = gorder.size();

    std::vector<double> sim(D * G, 0.0);
    for (std::size_t d = 0; d < D; ++d)
        for (std::size_t gi = 0; gi < G; ++gi) {
            const auto& g = gts[gorder[gi]];
            if (labeled_count(g.pose, part) == 0) continue;
            sim[d * G + gi] = oks((*preds)[dorder[d]], g.pose, instance_area(g), part);
        }

    out.scores.resize(D);
    for (std::size_t d = 0; d < D; ++d) out.scores[d] = (*preds)[dorder[d]].score;
    out.matched.assign(T, std::vector<char>(D, 0));
    out.ignored.assign(T, std::vector<char>(D, 0));

    for (std::size_t t = 0; t < T; ++t) {
        std::vector<char> gt_taken(G, 0);
        for (std::size_t d = 0; d < D; ++d) {
            double best = std::min(thresholds[t], 1.0 - 1e-10);
            std::ptrdiff_t m = -1;
            for (std::size_t gi = 0; gi < G; ++gi) {
                if (gt_taken[gi]) continue;
                // Once a regular gt is matched, stop before the ignored ones.
                if (m > -1 && !gignore[gorder[m]] && gignore[gorder[gi]]) break;
                if (sim[d * G + gi] < best) continue;
                best = sim[d * G + gi];
                m = static_cast<std::ptrdiff_t>(gi);
            }
            if (m == -1) continue;
            gt_taken[m] = 1;
            out.matched[t][d] = 1;
            out.ignored[t][d] = gignore[gorder[m]];
        }
        for (std::size_t d = 0; d < D; ++d) {
            if (out.matched[t][d]) continue;
            const double a = prediction_area((*preds)[dorder[d]]);
            if (a < range.lo || a > range.hi) out.ignored[t][d] = 1;
        }
    }
    return out;
}

struct Accumulated {
    std::vector<double> precision_ap; // per threshold, -1 when no ground truth
    std::vector<double> recall;       // per threshold, -1 when no ground truth
};

Accumulated accumulate(const std::vector<ImageMatch>& images, std::size_t T) {
    Accumulated acc;
    acc.precision_ap.assign(T, -1.0);
    acc.recall.assign(T, -1.0);

    std::size_t npig = 0;
    std::vector<double> scores;
    for (const auto& im : images) {
        npig += im.gt_not_ignored;
        scores.insert(scores.end(), im.scores.begin(), im.scores.end());
    }
    if (npig == 0) return acc;

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

    constexpr int kRecallPoints = 101;
    for (std::size_t t = 0; t < T; ++t) {
        std::vector<char> m, ig;
        for (const auto& im : images) {
            m.insert(m.end(), im.matched[t].begin(), im.matched[t].end());
            ig.insert(ig.end(), im.ignored[t].begin(), im.ignored[t].end());
        }
        std::vector<double> rc, pr;
        double tp = 0.0, fp = 0.0;
        for (std::size_t idx : order) {
            if (ig[idx]) continue;
            if (m[idx])
                tp += 1.0;
            else
                fp += 1.0;
            rc.push_back(tp / static_cast<double>(npig));
            pr.push_back(tp / (tp + fp + std::numeric_limits<double>::epsilon()));
        }
        acc.recall[t] = rc.empty() ? 0.0 : rc.back();
        for (std::size_t i = pr.size(); i-- > 1;) pr[i - 1] = std::max(pr[i - 1], pr[i]);
        double q_sum = 0.0;
        for (int r = 0; r < kRecallPoints; ++r) {
            const double thr = static_cast<double>(r) / 100.0;
            const auto it = std::lower_bound(rc.begin(), rc.end(), thr);
            if (it != rc.end()) q_sum += pr[static_cast<std::size_t>(it - rc.begin())];
        }
        acc.precision_ap[t] = q_sum / kRecallPoints;
    }
    return acc;
}

double mean_valid(const std::vector<double>& v) {
    double s = 0.0;
    std::size_t n = 0;
    for (double x : v)
        if (x > -1.0) {
            s += x;
            ++n;
        }
    return n ? s / static_cast<double>(n) : -1.0;
}

} // namespace

double oks(const Pose& pred, const Pose& gt, double gt_area, const PartRange* part) {
    check_same_layout(pred, gt);
    if (!(gt_area > 0.0)) throw InvalidArgument("ground-truth area must be positive");
    const auto& k = gt.layout->oks_k();
    auto [b, e] = joint_range(gt, part);
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t j = b; j < e; ++j) {
        if (gt.keypoints[j].confidence <= 0.0) continue;
        const double dx = pred.keypoints[j].x - gt.keypoints[j].x;
        const double dy = pred.keypoints[j].y - gt.keypoints[j].y;
        sum += std::exp(-(dx * dx + dy * dy) / (2.0 * gt_area * k[j] * k[j]));
        ++n;
    }
    if (n == 0) throw InvalidArgument("no labeled ground-truth joints");
    return sum / static_cast<double>(n);
}

MapResult map_eval(std::span<const ImagePredictions> preds, std::span<const ImageGroundTruth> gts,
                   const MapOptions& options) {
    const auto& thr = options.thresholds;
    if (thr.empty()) throw InvalidArgument("no OKS thresholds");
    for (std::size_t i = 0; i < thr.size(); ++i)
        if (!(thr[i] > 0.0 && thr[i] < 1.0) || (i > 0 && !(thr[i] > thr[i - 1])))
            throw InvalidArgument("OKS thresholds must be strictly increasing within (0, 1)");

    std::map<std::int64_t, const ImageGroundTruth*> gt_by_id;
    for (const auto& g : gts)
        if (!gt_by_id.emplace(g.image_id, &g).second)
            throw InvalidArgument("duplicate ground-truth image id " + std::to_string(g.image_id));
    std::map<std::int64_t, const ImagePredictions*> pred_by_id;
    for (const auto& p : preds) {
        if (!pred_by_id.emplace(p.image_id, &p).second)
            throw InvalidArgument("duplicate prediction image id " + std::to_string(p.image_id));
        if (!gt_by_id.count(p.image_id))
            throw InvalidArgument("predictions for unknown image id " + std::to_string(p.image_id));
    }

    const PartRange* part = nullptr;
    if (options.part)
        for (const auto& g : gts)
            if (!g.instances.empty()) {
                check_pose(g.instances.front().pose);
                part = &g.instances.front().pose.layout->part(*options.part);
                break;
            }

    auto evaluate_range = [&](AreaRange range) {
        std::vector<ImageMatch> images;
        images.reserve(gt_by_id.size());
        for (const auto& [id, g] : gt_by_id) {
            auto it = pred_by_id.find(id);
            const std::vector<Pose>* p = it == pred_by_id.end() ? nullptr : &it->second->poses;
            images.push_back(match_image(p, g->instances, thr, part, options.max_dets, range));
        }
        return accumulate(images, thr.size());
    };

    MapResult r;
    const auto all = evaluate_range(kAll);
    r.ap_per_threshold = all.precision_ap;
    r.ap = mean_valid(all.precision_ap);
    r.ar = mean_valid(all.recall);
    auto at = [&](double t) {
        for (std::size_t i = 0; i < thr.size(); ++i)
            if (std::abs(thr[i] - t) < 1e-9) return all.precision_ap[i];
        return -1.0;
    };
    r.ap50 = at(0.5);
    r.ap75 = at(0.75);
    r.ap_medium = mean_valid(evaluate_range(kMedium).precision_ap);
    r.ap_large = mean_valid(evaluate_range(kLarge).precision_ap);
    return r;
}

MotReport mot_eval(std::span<const TrackFrame> predictions, std::span<const TrackFrame> ground_truth,
                   double pckh_threshold) {
    if (!(pckh_threshold > 0.0)) throw InvalidArgument("PCKh threshold must be positive");
    std::map<std::int64_t, const TrackFrame*> gt_frames, pred_frames;
    for (const auto& f : ground_truth)
        if (!gt_frames.emplace(f.frame, &f).second)
            throw InvalidArgument("duplicate ground-truth frame " + std::to_string(f.frame));
    for (const auto& f : predictions) {
        if (!pred_frames.emplace(f.frame, &f).second)
            throw InvalidArgument("duplicate predicted frame " + std::to_string(f.frame));
        if (!gt_frames.count(f.frame))
            throw InvalidArgument("predicted frame " + std::to_string(f.frame) + " has no ground truth");
    }

    LayoutPtr layout;
    for (const auto& f : ground_truth)
        for (const auto& p : f.people) {
            check_pose(p.pose);
            if (!layout) layout = p.pose.layout;
        }
    MotReport report;
    if (!layout) return report;
    if (!layout->head_segment())
        throw InvalidArgument("layout '" + layout->name() + "' has no head segment for PCKh");
    const auto [head, neck] = *layout->head_segment();
    const std::size_t J = layout->joint_count();
    report.per_joint.resize(J);

    // Last matched prediction id per (joint, gt id).
    std::vector<std::unordered_map<std::int64_t, std::int64_t>> last(J);

    for (const auto& [frame_id, gtf] : gt_frames) {
        auto pit = pred_frames.find(frame_id);
        const TrackFrame* pf = pit == pred_frames.end() ? nullptr : pit->second;

        std::vector<double> head_size(gtf->people.size());
        for (std::size_t g = 0; g < gtf->people.size(); ++g) {
            const auto& kp = gtf->people[g].pose.keypoints;
            if (kp[head].confidence <= 0.0 || kp[neck].confidence <= 0.0)
                throw InvalidArgument("ground-truth person without head annotation in frame " +
                                      std::to_string(frame_id));
            head_size[g] = std::hypot(kp[head].x - kp[neck].x, kp[head].y - kp[neck].y);
        }
        if (pf)
            for (const auto& p : pf->people) {
                check_pose(p.pose);
                if (p.pose.joint_count() != J) throw InvalidArgument("prediction layout mismatch");
            }

        for (std::size_t j = 0; j < J; ++j) {
            std::vector<std::size_t> gs, ps;
            for (std::size_t g = 0; g < gtf->people.size(); ++g)
                if (gtf->people[g].pose.keypoints[j].confidence > 0.0) gs.push_back(g);
            if (pf)
                for (std::size_t p = 0; p < pf->people.size(); ++p)
                    if (pf->people[p].pose.keypoints[j].confidence > 0.0) ps.push_back(p);

            struct Pair {
                double dist;
                std::size_t g, p;
            };
            std::vector<Pair> pairs;
            for (std::size_t g : gs)
                for (std::size_t p : ps) {
                    const auto& a = gtf->people[g].pose.keypoints[j];
                    const auto& b = pf->people[p].pose.keypoints[j];
                    const double d = std::hypot(a.x - b.x, a.y - b.y);
                    if (d <= pckh_threshold * head_size[g]) pairs.push_back({d, g, p});
                }
            std::stable_sort(pairs.begin(), pairs.end(),
                             [](const Pair& a, const Pair& b) { return a.dist < b.dist; });

            auto& jm = report.per_joint[j];
            std::set<std::size_t> used_g, used_p;
            for (const auto& pr : pairs) {
                if (used_g.count(pr.g) || used_p.count(pr.p)) continue;
                used_g.insert(pr.g);
                used_p.insert(pr.p);
                ++jm.matches;
                jm.distance_sum += pr.dist;
                const auto gid = gtf->people[pr.g].track_id;
                const auto pid = pf->people[pr.p].track_id;
                auto it = last[j].find(gid);
                if (it != last[j].end() && it->second != pid) ++jm.id_switches;
                last[j][gid] = pid;
            }
            jm.gt += gs.size();
            jm.misses += gs.size() - used_g.size();
            jm.false_positives += ps.size() - used_p.size();
        }
    }

    double sum_mota = 0.0, sum_motp = 0.0, sum_p = 0.0, sum_r = 0.0;
    std::size_t n_joints = 0, n_motp = 0;
    for (auto& jm : report.per_joint) {
        report.id_switches += jm.id_switches;
        if (jm.gt == 0) continue;
        const double gt = static_cast<double>(jm.gt);
        jm.mota = 1.0 - static_cast<double>(jm.misses + jm.false_positives + jm.id_switches) / gt;
        jm.recall = static_cast<double>(jm.matches) / gt;
        const std::size_t predicted = jm.matches + jm.false_positives;
        jm.precision = predicted ? static_cast<double>(jm.matches) / static_cast<double>(predicted) : 0.0;
        jm.motp = jm.matches ? jm.distance_sum / static_cast<double>(jm.matches) : 0.0;
        sum_mota += jm.mota;
        sum_p += jm.precision;
        sum_r += jm.recall;
        if (jm.matches) {
            sum_motp += jm.motp;
            ++n_motp;
        }
        ++n_joints;
    }
    if (n_joints) {
        report.mota = sum_mota / static_cast<double>(n_joints);
        report.precision = sum_p / static_cast<double>(n_joints);
        report.recall = sum_r / static_cast<double>(n_joints);
    }
    if (n_motp) report.motp = sum_motp / static_cast<double>(n_motp);
    return report;
}

} // namespace posepipe::eval
