#include "posepipe/posenms.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <thread>

#include "posepipe/error.hpp"

namespace posepipe::nms {

void NmsParams::validate() const {
    if (!(sigma1 > 0.0)) throw InvalidArgument("sigma1 must be positive");
    if (!(sigma2 > 0.0)) throw InvalidArgument("sigma2 must be positive");
    if (!(lambda >= 0.0)) throw InvalidArgument("lambda must be non-negative");
    if (!std::isfinite(eta)) throw InvalidArgument("eta must be finite");
}

namespace {

void check_pair(const Pose& a, const Pose& b) {
    if (!a.layout || !b.layout || a.keypoints.size() != b.keypoints.size() ||
        a.layout->joint_count() != b.layout->joint_count() || a.layout->name() != b.layout->name())
        throw InvalidArgument("poses use different skeleton layouts");
    if (a.keypoints.size() != a.layout->joint_count())
        throw InvalidArgument("pose keypoint count does not match its layout");
}

} // namespace

double k_sim(const Pose& a, const Pose& b, double sigma1) {
    check_pair(a, b);
    if (!(sigma1 > 0.0)) throw InvalidArgument("sigma1 must be positive");
    double sum = 0.0;
    for (std::size_t n = 0; n < a.keypoints.size(); ++n) {
        const auto& ka = a.keypoints[n];
        const auto& kb = b.keypoints[n];
        const auto window = crop_box_around(ka, a.box, kWindowFraction);
        if (!box_contains(window, kb.x, kb.y)) continue;
        sum += std::tanh(ka.confidence / sigma1) * std::tanh(kb.confidence / sigma1);
    }
    return sum;
}

double h_sim(const Pose& a, const Pose& b, double sigma2) {
    check_pair(a, b);
    if (!(sigma2 > 0.0)) throw InvalidArgument("sigma2 must be positive");
    double sum = 0.0;
    for (std::size_t n = 0; n < a.keypoints.size(); ++n) {
        const double dx = a.keypoints[n].x - b.keypoints[n].x;
        const double dy = a.keypoints[n].y - b.keypoints[n].y;
        sum += std::exp(-(dx * dx + dy * dy) / sigma2);
    }
    return sum;
}

double pose_distance(const Pose& candidate, const Pose& reference, const NmsParams& params) {
    params.validate();
    return k_sim(candidate, reference, params.sigma1) +
           params.lambda * h_sim(candidate, reference, params.sigma2);
}

std::vector<std::size_t> pose_nms_indices(std::span<const Pose> poses, const NmsParams& params) {
    params.validate();
    std::vector<std::size_t> remaining(poses.size());
    std::iota(remaining.begin(), remaining.end(), 0);
    // Score descending, index ascending: the front is always the next reference.
    std::stable_sort(remaining.begin(), remaining.end(),
                     [&](std::size_t a, std::size_t b) { return poses[a].score > poses[b].score; });

    std::vector<std::size_t> kept;
    while (!remaining.empty()) {
        const std::size_t ref = remaining.front();
        kept.push_back(ref);
        std::vector<std::size_t> next;
        next.reserve(remaining.size());
        for (std::size_t i = 1; i < remaining.size(); ++i) {
            const std::size_t c = remaining[i];
            if (pose_distance(poses[c], poses[ref], params) < params.eta) next.push_back(c);
        }
        remaining.swap(next);
    }
    return kept;
}

std::vector<Pose> pose_nms(std::span<const Pose> poses, const NmsParams& params) {
    std::vector<Pose> out;
    for (std::size_t i : pose_nms_indices(poses, params)) out.push_back(poses[i]);
    return out;
}

ParamGrid ParamGrid::defaults(std::size_t joint_count) {
    ParamGrid g;
    for (int i = 0; i < 10; ++i) {
        const double v = std::pow(10.0, -2.0 + 3.0 * i / 9.0);
        g.sigma1.push_back(v);
        g.sigma2.push_back(v);
    }
    for (int i = 0; i <= 10; ++i) g.lambda.push_back(0.5 * i);
    const double m = static_cast<double>(joint_count);
    for (int i = 0; i < 20; ++i) g.eta.push_back(0.1 * m + (2.0 * m - 0.1 * m) * i / 19.0);
    return g;
}

double validation_map(std::span<const ValidationImage> validation, const NmsParams& params) {
    std::vector<eval::ImagePredictions> preds;
    std::vector<eval::ImageGroundTruth> gts;
    preds.reserve(validation.size());
    gts.reserve(validation.size());
    for (std::size_t i = 0; i < validation.size(); ++i) {
        const auto id = static_cast<std::int64_t>(i);
        preds.push_back({id, pose_nms(validation[i].candidates, params)});
        gts.push_back({id, validation[i].ground_truth});
    }
    return eval::map_eval(preds, gts).ap;
}

namespace {

struct Cell {
    NmsParams params;
    double map = 0.0;
};

// Evaluates every cell; workers take a strided share of the indices.
void evaluate_cells(std::span<const ValidationImage> validation, std::vector<Cell>& cells,
                    unsigned threads) {
    const unsigned n_workers =
        std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(cells.size())));
    auto work = [&](unsigned w) {
        for (std::size_t i = w; i < cells.size(); i += n_workers)
            cells[i].map = validation_map(validation, cells[i].params);
    };
    if (n_workers == 1) {
        work(0);
        return;
    }
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < n_workers; ++w) pool.emplace_back(work, w);
    for (auto& t : pool) t.join();
}

} // namespace

OptimizeResult optimize_params(std::span<const ValidationImage> validation, const NmsParams& init,
                               const ParamGrid& grid, std::size_t max_iterations, unsigned threads) {
    if (validation.empty()) throw InvalidArgument("empty validation set");
    if (grid.sigma1.empty() || grid.sigma2.empty() || grid.lambda.empty() || grid.eta.empty())
        throw InvalidArgument("every parameter grid needs at least one value");
    init.validate();
    if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());

    OptimizeResult res;
    res.params = init;
    res.map_initial = res.map_best = validation_map(validation, init);

    for (std::size_t iter = 0; iter < max_iterations; ++iter) {
        ++res.iterations;
        bool improved = false;
        for (int phase = 0; phase < 2; ++phase) {
            std::vector<Cell> cells;
            const auto& ga = phase == 0 ? grid.sigma1 : grid.lambda;
            const auto& gb = phase == 0 ? grid.sigma2 : grid.eta;
            for (double a : ga)
                for (double b : gb) {
                    NmsParams p = res.params;
                    if (phase == 0) {
                        p.sigma1 = a;
                        p.sigma2 = b;
                    } else {
                        p.lambda = a;
                        p.eta = b;
                    }
                    cells.push_back({p, 0.0});
                }
            evaluate_cells(validation, cells, threads);
            for (const auto& c : cells)
                if (c.map > res.map_best) {
                    res.map_best = c.map;
                    res.params = c.params;
                    improved = true;
                }
        }
        if (!improved) break;
    }
    return res;
}

} // namespace posepipe::nms
