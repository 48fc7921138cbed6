#include "posepipe/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "posepipe/error.hpp"

namespace posepipe {

SkeletonLayout::SkeletonLayout(std::string name, std::vector<std::string> joint_names,
                               std::vector<PartRange> parts, std::vector<double> oks_k,
                               std::optional<std::pair<std::size_t, std::size_t>> head_segment)
    : name_(std::move(name)),
      joint_names_(std::move(joint_names)),
      parts_(std::move(parts)),
      oks_k_(std::move(oks_k)),
      head_segment_(head_segment) {
    const std::size_t n = joint_names_.size();
    if (n == 0) throw InvalidArgument("layout '" + name_ + "' has no joints");
    if (oks_k_.size() != n)
        throw InvalidArgument("layout '" + name_ + "': oks_k length does not match joint count");
    for (double k : oks_k_)
        if (!(k > 0.0) || !std::isfinite(k))
            throw InvalidArgument("layout '" + name_ + "': oks_k must be positive");

    std::vector<int> cover(n, 0);
    for (const auto& p : parts_) {
        if (p.begin >= p.end || p.end > n)
            throw InvalidArgument("layout '" + name_ + "': bad range for part '" + p.name + "'");
        for (std::size_t j = p.begin; j < p.end; ++j) ++cover[j];
    }
    if (std::any_of(cover.begin(), cover.end(), [](int c) { return c != 1; }))
        throw InvalidArgument("layout '" + name_ + "': part ranges must tile every joint exactly once");

    if (head_segment_) {
        auto [h, nk] = *head_segment_;
        if (h >= n || nk >= n || h == nk)
            throw InvalidArgument("layout '" + name_ + "': bad head segment");
    }
}

const PartRange& SkeletonLayout::part(std::string_view part_name) const {
    for (const auto& p : parts_)
        if (p.name == part_name) return p;
    throw NotFound("layout '" + name_ + "' has no part '" + std::string(part_name) + "'");
}

namespace {

// COCO per-keypoint constants k = 2 * sigma.
constexpr double kCocoK[17] = {0.052, 0.050, 0.050, 0.070, 0.070, 0.158, 0.158, 0.144, 0.144,
                               0.124, 0.124, 0.214, 0.214, 0.174, 0.174, 0.178, 0.178};

// Constant for every joint COCO does not define.
constexpr double kWholeBodyK = 0.015;

std::vector<std::string> coco_body_names() {
    return {"nose",        "left_eye",     "right_eye",      "left_ear",   "right_ear",
            "left_shoulder", "right_shoulder", "left_elbow", "right_elbow", "left_wrist",
            "right_wrist", "left_hip",     "right_hip",      "left_knee",  "right_knee",
            "left_ankle",  "right_ankle"};
}

std::shared_ptr<const SkeletonLayout> make_coco17() {
    return std::make_shared<const SkeletonLayout>(
        "coco17", coco_body_names(), std::vector<PartRange>{{"body", 0, 17}},
        std::vector<double>(std::begin(kCocoK), std::end(kCocoK)));
}

std::shared_ptr<const SkeletonLayout> make_halpe136() {
    auto names = coco_body_names();
    for (const char* n : {"head", "neck", "hip", "left_big_toe", "right_big_toe", "left_small_toe",
                          "right_small_toe", "left_heel", "right_heel"})
        names.emplace_back(n);
    for (int i = 0; i < 68; ++i) names.push_back("face_" + std::to_string(i));
    for (int i = 0; i < 21; ++i) names.push_back("left_hand_" + std::to_string(i));
    for (int i = 0; i < 21; ++i) names.push_back("right_hand_" + std::to_string(i));

    std::vector<double> k(136, kWholeBodyK);
    std::copy(std::begin(kCocoK), std::end(kCocoK), k.begin());

    std::vector<PartRange> parts{{"body", 0, 20},
                                 {"foot", 20, 26},
                                 {"face", 26, 94},
                                 {"left_hand", 94, 115},
                                 {"right_hand", 115, 136}};
    return std::make_shared<const SkeletonLayout>("halpe136", std::move(names), std::move(parts),
                                                  std::move(k), std::make_pair<std::size_t, std::size_t>(17, 18));
}

} // namespace

std::shared_ptr<const SkeletonLayout> SkeletonLayout::builtin(std::string_view layout_name) {
    static const auto halpe = make_halpe136();
    static const auto coco = make_coco17();
    if (layout_name == "halpe136") return halpe;
    if (layout_name == "coco17") return coco;
    throw NotFound("unknown built-in layout '" + std::string(layout_name) + "'");
}

bool DetectionBox::valid() const {
    return std::isfinite(x_min) && std::isfinite(y_min) && std::isfinite(x_max) &&
           std::isfinite(y_max) && x_min < x_max && y_min < y_max && score >= 0.0 && score <= 1.0;
}

void check_pose(const Pose& pose) {
    if (!pose.layout) throw InvalidArgument("pose has no layout");
    if (pose.keypoints.size() != pose.layout->joint_count())
        throw InvalidArgument("pose has " + std::to_string(pose.keypoints.size()) +
                              " keypoints, layout '" + pose.layout->name() + "' expects " +
                              std::to_string(pose.layout->joint_count()));
    for (const auto& k : pose.keypoints) {
        if (!std::isfinite(k.x) || !std::isfinite(k.y))
            throw InvalidArgument("pose keypoint has non-finite coordinates");
        if (!(k.confidence >= 0.0 && k.confidence <= 1.0))
            throw InvalidArgument("pose keypoint confidence outside [0, 1]");
    }
}

Pose make_pose(LayoutPtr layout, std::vector<Keypoint> keypoints, double score,
               const DetectionBox& box) {
    Pose p{std::move(layout), std::move(keypoints), score, box};
    check_pose(p);
    return p;
}

Heatmap::Heatmap(std::size_t joints, std::size_t height, std::size_t width, HeatmapKind kind)
    : Heatmap(joints, height, width, kind, std::vector<double>(joints * height * width, 0.0)) {}

Heatmap::Heatmap(std::size_t joints, std::size_t height, std::size_t width, HeatmapKind kind,
                 std::vector<double> values)
    : joints_(joints), height_(height), width_(width), kind_(kind), values_(std::move(values)) {
    if (joints == 0 || height == 0 || width == 0)
        throw InvalidArgument("heatmap dimensions must be positive");
    if (values_.size() != joints * height * width)
        throw InvalidArgument("heatmap value count does not match J*H*W");
}

void Heatmap::validate() const {
    switch (kind_) {
    case HeatmapKind::logits:
        for (double v : values_)
            if (std::isnan(v) || v == std::numeric_limits<double>::infinity())
                throw InvalidArgument("logit heatmap contains NaN or +inf");
        break;
    case HeatmapKind::confidence:
        for (double v : values_)
            if (!(v > 0.0 && v < 1.0)) throw InvalidArgument("confidence heatmap value outside (0,1)");
        break;
    case HeatmapKind::probability:
        for (std::size_t j = 0; j < joints_; ++j) {
            auto plane = joint(j);
            double sum = 0.0;
            for (double v : plane) {
                if (!(v >= 0.0)) throw InvalidArgument("probability heatmap has a negative value");
                sum += v;
            }
            if (std::abs(sum - 1.0) > 1e-6)
                throw InvalidArgument("probability heatmap joint does not sum to 1");
        }
        break;
    }
}

CropTransform CropTransform::for_box(const DetectionBox& box, std::size_t width, std::size_t height) {
    if (width == 0 || height == 0) throw InvalidArgument("crop grid must be non-empty");
    CropTransform t;
    t.scale_x = box.width() / static_cast<double>(width);
    t.scale_y = box.height() / static_cast<double>(height);
    t.offset_x = box.x_min + 0.5 * t.scale_x;
    t.offset_y = box.y_min + 0.5 * t.scale_y;
    return t;
}

double iou(const DetectionBox& a, const DetectionBox& b) {
    const double iw = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
    const double ih = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
    if (iw <= 0.0 || ih <= 0.0) return 0.0;
    const double inter = iw * ih;
    const double uni = a.area() + b.area() - inter;
    if (uni <= 0.0) return 0.0;
    return std::clamp(inter / uni, 0.0, 1.0);
}

DetectionBox crop_box_around(const Keypoint& k, const DetectionBox& reference, double fraction) {
    if (!(fraction > 0.0 && fraction <= 1.0))
        throw InvalidArgument("crop fraction must be in (0, 1]");
    const double hw = 0.5 * fraction * reference.width();
    const double hh = 0.5 * fraction * reference.height();
    DetectionBox out;
    out.x_min = k.x - hw;
    out.x_max = k.x + hw;
    out.y_min = k.y - hh;
    out.y_max = k.y + hh;
    out.score = reference.score;
    out.category = reference.category;
    return out;
}

} // namespace posepipe
