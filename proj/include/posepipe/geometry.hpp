#pragma once

/// \file geometry.hpp
/// \brief Data model shared by every module: skeleton layouts, keypoints,
/// poses, boxes and heatmaps.
///
/// Coordinate convention: heatmap grid index i is the centre of pixel i and
/// sits at continuous coordinate i. Boxes are continuous
/// [x_min, x_max] x [y_min, y_max] intervals and may leave the image.

#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace posepipe {

struct PartRange {
    std::string name;
    std::size_t begin = 0; ///< first joint index
    std::size_t end = 0;   ///< one past the last joint index

    std::size_t size() const { return end - begin; }
    bool contains(std::size_t joint) const { return joint >= begin && joint < end; }
};

/// Joint layout of a skeleton. Immutable once constructed; shared between
/// poses through LayoutPtr.
class SkeletonLayout {
public:
    /// Validates that part ranges tile [0, joint_count) without overlap and
    /// that every OKS constant is positive. Throws InvalidArgument.
    SkeletonLayout(std::string name, std::vector<std::string> joint_names,
                   std::vector<PartRange> parts, std::vector<double> oks_k,
                   std::optional<std::pair<std::size_t, std::size_t>> head_segment = std::nullopt);

    const std::string& name() const { return name_; }
    std::size_t joint_count() const { return joint_names_.size(); }
    const std::vector<std::string>& joint_names() const { return joint_names_; }
    const std::vector<PartRange>& parts() const { return parts_; }
    /// Throws NotFound for an unknown part name.
    const PartRange& part(std::string_view part_name) const;
    const std::vector<double>& oks_k() const { return oks_k_; }
    /// (head, neck) joint indices used for PCKh normalisation, if the layout has them.
    const std::optional<std::pair<std::size_t, std::size_t>>& head_segment() const {
        return head_segment_;
    }

    /// Built-in layouts: "halpe136" and "coco17". Throws NotFound otherwise.
    static std::shared_ptr<const SkeletonLayout> builtin(std::string_view layout_name);

private:
    std::string name_;
    std::vector<std::string> joint_names_;
    std::vector<PartRange> parts_;
    std::vector<double> oks_k_;
    std::optional<std::pair<std::size_t, std::size_t>> head_segment_;
};

using LayoutPtr = std::shared_ptr<const SkeletonLayout>;

struct Keypoint {
    double x = 0.0;
    double y = 0.0;
    double confidence = 0.0; ///< in [0, 1]; 0 marks an unlabeled ground-truth joint
};

struct DetectionBox {
    double x_min = 0.0;
    double y_min = 0.0;
    double x_max = 0.0;
    double y_max = 0.0;
    double score = 1.0;
    int category = 0; ///< person = 0

    double width() const { return x_max - x_min; }
    double height() const { return y_max - y_min; }
    double area() const { return width() * height(); }
    double center_x() const { return 0.5 * (x_min + x_max); }
    double center_y() const { return 0.5 * (y_min + y_max); }
    bool valid() const;
};

struct Pose {
    LayoutPtr layout;
    std::vector<Keypoint> keypoints;
    double score = 0.0;
    DetectionBox box;

    std::size_t joint_count() const { return keypoints.size(); }
};

/// Throws InvalidArgument unless the pose has a layout, one keypoint per
/// joint, finite coordinates and confidences in [0, 1].
void check_pose(const Pose& pose);

/// Builds a pose with every keypoint at `keypoints` and checks it.
Pose make_pose(LayoutPtr layout, std::vector<Keypoint> keypoints, double score,
               const DetectionBox& box);

enum class HeatmapKind { logits = 0, confidence = 1, probability = 2 };

/// J x H x W grid stored row-major per joint.
class Heatmap {
public:
    Heatmap() = default;
    Heatmap(std::size_t joints, std::size_t height, std::size_t width, HeatmapKind kind);
    Heatmap(std::size_t joints, std::size_t height, std::size_t width, HeatmapKind kind,
            std::vector<double> values);

    std::size_t joints() const { return joints_; }
    std::size_t height() const { return height_; }
    std::size_t width() const { return width_; }
    std::size_t plane_size() const { return height_ * width_; }
    HeatmapKind kind() const { return kind_; }

    double at(std::size_t j, std::size_t y, std::size_t x) const {
        return values_[(j * height_ + y) * width_ + x];
    }
    double& at(std::size_t j, std::size_t y, std::size_t x) {
        return values_[(j * height_ + y) * width_ + x];
    }
    std::span<const double> joint(std::size_t j) const {
        return {values_.data() + j * plane_size(), plane_size()};
    }
    std::span<double> joint(std::size_t j) {
        return {values_.data() + j * plane_size(), plane_size()};
    }
    const std::vector<double>& values() const { return values_; }

    /// Checks the invariant attached to the kind (confidence in (0,1),
    /// probability non-negative and summing to 1 within 1e-6 per joint).
    void validate() const;

private:
    std::size_t joints_ = 0;
    std::size_t height_ = 0;
    std::size_t width_ = 0;
    HeatmapKind kind_ = HeatmapKind::logits;
    std::vector<double> values_;
};

/// Heatmap-to-image affine map: image = heatmap * scale + offset, per axis.
struct CropTransform {
    double scale_x = 1.0;
    double scale_y = 1.0;
    double offset_x = 0.0;
    double offset_y = 0.0;

    double to_image_x(double hx) const { return hx * scale_x + offset_x; }
    double to_image_y(double hy) const { return hy * scale_y + offset_y; }

    /// Maps a width x height heatmap onto `box`; heatmap cell i covers the
    /// i-th of `width` equal slices of the box and its centre maps to the
    /// slice centre.
    static CropTransform for_box(const DetectionBox& box, std::size_t width, std::size_t height);
};

double iou(const DetectionBox& a, const DetectionBox& b);

/// Box centred on `k` whose sides are `fraction` of the reference box sides.
/// Throws InvalidArgument unless fraction is in (0, 1].
DetectionBox crop_box_around(const Keypoint& k, const DetectionBox& reference, double fraction);

inline bool box_contains(const DetectionBox& box, double x, double y) {
    return x >= box.x_min && x <= box.x_max && y >= box.y_min && y <= box.y_max;
}

} // namespace posepipe
