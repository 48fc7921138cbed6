#include "posepipe/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "posepipe/error.hpp"

namespace posepipe::io {

namespace {

template <typename T>
T get(const Json& j, const char* key, const std::string& where) {
    if (!j.is_object() || !j.contains(key)) throw FormatError(where + ": missing \"" + key + "\"");
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(where + ": bad \"" + key + "\": " + e.what());
    }
}

Json parse(const std::string& text, const std::string& where) {
    try {
        return Json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(where + ": " + e.what());
    }
}

double clamp01(double v) { return std::isfinite(v) ? std::clamp(v, 0.0, 1.0) : 0.0; }

Pose pose_from_flat(const LayoutPtr& layout, const std::vector<double>& flat, bool visibility_flags,
                    const std::string& where) {
    if (flat.size() != 3 * layout->joint_count())
        throw FormatError(where + ": expected " + std::to_string(3 * layout->joint_count()) +
                          " keypoint values for layout " + layout->name() + ", got " + std::to_string(flat.size()));
    std::vector<Keypoint> kps(layout->joint_count());
    for (std::size_t i = 0; i < kps.size(); ++i) {
        kps[i].x = flat[3 * i];
        kps[i].y = flat[3 * i + 1];
        const double c = flat[3 * i + 2];
        kps[i].confidence = visibility_flags ? (c > 0.0 ? 1.0 : 0.0) : clamp01(c);
    }
    Pose p;
    p.layout = layout;
    p.keypoints = std::move(kps);
    return p;
}

DetectionBox tight_box(const Pose& p) {
    DetectionBox b{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(),
                   -std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity(), p.score, 0};
    for (const auto& k : p.keypoints) {
        if (k.confidence <= 0.0) continue;
        b.x_min = std::min(b.x_min, k.x);
        b.y_min = std::min(b.y_min, k.y);
        b.x_max = std::max(b.x_max, k.x);
        b.y_max = std::max(b.y_max, k.y);
    }
    if (!std::isfinite(b.x_min)) return {0.0, 0.0, 1.0, 1.0, p.score, 0};
    if (b.x_max - b.x_min < 1.0) b.x_max = b.x_min + 1.0;
    if (b.y_max - b.y_min < 1.0) b.y_max = b.y_min + 1.0;
    return b;
}

DetectionBox box_from_xywh(const std::vector<double>& v, const std::string& where) {
    if (v.size() != 4) throw FormatError(where + ": bbox needs 4 values");
    return {v[0], v[1], v[0] + v[2], v[1] + v[3], 1.0, 0};
}

void put_u32(std::ostream& os, std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

} // namespace

std::string read_text(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out << text;
    if (!out) throw IoError("write failed for " + path);
}

Json read_json(const std::string& path) { return parse(read_text(path), path); }

LayoutPtr load_layout(const std::string& name_or_path) {
    if (name_or_path == "halpe136" || name_or_path == "coco17") return SkeletonLayout::builtin(name_or_path);
    const Json j = read_json(name_or_path);
    std::vector<PartRange> parts;
    for (const auto& p : get<Json>(j, "parts", name_or_path))
        parts.push_back({get<std::string>(p, "name", name_or_path), get<std::size_t>(p, "begin", name_or_path),
                         get<std::size_t>(p, "end", name_or_path)});
    std::optional<std::pair<std::size_t, std::size_t>> head;
    if (j.contains("head_segment")) {
        const auto hs = get<std::vector<std::size_t>>(j, "head_segment", name_or_path);
        if (hs.size() != 2) throw FormatError(name_or_path + ": head_segment needs two joints");
        head = std::make_pair(hs[0], hs[1]);
    }
    return std::make_shared<const SkeletonLayout>(get<std::string>(j, "name", name_or_path),
                                                  get<std::vector<std::string>>(j, "joints", name_or_path),
                                                  std::move(parts), get<std::vector<double>>(j, "oks_k", name_or_path),
                                                  head);
}

std::vector<Heatmap> read_hmap(const std::string& path) {
    const std::string data = read_text(path);
    const auto* p = reinterpret_cast<const unsigned char*>(data.data());
    const std::size_t n = data.size();
    std::vector<Heatmap> out;
    std::size_t pos = 0;
    while (pos < n) {
        const std::string where = path + " record " + std::to_string(out.size());
        if (n - pos < 17) throw FormatError(where + ": truncated header");
        if (std::memcmp(p + pos, "HMAP", 4) != 0) throw FormatError(where + ": bad magic");
        const std::size_t j = get_u32(p + pos + 4), h = get_u32(p + pos + 8), w = get_u32(p + pos + 12);
        const unsigned kind = p[pos + 16];
        if (kind > 2) throw FormatError(where + ": unknown heatmap kind " + std::to_string(kind));
        pos += 17;
        const std::size_t count = j * h * w;
        if (count == 0) throw FormatError(where + ": empty heatmap");
        if ((n - pos) / 4 < count) throw FormatError(where + ": truncated values");
        std::vector<double> values(count);
        for (std::size_t i = 0; i < count; ++i) {
            const std::uint32_t bits = get_u32(p + pos + 4 * i);
            float f;
            std::memcpy(&f, &bits, 4);
            values[i] = f;
        }
        pos += 4 * count;
        out.emplace_back(j, h, w, static_cast<HeatmapKind>(kind), std::move(values));
    }
    return out;
}

void write_hmap(const std::string& path, const std::vector<Heatmap>& heatmaps) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    for (const auto& hm : heatmaps) {
        out.write("HMAP", 4);
        put_u32(out, static_cast<std::uint32_t>(hm.joints()));
        put_u32(out, static_cast<std::uint32_t>(hm.height()));
        put_u32(out, static_cast<std::uint32_t>(hm.width()));
        out.put(static_cast<char>(hm.kind()));
        for (double v : hm.values()) {
            const float f = static_cast<float>(v);
            std::uint32_t bits;
            std::memcpy(&bits, &f, 4);
            put_u32(out, bits);
        }
    }
    if (!out) throw IoError("write failed for " + path);
}

Json box_to_json(const DetectionBox& box) { return Json::array({box.x_min, box.y_min, box.x_max, box.y_max}); }

DetectionBox box_from_json(const Json& j) {
    if (!j.is_array() || j.size() != 4) throw FormatError("box needs [x1, y1, x2, y2]");
    DetectionBox b;
    try {
        b.x_min = j[0].get<double>();
        b.y_min = j[1].get<double>();
        b.x_max = j[2].get<double>();
        b.y_max = j[3].get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("box: ") + e.what());
    }
    return b;
}

Json keypoints_to_json(const Pose& pose) {
    Json a = Json::array();
    for (const auto& k : pose.keypoints) {
        a.push_back(k.x);
        a.push_back(k.y);
        a.push_back(k.confidence);
    }
    return a;
}

std::map<std::int64_t, std::vector<pipeline::DetectionRecord>> read_detections(const std::string& path) {
    std::istringstream in(read_text(path));
    std::map<std::int64_t, std::vector<pipeline::DetectionRecord>> frames;
    std::string line;
    std::size_t line_no = 0, running = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const std::string where = path + ":" + std::to_string(line_no);
        const Json j = parse(line, where);
        const auto frame = get<std::int64_t>(j, "frame", where);
        if (frames.contains(frame)) throw FormatError(where + ": frame " + std::to_string(frame) + " repeated");
        auto& recs = frames[frame];
        for (const auto& d : get<Json>(j, "detections", where)) {
            pipeline::DetectionRecord r;
            r.box = box_from_json(get<Json>(d, "box", where));
            r.box.score = d.value("score", 1.0);
            r.box.category = d.value("category", 0);
            r.heatmap = d.contains("heatmap") ? get<std::size_t>(d, "heatmap", where) : running;
            ++running;
            if (d.contains("embedding")) r.embedding = get<std::vector<double>>(d, "embedding", where);
            if (d.contains("feature")) {
                const auto& f = d.at("feature");
                const auto shape = get<std::vector<std::size_t>>(f, "shape", where);
                if (shape.size() != 3) throw FormatError(where + ": feature shape needs [C, H, W]");
                track::FeatureMap m(shape[0], shape[1], shape[2]);
                m.values = get<std::vector<double>>(f, "values", where);
                if (m.values.size() != m.size()) throw FormatError(where + ": feature value count mismatch");
                r.feature = std::move(m);
            }
            recs.push_back(std::move(r));
        }
    }
    return frames;
}

void write_detections(const std::string& path, const std::vector<FrameRecords>& frames) {
    std::string text;
    for (const auto& f : frames) {
        Json dets = Json::array();
        for (const auto& r : f.detections) {
            Json d = {{"box", box_to_json(r.box)}, {"score", r.box.score}, {"category", r.box.category}};
            if (r.heatmap) d["heatmap"] = *r.heatmap;
            if (r.embedding) d["embedding"] = *r.embedding;
            if (r.feature)
                d["feature"] = {{"shape", {r.feature->channels, r.feature->height, r.feature->width}},
                                {"values", r.feature->values}};
            dets.push_back(std::move(d));
        }
        text += Json{{"frame", f.frame}, {"detections", dets}}.dump() + "\n";
    }
    write_text(path, text);
}

std::vector<eval::ImageGroundTruth> read_coco_ground_truth(const std::string& path, const LayoutPtr& layout) {
    const Json j = read_json(path);
    std::map<std::int64_t, eval::ImageGroundTruth> images;
    if (j.contains("images"))
        for (const auto& im : j.at("images")) {
            const auto id = get<std::int64_t>(im, "id", path);
            images[id].image_id = id;
        }
    for (const auto& a : get<Json>(j, "annotations", path)) {
        if (a.value("iscrowd", 0) != 0) continue;
        const auto id = get<std::int64_t>(a, "image_id", path);
        eval::GtInstance g;
        g.pose = pose_from_flat(layout, get<std::vector<double>>(a, "keypoints", path), true, path);
        g.pose.box = a.contains("bbox") ? box_from_xywh(get<std::vector<double>>(a, "bbox", path), path)
                                        : tight_box(g.pose);
        g.area = a.value("area", g.pose.box.area());
        images[id].image_id = id;
        images[id].instances.push_back(std::move(g));
    }
    std::vector<eval::ImageGroundTruth> out;
    for (auto& [_, im] : images) out.push_back(std::move(im));
    return out;
}

std::vector<eval::ImagePredictions> read_coco_results(const std::string& path, const LayoutPtr& layout) {
    const Json j = read_json(path);
    if (!j.is_array()) throw FormatError(path + ": results must be a JSON array");
    std::map<std::int64_t, eval::ImagePredictions> images;
    for (const auto& r : j) {
        const auto id = get<std::int64_t>(r, "image_id", path);
        Pose p = pose_from_flat(layout, get<std::vector<double>>(r, "keypoints", path), false, path);
        p.score = get<double>(r, "score", path);
        p.box = r.contains("bbox") ? box_from_xywh(get<std::vector<double>>(r, "bbox", path), path) : tight_box(p);
        p.box.score = p.score;
        images[id].image_id = id;
        images[id].poses.push_back(std::move(p));
    }
    std::vector<eval::ImagePredictions> out;
    for (auto& [_, im] : images) out.push_back(std::move(im));
    return out;
}

Json coco_results_json(const std::vector<eval::ImagePredictions>& preds) {
    Json a = Json::array();
    for (const auto& im : preds)
        for (const auto& p : im.poses)
            a.push_back({{"image_id", im.image_id},
                         {"category_id", 1},
                         {"keypoints", keypoints_to_json(p)},
                         {"bbox", {p.box.x_min, p.box.y_min, p.box.width(), p.box.height()}},
                         {"score", p.score}});
    return a;
}

std::vector<eval::TrackFrame> read_track_jsonl(const std::string& path, const LayoutPtr& layout) {
    std::istringstream in(read_text(path));
    std::map<std::int64_t, eval::TrackFrame> frames;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const std::string where = path + ":" + std::to_string(line_no);
        const Json j = parse(line, where);
        const auto frame = get<std::int64_t>(j, "frame", where);
        Pose p = pose_from_flat(layout, get<std::vector<double>>(j, "keypoints", where), false, where);
        p.score = j.value("score", 1.0);
        p.box = j.contains("box") ? box_from_json(j.at("box")) : tight_box(p);
        frames[frame].frame = frame;
        frames[frame].people.push_back({get<std::int64_t>(j, "track_id", where), std::move(p)});
    }
    std::vector<eval::TrackFrame> out;
    for (auto& [_, f] : frames) out.push_back(std::move(f));
    return out;
}

std::string track_line(std::int64_t frame, std::int64_t track_id, const DetectionBox& box, const Pose& pose) {
    return Json{{"frame", frame},
                {"track_id", track_id},
                {"box", box_to_json(box)},
                {"keypoints", keypoints_to_json(pose)},
                {"score", pose.score}}
        .dump();
}

std::string mot_csv_line(std::int64_t frame, std::int64_t track_id, const DetectionBox& box) {
    std::ostringstream ss;
    ss.precision(6);
    ss << std::fixed << frame + 1 << ',' << track_id << ',' << box.x_min << ',' << box.y_min << ','
       << box.width() << ',' << box.height() << ',' << box.score << ",-1,-1,-1";
    return ss.str();
}

Json openpose_frame(const std::vector<Pose>& poses, const std::vector<std::int64_t>& person_ids) {
    Json people = Json::array();
    for (std::size_t i = 0; i < poses.size(); ++i) {
        const auto& p = poses[i];
        auto flat = [&](std::size_t begin, std::size_t end) {
            Json a = Json::array();
            for (std::size_t n = begin; n < end && n < p.keypoints.size(); ++n) {
                a.push_back(p.keypoints[n].x);
                a.push_back(p.keypoints[n].y);
                a.push_back(p.keypoints[n].confidence);
            }
            return a;
        };
        Json person = {{"person_id", {i < person_ids.size() ? person_ids[i] : -1}}};
        auto range = [&](const char* part, std::size_t& b, std::size_t& e) {
            b = e = 0;
            for (const auto& r : p.layout->parts())
                if (r.name == part) {
                    b = r.begin;
                    e = r.end;
                    return true;
                }
            return false;
        };
        std::size_t b = 0, e = 0;
        if (range("body", b, e)) {
            Json body = flat(b, e);
            std::size_t fb = 0, fe = 0;
            if (range("foot", fb, fe)) {
                Json foot = flat(fb, fe);
                body.insert(body.end(), foot.begin(), foot.end());
            }
            person["pose_keypoints_2d"] = body;
        } else {
            person["pose_keypoints_2d"] = flat(0, p.keypoints.size());
        }
        person["face_keypoints_2d"] = range("face", b, e) ? flat(b, e) : Json::array();
        person["hand_left_keypoints_2d"] = range("left_hand", b, e) ? flat(b, e) : Json::array();
        person["hand_right_keypoints_2d"] = range("right_hand", b, e) ? flat(b, e) : Json::array();
        people.push_back(std::move(person));
    }
    return {{"version", 1.3}, {"people", people}};
}

nms::NmsParams read_nms_params(const std::string& path) {
    const Json j = read_json(path);
    nms::NmsParams p;
    p.sigma1 = j.value("sigma1", p.sigma1);
    p.sigma2 = j.value("sigma2", p.sigma2);
    p.lambda = j.value("lambda", p.lambda);
    p.eta = j.value("eta", p.eta);
    p.validate();
    return p;
}

Json nms_params_json(const nms::NmsParams& p) {
    return {{"sigma1", p.sigma1}, {"sigma2", p.sigma2}, {"lambda", p.lambda}, {"eta", p.eta}};
}

std::vector<pgpg::OffsetSample> read_offset_dataset(const std::string& path) {
    std::istringstream in(read_text(path));
    std::vector<pgpg::OffsetSample> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const std::string where = path + ":" + std::to_string(line_no);
        const Json s = parse(line, where);
        const DetectionBox gt = box_from_json(get<Json>(s, "gt", where));
        const DetectionBox det = box_from_json(get<Json>(s, "det", where));
        out.push_back(pgpg::compute_offsets(gt, det, get<std::string>(s, "part", where)));
    }
    return out;
}

namespace {

Json mixture_json(const pgpg::Mixture2& m) {
    Json comps = Json::array();
    for (const auto& c : m.components)
        comps.push_back({{"weight", c.weight},
                         {"mean", {c.mean(0), c.mean(1)}},
                         {"covariance", {c.covariance(0, 0), c.covariance(0, 1), c.covariance(1, 0), c.covariance(1, 1)}}});
    return comps;
}

pgpg::Mixture2 mixture_from_json(const Json& j) {
    pgpg::Mixture2 m;
    try {
        for (const auto& c : j) {
            pgpg::GaussianComponent g;
            g.weight = c.at("weight").get<double>();
            const auto mean = c.at("mean").get<std::vector<double>>();
            const auto cov = c.at("covariance").get<std::vector<double>>();
            if (mean.size() != 2 || cov.size() != 4) throw FormatError("mixture component has wrong sizes");
            g.mean << mean[0], mean[1];
            g.covariance << cov[0], cov[1], cov[2], cov[3];
            m.components.push_back(g);
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("mixture: ") + e.what());
    }
    if (m.components.empty()) throw FormatError("mixture has no components");
    return m;
}

} // namespace

Json offset_model_json(const pgpg::OffsetModel& model) {
    Json j = {{"part", model.part},
              {"components", model.components},
              {"x", mixture_json(model.x_model)},
              {"y", mixture_json(model.y_model)}};
    if (model.uniform_box) j["uniform_box"] = {{"lo", model.uniform_box->lo}, {"hi", model.uniform_box->hi}};
    return j;
}

pgpg::OffsetModel offset_model_from_json(const Json& j) {
    pgpg::OffsetModel m;
    m.part = get<std::string>(j, "part", "offset model");
    m.components = get<std::size_t>(j, "components", "offset model");
    m.x_model = mixture_from_json(get<Json>(j, "x", "offset model"));
    m.y_model = mixture_from_json(get<Json>(j, "y", "offset model"));
    if (j.contains("uniform_box")) {
        pgpg::UniformBox b;
        b.lo = get<std::array<double, 4>>(j.at("uniform_box"), "lo", "offset model");
        b.hi = get<std::array<double, 4>>(j.at("uniform_box"), "hi", "offset model");
        m.uniform_box = b;
    }
    return m;
}

} // namespace posepipe::io
