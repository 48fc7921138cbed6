#include "posepipe/app.hpp"

#include <algorithm>
#include <filesystem>
#include <map>
#include <numeric>
#include <random>
#include <thread>

#include "posepipe/decode.hpp"
#include "posepipe/error.hpp"
#include "posepipe/io.hpp"
#include "posepipe/pipeline.hpp"
#include "posepipe/synth.hpp"

namespace posepipe::app {

namespace {

Json latency_json(const pipeline::RunStats& stats) {
    Json j = Json::object();
    for (std::size_t i = 0; i < pipeline::kStageCount; ++i) {
        const auto& h = stats.stage_latency[i];
        j[pipeline::stage_name(static_cast<pipeline::StageName>(i))] = {
            {"samples", h.samples}, {"mean_ms", h.mean_seconds() * 1e3}, {"max_ms", h.max_seconds * 1e3}};
    }
    return j;
}

// Attention from the decoded pose, laid over the feature grid of the box.
track::FeatureMap attention_for(const Pose& pose, const track::FeatureMap& feature) {
    Pose grid = pose;
    const double sx = static_cast<double>(feature.width) / pose.box.width();
    const double sy = static_cast<double>(feature.height) / pose.box.height();
    for (auto& k : grid.keypoints) {
        k.x = (k.x - pose.box.x_min) * sx - 0.5;
        k.y = (k.y - pose.box.y_min) * sy - 0.5;
    }
    return synth::attention_from_pose(grid, feature.height, feature.width, 1.0);
}

} // namespace

Json run(const RunOptions& options) {
    const auto layout = io::load_layout(options.layout);
    const pipeline::FileDetector detector(io::read_detections(options.detections));
    const pipeline::FilePoseBackend backend(io::read_hmap(options.heatmaps));
    const nms::NmsParams params = options.nms_params ? io::read_nms_params(*options.nms_params) : nms::NmsParams{};
    if (options.queue_capacity == 0) throw InvalidArgument("queue capacity must be at least 1");

    track::Tracker tracker;
    std::map<std::size_t, track::Embedder> embedders;

    auto load = [&](pipeline::FrameBundle& b) { b.records = detector.records(b.frame); };
    auto detect = [&](pipeline::FrameBundle& b) {
        for (std::size_t i : detector.detect(b.frame)) {
            b.detections.push_back(b.records[i].box);
            b.record_index.push_back(i);
        }
    };
    auto transform = [&](pipeline::FrameBundle& b) {
        for (std::size_t i = 0; i < b.detections.size(); ++i) {
            const auto& hm = backend.heatmap(*b.records[b.record_index[i]].heatmap);
            b.crops.push_back(CropTransform::for_box(b.detections[i], hm.width(), hm.height()));
        }
    };
    auto pose = [&](pipeline::FrameBundle& b) {
        std::vector<Pose> poses;
        std::vector<std::optional<track::IdentityEmbedding>> embeddings;
        for (std::size_t i = 0; i < b.detections.size(); ++i) {
            const auto& rec = b.records[b.record_index[i]];
            const auto& hm = backend.heatmap(*rec.heatmap);
            if (hm.kind() != HeatmapKind::logits) throw FormatError("pose backend must provide logit heatmaps");
            Pose p = decode::decode_pose(hm, layout, b.crops[i], b.detections[i]);
            p.score *= b.detections[i].score;
            p.box.score = p.score;
            std::optional<track::IdentityEmbedding> emb;
            if (rec.embedding) {
                emb = track::IdentityEmbedding::normalized(*rec.embedding);
            } else if (rec.feature) {
                auto it = embedders.find(rec.feature->size());
                if (it == embedders.end())
                    it = embedders.emplace(rec.feature->size(), track::Embedder(rec.feature->size(), options.seed)).first;
                emb = it->second.embed(track::pga_fuse(*rec.feature, attention_for(p, *rec.feature)));
            }
            b.heatmaps.push_back(hm);
            poses.push_back(std::move(p));
            embeddings.push_back(std::move(emb));
        }
        std::vector<std::size_t> keep(poses.size());
        std::iota(keep.begin(), keep.end(), 0);
        if (options.nms) {
            keep = nms::pose_nms_indices(poses, params);
            std::sort(keep.begin(), keep.end());
        }
        for (std::size_t i : keep) {
            b.poses.push_back(poses[i]);
            b.embeddings.push_back(embeddings[i]);
        }
        if (options.track) {
            std::vector<track::TrackInput> inputs;
            for (std::size_t i = 0; i < b.poses.size(); ++i)
                inputs.push_back({b.poses[i].box, b.poses[i], b.embeddings[i]});
            b.links = tracker.step(b.frame, inputs);
            for (const auto& l : b.links) b.track_boxes.push_back(tracker.track_box(l.track_id));
        }
    };
    auto post = [&](pipeline::FrameBundle& b) {
        if (options.track) {
            for (std::size_t i = 0; i < b.links.size(); ++i)
                b.output.push_back(
                    io::track_line(b.frame, b.links[i].track_id, b.track_boxes[i], b.poses[b.links[i].detection]));
        } else {
            for (const auto& p : b.poses)
                b.output.push_back(io::Json{{"image_id", b.frame},
                                            {"category_id", 1},
                                            {"keypoints", io::keypoints_to_json(p)},
                                            {"bbox", {p.box.x_min, p.box.y_min, p.box.width(), p.box.height()}},
                                            {"score", p.score}}
                                       .dump());
        }
    };

    const std::vector<pipeline::StageSpec> stages = {
        {pipeline::StageName::load, options.queue_capacity, load},
        {pipeline::StageName::detect, options.queue_capacity, detect},
        {pipeline::StageName::transform, options.queue_capacity, transform},
        {pipeline::StageName::pose, options.queue_capacity, pose},
        {pipeline::StageName::post, options.queue_capacity, post},
    };

    const auto frames = detector.frames();
    std::size_t next = 0;
    pipeline::Source source = [&]() -> std::optional<pipeline::FrameBundle> {
        if (next >= frames.size()) return std::nullopt;
        pipeline::FrameBundle b;
        b.frame = frames[next++];
        return b;
    };
    std::string text;
    std::string mot;
    std::size_t poses = 0;
    bool first = true;
    if (!options.track) text = "[";
    pipeline::Sink sink = [&](pipeline::FrameBundle&& b) {
        poses += b.poses.size();
        for (const auto& line : b.output) {
            if (options.track) {
                text += line + "\n";
            } else {
                text += (first ? "\n" : ",\n") + line;
                first = false;
            }
        }
        if (options.mot_csv)
            for (std::size_t i = 0; i < b.links.size(); ++i)
                mot += io::mot_csv_line(b.frame, b.links[i].track_id, b.track_boxes[i]) + "\n";
        if (options.openpose_dir) {
            std::vector<std::int64_t> ids(b.poses.size(), -1);
            for (const auto& l : b.links) ids[l.detection] = l.track_id;
            char name[64];
            std::snprintf(name, sizeof name, "%012lld_keypoints.json", static_cast<long long>(b.frame));
            io::write_text((std::filesystem::path(*options.openpose_dir) / name).string(),
                           io::openpose_frame(b.poses, ids).dump() + "\n");
        }
    };
    if (options.openpose_dir) std::filesystem::create_directories(*options.openpose_dir);

    pipeline::RunOptions ro;
    ro.sequential = options.sequential;
    const auto stats = pipeline::run_pipeline(stages, source, sink, ro);
    if (!options.track) text += first ? "]\n" : "\n]\n";
    io::write_text(options.out, text);
    if (options.mot_csv) io::write_text(*options.mot_csv, mot);

    return {{"frames", stats.frames},
            {"poses", poses},
            {"elapsed_seconds", stats.elapsed_seconds},
            {"throughput_fps", stats.throughput_fps},
            {"peak_in_flight", stats.peak_in_flight},
            {"stage_latency", latency_json(stats)},
            {"mode", options.sequential ? "sequential" : "concurrent"}};
}

Json eval_map(const std::string& predictions, const std::string& ground_truth, const std::string& layout,
              const std::optional<std::string>& part) {
    const auto l = io::load_layout(layout);
    const auto preds = io::read_coco_results(predictions, l);
    const auto gts = io::read_coco_ground_truth(ground_truth, l);
    eval::MapOptions mo;
    mo.part = part;
    const auto r = eval::map_eval(preds, gts, mo);
    return {{"ap", r.ap},
            {"ap50", r.ap50},
            {"ap75", r.ap75},
            {"ap_medium", r.ap_medium},
            {"ap_large", r.ap_large},
            {"ar", r.ar},
            {"ap_per_threshold", r.ap_per_threshold},
            {"part", part ? Json(*part) : Json(nullptr)}};
}

Json eval_mot(const std::string& predictions, const std::string& ground_truth, const std::string& layout,
              double pckh_threshold) {
    const auto l = io::load_layout(layout);
    const auto preds = io::read_track_jsonl(predictions, l);
    const auto gts = io::read_track_jsonl(ground_truth, l);
    const auto r = eval::mot_eval(preds, gts, pckh_threshold);
    return {{"mota", r.mota},
            {"motp", r.motp},
            {"precision", r.precision},
            {"recall", r.recall},
            {"id_switches", r.id_switches}};
}

Json nms(const NmsOptions& options) {
    const auto layout = io::load_layout(options.layout);
    const auto candidates = io::read_coco_results(options.candidates, layout);
    const nms::NmsParams init = options.params ? io::read_nms_params(*options.params) : nms::NmsParams{};

    if (options.ground_truth) {
        const auto gts = io::read_coco_ground_truth(*options.ground_truth, layout);
        std::map<std::int64_t, const eval::ImagePredictions*> by_id;
        for (const auto& p : candidates) by_id[p.image_id] = &p;
        std::vector<nms::ValidationImage> validation;
        for (const auto& g : gts) {
            nms::ValidationImage v;
            v.ground_truth = g.instances;
            if (auto it = by_id.find(g.image_id); it != by_id.end()) v.candidates = it->second->poses;
            validation.push_back(std::move(v));
        }
        const auto res = nms::optimize_params(validation, init, nms::ParamGrid::defaults(layout->joint_count()),
                                              options.max_iterations, options.threads);
        io::write_text(options.out, io::nms_params_json(res.params).dump(2) + "\n");
        return {{"map_initial", res.map_initial},
                {"map_best", res.map_best},
                {"iterations", res.iterations},
                {"params", io::nms_params_json(res.params)}};
    }

    std::vector<eval::ImagePredictions> kept;
    std::size_t before = 0, after = 0;
    for (const auto& im : candidates) {
        before += im.poses.size();
        kept.push_back({im.image_id, nms::pose_nms(im.poses, init)});
        after += kept.back().poses.size();
    }
    io::write_text(options.out, io::coco_results_json(kept).dump() + "\n");
    return {{"candidates", before}, {"kept", after}, {"params", io::nms_params_json(init)}};
}

Json pgpg_fit(const std::string& data, const std::string& part, std::size_t components, std::uint64_t seed,
              std::size_t bic_max, const std::string& out) {
    const auto samples = io::read_offset_dataset(data);
    pgpg::FitOptions fo;
    fo.components = components;
    fo.seed = seed;
    const auto model = pgpg::fit_offset_model(samples, part, fo);
    io::write_text(out, io::offset_model_json(model).dump(2) + "\n");
    Json report = {{"part", part},
                   {"components", model.components},
                   {"log_likelihood_x", model.x_model.log_likelihood_history.empty()
                                            ? 0.0
                                            : model.x_model.log_likelihood_history.back()},
                   {"log_likelihood_y", model.y_model.log_likelihood_history.empty()
                                            ? 0.0
                                            : model.y_model.log_likelihood_history.back()}};
    if (bic_max > 0) {
        Json bic = Json::array();
        for (const auto& e : pgpg::bic_sweep(samples, part, fo, bic_max))
            bic.push_back({{"components", e.components}, {"bic", e.bic}});
        report["bic"] = bic;
    }
    return report;
}

Json pgpg_sample(const std::string& model, const std::array<double, 4>& gt_box, std::size_t n, bool uniform,
                 std::uint64_t seed, const std::string& out) {
    const auto m = io::offset_model_from_json(io::read_json(model));
    const DetectionBox gt{gt_box[0], gt_box[1], gt_box[2], gt_box[3], 1.0, 0};
    std::mt19937_64 rng(seed);
    Json boxes = Json::array();
    for (std::size_t i = 0; i < n; ++i)
        boxes.push_back(io::box_to_json(
            pgpg::sample_proposal(gt, m, uniform ? pgpg::SampleMode::uniform : pgpg::SampleMode::gmm, rng)));
    io::write_text(out, Json{{"part", m.part}, {"gt", io::box_to_json(gt)}, {"proposals", boxes}}.dump() + "\n");
    return {{"part", m.part}, {"proposals", n}, {"mode", uniform ? "uniform" : "gmm"}};
}

Json bench(const BenchOptions& options) {
    if (options.frames == 0) throw InvalidArgument("bench needs at least one frame");
    const auto latency = std::chrono::duration<double, std::milli>(options.latency_ms);
    auto sleeper = [latency](pipeline::FrameBundle&) { std::this_thread::sleep_for(latency); };
    std::vector<pipeline::StageSpec> stages;
    for (std::size_t i = 0; i < pipeline::kStageCount; ++i)
        stages.push_back({static_cast<pipeline::StageName>(i), options.queue_capacity, sleeper});
    auto measure = [&](bool sequential) {
        std::size_t next = 0;
        pipeline::Source source = [&]() -> std::optional<pipeline::FrameBundle> {
            if (next >= options.frames) return std::nullopt;
            pipeline::FrameBundle b;
            b.frame = static_cast<std::int64_t>(next++);
            return b;
        };
        pipeline::Sink sink = [](pipeline::FrameBundle&&) {};
        pipeline::RunOptions ro;
        ro.sequential = sequential;
        return pipeline::run_pipeline(stages, source, sink, ro);
    };
    const auto conc = measure(false);
    const auto seq = measure(true);
    return {{"frames", options.frames},
            {"latency_ms", options.latency_ms},
            {"concurrent_fps", conc.throughput_fps},
            {"sequential_fps", seq.throughput_fps},
            {"speedup", seq.throughput_fps > 0.0 ? conc.throughput_fps / seq.throughput_fps : 0.0},
            {"peak_in_flight", conc.peak_in_flight},
            {"hardware_threads", std::thread::hardware_concurrency()}};
}

namespace {

Heatmap heatmap_for(const Pose& pose, const DetectionBox& box, std::size_t w, std::size_t h) {
    const auto crop = CropTransform::for_box(box, w, h);
    Heatmap hm(pose.keypoints.size(), h, w, HeatmapKind::logits);
    for (std::size_t j = 0; j < pose.keypoints.size(); ++j) {
        const double hx = std::clamp((pose.keypoints[j].x - crop.offset_x) / crop.scale_x, 0.0, double(w - 1));
        const double hy = std::clamp((pose.keypoints[j].y - crop.offset_y) / crop.scale_y, 0.0, double(h - 1));
        const auto one = synth::gen_heatmap({hx, hy}, 1.0, w, h, 4.0);
        std::copy(one.logits.values().begin(), one.logits.values().end(), hm.joint(j).begin());
    }
    return hm;
}

} // namespace

Json synth(const SynthOptions& options) {
    const auto layout = io::load_layout(options.layout);
    if (!layout->head_segment()) throw InvalidArgument("synthetic tracks need a layout with a head segment");
    std::filesystem::create_directories(options.out_dir);
    const std::filesystem::path dir(options.out_dir);
    std::mt19937_64 rng(options.seed);
    synth::TrajectoryOptions to;
    to.layout = layout;
    to.emb_noise = 0.02;
    const auto scene = synth::gen_trajectories(options.people, options.frames, to, rng);

    std::normal_distribution<double> jitter(0.0, 2.0);
    std::vector<io::FrameRecords> frames;
    std::vector<Heatmap> heatmaps;
    Json annotations = Json::array(), images = Json::array();
    std::string gt_tracks;
    std::size_t detections = 0;
    for (std::size_t f = 0; f < scene.frames.size(); ++f) {
        io::FrameRecords fr;
        fr.frame = static_cast<std::int64_t>(f);
        images.push_back({{"id", fr.frame}});
        for (const auto& d : scene.frames[f]) {
            const Pose& pose = *d.input.pose;
            for (std::size_t k = 0; k <= options.duplicates; ++k) {
                pipeline::DetectionRecord r;
                r.box = d.input.box;
                r.box.score = k == 0 ? 0.9 : 0.9 * std::pow(0.8, static_cast<double>(k));
                if (k > 0) {
                    r.box.x_min += jitter(rng);
                    r.box.y_min += jitter(rng);
                    r.box.x_max += jitter(rng);
                    r.box.y_max += jitter(rng);
                }
                r.heatmap = heatmaps.size();
                r.embedding = d.input.embedding->values();
                heatmaps.push_back(heatmap_for(pose, r.box, options.heatmap_width, options.heatmap_height));
                fr.detections.push_back(std::move(r));
            }
        }
        // One detection under the score floor per frame.
        pipeline::DetectionRecord junk;
        junk.box = {5.0, 5.0, 45.0, 105.0, 0.05, 0};
        junk.heatmap = heatmaps.size();
        heatmaps.push_back(heatmap_for(synth::random_pose(layout, junk.box, rng), junk.box, options.heatmap_width,
                                       options.heatmap_height));
        fr.detections.push_back(std::move(junk));
        detections += fr.detections.size();
        frames.push_back(std::move(fr));

        for (const auto& person : scene.ground_truth[f].people) {
            gt_tracks += io::track_line(static_cast<std::int64_t>(f), person.track_id, person.pose.box, person.pose) + "\n";
            const auto& b = person.pose.box;
            annotations.push_back({{"image_id", static_cast<std::int64_t>(f)},
                                   {"category_id", 1},
                                   {"keypoints", io::keypoints_to_json(person.pose)},
                                   {"bbox", {b.x_min, b.y_min, b.width(), b.height()}},
                                   {"area", b.area()},
                                   {"iscrowd", 0}});
        }
    }
    io::write_detections((dir / "detections.jsonl").string(), frames);
    io::write_hmap((dir / "heatmaps.hmap").string(), heatmaps);
    io::write_text((dir / "gt_tracks.jsonl").string(), gt_tracks);
    io::write_text((dir / "gt_coco.json").string(),
                   Json{{"images", images}, {"annotations", annotations}}.dump() + "\n");
    return {{"frames", options.frames},
            {"people", options.people},
            {"detections", detections},
            {"heatmaps", heatmaps.size()},
            {"out_dir", options.out_dir}};
}

} // namespace posepipe::app
