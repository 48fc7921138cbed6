#include "posepipe/posepipe.h"

#include <cstring>
#include <string>

#include <json.hpp>

#include "posepipe/app.hpp"
#include "posepipe/decode.hpp"
#include "posepipe/error.hpp"
#include "posepipe/io.hpp"
#include "posepipe/pipeline.hpp"
#include "posepipe/track.hpp"

struct pp_layout {
    posepipe::LayoutPtr layout;
};

struct pp_tracker {
    posepipe::LayoutPtr layout;
    posepipe::track::Tracker tracker;
};

namespace {

thread_local std::string last_error;

template <typename F>
pp_status guard(F&& f) {
    try {
        f();
        last_error.clear();
        return PP_OK;
    } catch (const posepipe::pipeline::PipelineError& e) {
        last_error = e.what();
        return PP_ERR_PIPELINE;
    } catch (const posepipe::InvalidArgument& e) {
        last_error = e.what();
        return PP_ERR_INVALID_ARGUMENT;
    } catch (const posepipe::FormatError& e) {
        last_error = e.what();
        return PP_ERR_FORMAT;
    } catch (const posepipe::NotFound& e) {
        last_error = e.what();
        return PP_ERR_NOT_FOUND;
    } catch (const posepipe::NumericalError& e) {
        last_error = e.what();
        return PP_ERR_NUMERICAL;
    } catch (const posepipe::IoError& e) {
        last_error = e.what();
        return PP_ERR_IO;
    } catch (const nlohmann::json::exception& e) {
        last_error = e.what();
        return PP_ERR_FORMAT;
    } catch (const std::exception& e) {
        last_error = e.what();
        return PP_ERR_INTERNAL;
    } catch (...) {
        last_error = "unknown error";
        return PP_ERR_INTERNAL;
    }
}

void require(const void* p, const char* what) {
    if (!p) throw posepipe::InvalidArgument(std::string(what) + " must not be NULL");
}

char* dup_string(const std::string& s) {
    char* out = static_cast<char*>(std::malloc(s.size() + 1));
    if (!out) throw std::bad_alloc();
    std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

void report(char** out, const nlohmann::json& j) {
    if (out) *out = dup_string(j.dump());
}

std::optional<std::string> opt(const char* s) { return s ? std::optional<std::string>(s) : std::nullopt; }

} // namespace

extern "C" {

const char* pp_version(void) { return "0.1.0"; }

const char* pp_status_string(pp_status status) {
    switch (status) {
    case PP_OK: return "ok";
    case PP_ERR_INVALID_ARGUMENT: return "invalid argument";
    case PP_ERR_FORMAT: return "format error";
    case PP_ERR_NOT_FOUND: return "not found";
    case PP_ERR_NUMERICAL: return "numerical error";
    case PP_ERR_IO: return "i/o error";
    case PP_ERR_PIPELINE: return "pipeline error";
    case PP_ERR_INTERNAL: return "internal error";
    }
    return "unknown status";
}

const char* pp_last_error(void) { return last_error.c_str(); }

void pp_string_free(char* s) { std::free(s); }

pp_status pp_layout_load(const char* name_or_path, pp_layout** out) {
    return guard([&] {
        require(name_or_path, "layout name");
        require(out, "out");
        *out = new pp_layout{posepipe::io::load_layout(name_or_path)};
    });
}

size_t pp_layout_joint_count(const pp_layout* layout) { return layout ? layout->layout->joint_count() : 0; }

void pp_layout_free(pp_layout* layout) { delete layout; }

pp_status pp_decode_heatmap(const pp_layout* layout, const float* logits, size_t joints, size_t height,
                            size_t width, const double box[4], double* keypoints, double* score) {
    return guard([&] {
        require(layout, "layout");
        require(logits, "logits");
        require(box, "box");
        require(keypoints, "keypoints");
        const std::vector<double> values(logits, logits + joints * height * width);
        const posepipe::Heatmap hm(joints, height, width, posepipe::HeatmapKind::logits, values);
        const posepipe::DetectionBox b{box[0], box[1], box[2], box[3], 1.0, 0};
        const auto pose = posepipe::decode::decode_pose(hm, layout->layout,
                                                        posepipe::CropTransform::for_box(b, width, height), b);
        for (std::size_t j = 0; j < pose.keypoints.size(); ++j) {
            keypoints[3 * j] = pose.keypoints[j].x;
            keypoints[3 * j + 1] = pose.keypoints[j].y;
            keypoints[3 * j + 2] = pose.keypoints[j].confidence;
        }
        if (score) *score = pose.score;
    });
}

void pp_track_config_default(pp_track_config* config) {
    if (!config) return;
    const posepipe::track::MsimConfig d;
    *config = {d.mu_emb, d.mu_f, d.lambda_np, d.relax_factor, d.max_lost};
}

pp_status pp_tracker_create(const pp_layout* layout, const pp_track_config* config, pp_tracker** out) {
    return guard([&] {
        require(layout, "layout");
        require(out, "out");
        posepipe::track::MsimConfig c;
        if (config) {
            c.mu_emb = config->mu_emb;
            c.mu_f = config->mu_f;
            c.lambda_np = config->lambda_np;
            c.relax_factor = config->relax_factor;
            c.max_lost = config->max_lost;
        }
        *out = new pp_tracker{layout->layout, posepipe::track::Tracker(c)};
    });
}

pp_status pp_tracker_step(pp_tracker* tracker, int64_t frame, const char* detections_json, char** assignments_json) {
    return guard([&] {
        require(tracker, "tracker");
        require(detections_json, "detections");
        const auto j = nlohmann::json::parse(detections_json);
        if (!j.is_array()) throw posepipe::FormatError("detections must be a JSON array");
        std::vector<posepipe::track::TrackInput> inputs;
        for (const auto& d : j) {
            posepipe::track::TrackInput in;
            in.box = posepipe::io::box_from_json(d.at("box"));
            in.box.score = d.value("score", 1.0);
            if (d.contains("keypoints")) {
                const auto flat = d.at("keypoints").get<std::vector<double>>();
                const std::size_t m = tracker->layout->joint_count();
                if (flat.size() != 3 * m) throw posepipe::FormatError("keypoints must hold 3 values per joint");
                std::vector<posepipe::Keypoint> kps(m);
                for (std::size_t i = 0; i < m; ++i) kps[i] = {flat[3 * i], flat[3 * i + 1], flat[3 * i + 2]};
                in.pose = posepipe::make_pose(tracker->layout, std::move(kps), in.box.score, in.box);
            }
            if (d.contains("embedding"))
                in.embedding = posepipe::track::IdentityEmbedding::normalized(d.at("embedding").get<std::vector<double>>());
            inputs.push_back(std::move(in));
        }
        const auto links = tracker->tracker.step(frame, inputs);
        nlohmann::json out = nlohmann::json::array();
        for (const auto& l : links)
            out.push_back({{"detection", l.detection}, {"track_id", l.track_id}, {"stage", static_cast<int>(l.stage)}});
        report(assignments_json, out);
    });
}

void pp_tracker_free(pp_tracker* tracker) { delete tracker; }

void pp_run_options_default(pp_run_options* options) {
    if (!options) return;
    *options = {};
    options->layout = "halpe136";
    options->apply_nms = 1;
    options->queue_capacity = posepipe::pipeline::kDefaultQueueCapacity;
}

pp_status pp_run(const pp_run_options* options, char** report_json) {
    return guard([&] {
        require(options, "options");
        require(options->detections_path, "detections_path");
        require(options->heatmaps_path, "heatmaps_path");
        require(options->out_path, "out_path");
        posepipe::app::RunOptions o;
        o.detections = options->detections_path;
        o.heatmaps = options->heatmaps_path;
        o.layout = options->layout ? options->layout : "halpe136";
        o.out = options->out_path;
        o.nms_params = opt(options->nms_params_path);
        o.openpose_dir = opt(options->openpose_dir);
        o.mot_csv = opt(options->mot_csv_path);
        o.nms = options->apply_nms != 0;
        o.track = options->track != 0;
        o.sequential = options->sequential != 0;
        o.queue_capacity = options->queue_capacity;
        o.seed = options->seed;
        report(report_json, posepipe::app::run(o));
    });
}

pp_status pp_eval_map(const char* predictions_path, const char* ground_truth_path, const char* layout,
                      const char* part, char** report_json) {
    return guard([&] {
        require(predictions_path, "predictions_path");
        require(ground_truth_path, "ground_truth_path");
        report(report_json, posepipe::app::eval_map(predictions_path, ground_truth_path,
                                                    layout ? layout : "halpe136", opt(part)));
    });
}

pp_status pp_eval_mot(const char* predictions_path, const char* ground_truth_path, const char* layout,
                      double pckh_threshold, char** report_json) {
    return guard([&] {
        require(predictions_path, "predictions_path");
        require(ground_truth_path, "ground_truth_path");
        report(report_json, posepipe::app::eval_mot(predictions_path, ground_truth_path,
                                                    layout ? layout : "halpe136", pckh_threshold));
    });
}

void pp_nms_options_default(pp_nms_options* options) {
    if (!options) return;
    *options = {};
    options->layout = "halpe136";
    options->max_iterations = 10;
}

pp_status pp_nms(const pp_nms_options* options, char** report_json) {
    return guard([&] {
        require(options, "options");
        require(options->candidates_path, "candidates_path");
        require(options->out_path, "out_path");
        posepipe::app::NmsOptions o;
        o.candidates = options->candidates_path;
        o.ground_truth = opt(options->ground_truth_path);
        o.params = opt(options->params_path);
        o.layout = options->layout ? options->layout : "halpe136";
        o.out = options->out_path;
        o.max_iterations = options->max_iterations;
        o.threads = options->threads;
        report(report_json, posepipe::app::nms(o));
    });
}

pp_status pp_pgpg_fit(const char* data_path, const char* part, size_t components, uint64_t seed, size_t bic_max,
                      const char* model_path, char** report_json) {
    return guard([&] {
        require(data_path, "data_path");
        require(part, "part");
        require(model_path, "model_path");
        report(report_json, posepipe::app::pgpg_fit(data_path, part, components, seed, bic_max, model_path));
    });
}

pp_status pp_pgpg_sample(const char* model_path, const double gt_box[4], size_t n, int uniform, uint64_t seed,
                         const char* out_path, char** report_json) {
    return guard([&] {
        require(model_path, "model_path");
        require(gt_box, "gt_box");
        require(out_path, "out_path");
        report(report_json, posepipe::app::pgpg_sample(model_path, {gt_box[0], gt_box[1], gt_box[2], gt_box[3]}, n,
                                                       uniform != 0, seed, out_path));
    });
}

pp_status pp_bench(size_t frames, double latency_ms, size_t queue_capacity, char** report_json) {
    return guard([&] {
        posepipe::app::BenchOptions o;
        o.frames = frames;
        o.latency_ms = latency_ms;
        o.queue_capacity = queue_capacity;
        report(report_json, posepipe::app::bench(o));
    });
}

void pp_synth_options_default(pp_synth_options* options) {
    if (!options) return;
    const posepipe::app::SynthOptions d;
    *options = {nullptr, "halpe136", d.frames, d.people, d.duplicates, d.heatmap_width, d.heatmap_height, d.seed};
}

pp_status pp_synth(const pp_synth_options* options, char** report_json) {
    return guard([&] {
        require(options, "options");
        require(options->out_dir, "out_dir");
        posepipe::app::SynthOptions o;
        o.out_dir = options->out_dir;
        o.layout = options->layout ? options->layout : "halpe136";
        o.frames = options->frames;
        o.people = options->people;
        o.duplicates = options->duplicates;
        o.heatmap_width = options->heatmap_width;
        o.heatmap_height = options->heatmap_height;
        o.seed = options->seed;
        report(report_json, posepipe::app::synth(o));
    });
}

} // extern "C"
