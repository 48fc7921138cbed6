// Command-line front end over the C API.

#include <cstdio>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "posepipe/posepipe.h"

namespace {

const char* opt(const std::string& s) { return s.empty() ? nullptr : s.c_str(); }

int finish(pp_status status, char*& report) {
    if (status != PP_OK) {
        std::fprintf(stderr, "posepipe: %s: %s\n", pp_status_string(status), pp_last_error());
        return static_cast<int>(status);
    }
    if (report) std::printf("%s\n", report);
    pp_string_free(report);
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Top-down pose pipeline: decoding, pose NMS, proposal sampling, tracking and evaluation"};
    app.require_subcommand(1);
    app.set_version_flag("--version", pp_version());

    // run
    auto* run = app.add_subcommand("run", "Run detections and heatmaps through the five-stage pipeline");
    std::string detections, heatmaps, layout = "halpe136", out, nms_params, openpose_dir, mot_csv;
    bool track = false, sequential = false, no_nms = false;
    std::size_t queue_cap = 64;
    std::uint64_t seed = 0;
    run->add_option("--detections", detections, "Detections JSONL")->required();
    run->add_option("--heatmaps", heatmaps, "Heatmap records (.hmap)")->required();
    run->add_option("--layout", layout, "Builtin layout name or layout JSON")->capture_default_str();
    run->add_option("--out", out, "Output file")->required();
    run->add_option("--nms-params", nms_params, "Pose NMS parameters JSON");
    run->add_flag("--no-nms", no_nms, "Keep every decoded pose");
    run->add_flag("--track", track, "Assign track ids and write track JSONL");
    run->add_option("--queue-cap", queue_cap, "Capacity of each stage queue")->capture_default_str()->check(
        CLI::PositiveNumber);
    run->add_flag("--sequential", sequential, "Step the stages on one thread");
    run->add_option("--seed", seed, "Seed of the feature projection")->capture_default_str();
    run->add_option("--openpose-dir", openpose_dir, "Also write OpenPose-style per-frame JSON here");
    run->add_option("--mot-csv", mot_csv, "Also write MOT-challenge CSV (with --track)");

    // eval
    auto* ev = app.add_subcommand("eval", "Keypoint AP or joint-wise MOT metrics");
    std::string pred, gt, part;
    bool mot = false;
    double pckh = 0.5;
    ev->add_option("--pred", pred, "COCO results JSON, or track JSONL with --mot")->required();
    ev->add_option("--gt", gt, "COCO keypoint ground truth, or track JSONL with --mot")->required();
    ev->add_option("--layout", layout, "Builtin layout name or layout JSON")->capture_default_str();
    ev->add_option("--part", part, "Restrict OKS to one layout part");
    ev->add_flag("--mot", mot, "Evaluate tracking instead of detection");
    ev->add_option("--pckh", pckh, "Match gate as a fraction of the head segment")->capture_default_str();

    // nms
    auto* nm = app.add_subcommand("nms", "Apply pose NMS, or search its parameters when --gt is given");
    std::string candidates, params;
    std::size_t max_iter = 10;
    unsigned threads = 0;
    nm->add_option("--candidates", candidates, "COCO results JSON with candidate poses")->required();
    nm->add_option("--gt", gt, "COCO keypoint ground truth");
    nm->add_option("--params", params, "Parameters to apply, or the search start");
    nm->add_option("--layout", layout, "Builtin layout name or layout JSON")->capture_default_str();
    nm->add_option("--out", out, "Parameters JSON (search) or kept poses (apply)")->required();
    nm->add_option("--max-iter", max_iter, "Search iterations")->capture_default_str();
    nm->add_option("--threads", threads, "Search workers, 0 = all cores")->capture_default_str();

    // pgpg
    auto* pg = app.add_subcommand("pgpg", "Proposal offset model");
    pg->require_subcommand(1);
    auto* fit = pg->add_subcommand("fit", "Fit offset mixtures for one part");
    std::string data, model;
    std::size_t components = 3, bic_max = 0, n = 100;
    fit->add_option("--data", data, "Offset dataset JSON")->required();
    fit->add_option("--part", part, "Part name")->required();
    fit->add_option("--components", components, "Mixture components")->capture_default_str();
    fit->add_option("--bic", bic_max, "Report BIC for 1..N components");
    fit->add_option("--seed", seed, "Seed")->capture_default_str();
    fit->add_option("--out", out, "Model JSON")->required();
    auto* sample = pg->add_subcommand("sample", "Draw proposals around a ground-truth box");
    std::vector<double> box;
    bool uniform = false;
    sample->add_option("--model", model, "Model JSON")->required();
    sample->add_option("--gt-box", box, "x1 y1 x2 y2")->required()->expected(4);
    sample->add_option("-n,--count", n, "Number of proposals")->capture_default_str();
    sample->add_flag("--uniform", uniform, "Sample the percentile box instead of the mixture");
    sample->add_option("--seed", seed, "Seed")->capture_default_str();
    sample->add_option("--out", out, "Proposals JSON")->required();

    // bench
    auto* bench = app.add_subcommand("bench", "Concurrent versus sequential throughput with sleeping stages");
    std::size_t frames = 200;
    double latency_ms = 2.0;
    std::size_t bench_cap = 8;
    bench->add_option("--frames", frames, "Frames")->capture_default_str();
    bench->add_option("--latency-ms", latency_ms, "Per-stage latency")->capture_default_str();
    bench->add_option("--queue-cap", bench_cap, "Queue capacity")->capture_default_str();

    // synth
    auto* syn = app.add_subcommand("synth", "Write a synthetic tracking scene in the pipeline's input formats");
    std::string out_dir;
    std::size_t synth_frames = 10, people = 2, duplicates = 1, hm_w = 16, hm_h = 32;
    syn->add_option("--out-dir", out_dir, "Directory")->required();
    syn->add_option("--layout", layout, "Builtin layout name or layout JSON")->capture_default_str();
    syn->add_option("--frames", synth_frames, "Frames")->capture_default_str();
    syn->add_option("--people", people, "People")->capture_default_str();
    syn->add_option("--duplicates", duplicates, "Extra jittered detections per person")->capture_default_str();
    syn->add_option("--heatmap-width", hm_w, "Heatmap width")->capture_default_str();
    syn->add_option("--heatmap-height", hm_h, "Heatmap height")->capture_default_str();
    syn->add_option("--seed", seed, "Seed")->capture_default_str();

    CLI11_PARSE(app, argc, argv);

    char* report = nullptr;
    if (run->parsed()) {
        pp_run_options o;
        pp_run_options_default(&o);
        o.detections_path = detections.c_str();
        o.heatmaps_path = heatmaps.c_str();
        o.layout = layout.c_str();
        o.out_path = out.c_str();
        o.nms_params_path = opt(nms_params);
        o.openpose_dir = opt(openpose_dir);
        o.mot_csv_path = opt(mot_csv);
        o.apply_nms = no_nms ? 0 : 1;
        o.track = track ? 1 : 0;
        o.sequential = sequential ? 1 : 0;
        o.queue_capacity = queue_cap;
        o.seed = seed;
        return finish(pp_run(&o, &report), report);
    }
    if (ev->parsed()) {
        if (mot) return finish(pp_eval_mot(pred.c_str(), gt.c_str(), layout.c_str(), pckh, &report), report);
        return finish(pp_eval_map(pred.c_str(), gt.c_str(), layout.c_str(), opt(part), &report), report);
    }
    if (nm->parsed()) {
        pp_nms_options o;
        pp_nms_options_default(&o);
        o.candidates_path = candidates.c_str();
        o.ground_truth_path = opt(gt);
        o.params_path = opt(params);
        o.layout = layout.c_str();
        o.out_path = out.c_str();
        o.max_iterations = max_iter;
        o.threads = threads;
        return finish(pp_nms(&o, &report), report);
    }
    if (fit->parsed())
        return finish(pp_pgpg_fit(data.c_str(), part.c_str(), components, seed, bic_max, out.c_str(), &report), report);
    if (sample->parsed())
        return finish(pp_pgpg_sample(model.c_str(), box.data(), n, uniform ? 1 : 0, seed, out.c_str(), &report), report);
    if (bench->parsed()) return finish(pp_bench(frames, latency_ms, bench_cap, &report), report);
    if (syn->parsed()) {
        pp_synth_options o;
        pp_synth_options_default(&o);
        o.out_dir = out_dir.c_str();
        o.layout = layout.c_str();
        o.frames = synth_frames;
        o.people = people;
        o.duplicates = duplicates;
        o.heatmap_width = hm_w;
        o.heatmap_height = hm_h;
        o.seed = seed;
        return finish(pp_synth(&o, &report), report);
    }
    return 1;
}
