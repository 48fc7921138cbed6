#ifndef POSEPIPE_H
#define POSEPIPE_H

/* C interface to the posepipe library. Every call returns a pp_status; on
 * failure pp_last_error() describes the problem for the calling thread.
 * Strings returned through char** are owned by the caller and released with
 * pp_string_free. */

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define PP_API __declspec(dllexport)
#else
#define PP_API __attribute__((visibility("default")))
#endif

typedef enum pp_status {
    PP_OK = 0,
    PP_ERR_INVALID_ARGUMENT = 1,
    PP_ERR_FORMAT = 2,
    PP_ERR_NOT_FOUND = 3,
    PP_ERR_NUMERICAL = 4,
    PP_ERR_IO = 5,
    PP_ERR_PIPELINE = 6,
    PP_ERR_INTERNAL = 7
} pp_status;

PP_API const char* pp_version(void);
PP_API const char* pp_status_string(pp_status status);
PP_API const char* pp_last_error(void);
PP_API void pp_string_free(char* s);

/* Skeleton layouts */

typedef struct pp_layout pp_layout;

/* Builtin name ("halpe136", "coco17") or path to a layout JSON file. */
PP_API pp_status pp_layout_load(const char* name_or_path, pp_layout** out);
PP_API size_t pp_layout_joint_count(const pp_layout* layout);
PP_API void pp_layout_free(pp_layout* layout);

/* Decodes a joints x height x width logit heatmap predicted inside `box`
 * (x1, y1, x2, y2). Writes 3 * joints values (x, y, confidence) to
 * `keypoints` and the mean joint confidence to `score`. */
PP_API pp_status pp_decode_heatmap(const pp_layout* layout, const float* logits, size_t joints, size_t height,
                                   size_t width, const double box[4], double* keypoints, double* score);

/* Tracking */

typedef struct pp_tracker pp_tracker;

typedef struct pp_track_config {
    double mu_emb;
    double mu_f;
    double lambda_np;
    double relax_factor;
    size_t max_lost;
} pp_track_config;

PP_API void pp_track_config_default(pp_track_config* config);
PP_API pp_status pp_tracker_create(const pp_layout* layout, const pp_track_config* config, pp_tracker** out);
/* `detections_json`: [{"box": [4], "score": s, "keypoints": [3 * joints]?,
 * "embedding": [128]?}]. `assignments_json` receives
 * [{"detection": i, "track_id": id, "stage": 1..4}]. */
PP_API pp_status pp_tracker_step(pp_tracker* tracker, int64_t frame, const char* detections_json,
                                 char** assignments_json);
PP_API void pp_tracker_free(pp_tracker* tracker);

/* File-level operations. Each writes a JSON report to `report_json`
 * (may be NULL). Optional string fields may be NULL. */

typedef struct pp_run_options {
    const char* detections_path;
    const char* heatmaps_path;
    const char* layout;
    const char* out_path;
    const char* nms_params_path;
    const char* openpose_dir;
    const char* mot_csv_path;
    int apply_nms;
    int track;
    int sequential;
    size_t queue_capacity;
    uint64_t seed;
} pp_run_options;

PP_API void pp_run_options_default(pp_run_options* options);
PP_API pp_status pp_run(const pp_run_options* options, char** report_json);

PP_API pp_status pp_eval_map(const char* predictions_path, const char* ground_truth_path, const char* layout,
                             const char* part, char** report_json);
PP_API pp_status pp_eval_mot(const char* predictions_path, const char* ground_truth_path, const char* layout,
                             double pckh_threshold, char** report_json);

typedef struct pp_nms_options {
    const char* candidates_path;
    const char* ground_truth_path; /* set: optimise parameters */
    const char* params_path;
    const char* layout;
    const char* out_path;
    size_t max_iterations;
    unsigned threads;
} pp_nms_options;

PP_API void pp_nms_options_default(pp_nms_options* options);
PP_API pp_status pp_nms(const pp_nms_options* options, char** report_json);

PP_API pp_status pp_pgpg_fit(const char* data_path, const char* part, size_t components, uint64_t seed,
                             size_t bic_max, const char* model_path, char** report_json);
PP_API pp_status pp_pgpg_sample(const char* model_path, const double gt_box[4], size_t n, int uniform, uint64_t seed,
                                const char* out_path, char** report_json);

PP_API pp_status pp_bench(size_t frames, double latency_ms, size_t queue_capacity, char** report_json);

typedef struct pp_synth_options {
    const char* out_dir;
    const char* layout;
    size_t frames;
    size_t people;
    size_t duplicates;
    size_t heatmap_width;
    size_t heatmap_height;
    uint64_t seed;
} pp_synth_options;

PP_API void pp_synth_options_default(pp_synth_options* options);
PP_API pp_status pp_synth(const pp_synth_options* options, char** report_json);

#ifdef __cplusplus
}
#endif

#endif
