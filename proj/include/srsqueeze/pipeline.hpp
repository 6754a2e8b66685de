#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "srsqueeze/distill.hpp"
#include "srsqueeze/image.hpp"
#include "srsqueeze/model.hpp"
#include "srsqueeze/planner.hpp"
#include "srsqueeze/pruning.hpp"

// End-to-end workflow orchestration: pretrain -> prune -> plan -> distill ->
// eval, driven by one declarative config file, with every stage output
// persisted so an interrupted run resumes from its completed artifacts.

namespace srsq {

// Parsed form of the run config file, a small TOML-style key-value tree
// (see docs in README: [section] headers, key = value lines, # comments;
// values are quoted strings, integers, floats, or true/false).
//
// The global seed feeds every stochastic component at fixed offsets:
// teacher init = seed, pretrain sampler = seed + 1, prune sampler = seed + 2,
// distill sampler = seed + 3, student init = seed + 4.
struct RunConfig {
    std::string name = "run";
    unsigned seed = 0;
    long scale = 2;
    std::filesystem::path data_dir;  // training PNGs
    std::filesystem::path eval_dir;  // held-out PNGs; defaults to data_dir
    std::filesystem::path out_dir;   // artifact directory, created on demand

    ModelConfig teacher;  // scale/in_channels filled from [run]/[teacher]
    long pretrain_iters = 500;
    long pretrain_batch = 8;
    double pretrain_lr = 1e-3;
    long pretrain_patch = 48;

    PruneConfig prune;
    long prune_patch = 48;

    RoundingMode plan_mode = RoundingMode::Search;

    KDConfig kd;

    long eval_border = -1;  // -1: use the scale factor

    void validate() const;  // throws std::invalid_argument on bad fields
};

// Parses the documented key-value tree. Relative paths resolve against
// base_dir. Unknown keys, type mismatches, and syntax errors throw with the
// offending line number.
RunConfig parse_run_config(const std::string& text, const std::filesystem::path& base_dir);
RunConfig load_run_config(const std::filesystem::path& path);

// Canonical JSON snapshot of a config; equal configs produce equal strings.
std::string run_config_snapshot(const RunConfig& cfg);
// FNV-1a hash of the snapshot, 16 hex digits; the run's identity.
std::string workflow_run_id(const RunConfig& cfg);

// Builds a model from (config, seed) and trains it on Charbonnier fidelity
// (epsilon 1e-3) with AdaMax for the given number of batches. Zero
// iterations returns the freshly initialized model unchanged. Empty datasets
// are rejected by the sampler's own constructor.
SRModel pretrain(const ModelConfig& config, PatchSampler& sampler, long iterations, long batch,
                 double lr, unsigned seed);

// Evaluates super-resolution quality over every PNG in hr_dir: each image is
// cropped to a multiple of the scale, downscaled bicubically to LR, restored
// by the model (or plain bicubic upscaling), and scored with Y-channel PSNR
// (border pixels cropped) and SSIM against the HR crop.
EvalResult evaluate_model(const SRModel& model, const std::filesystem::path& hr_dir, int border);
EvalResult evaluate_bicubic(const std::filesystem::path& hr_dir, long scale, int border);

struct StageTiming {
    std::string stage;
    double seconds = 0.0;
    bool resumed = false;  // true when the stage reused its persisted artifacts
};

// Consolidated outcome of one workflow run, assembled purely from the
// persisted stage artifacts (so resumed and fresh runs of one config agree).
struct WorkflowReport {
    std::string run_id;
    std::string config_snapshot;  // canonical JSON text

    PruneReport prune;         // density and deep-parameter counts
    CompressionPlan plan;      // planner decision
    ModelConfig student_config;  // plan target with peripherals adjusted
    TrainRun distill;          // per-iteration loss log

    long eval_images = 0;
    int eval_border = 0;
    EvalResult bicubic;
    EvalResult teacher;
    EvalResult student;

    long teacher_params = 0;
    long student_params = 0;
    double achieved_ratio = 0.0;  // student_params / teacher_params
    double teacher_macs_720p = 0.0;
    double student_macs_720p = 0.0;

    std::vector<std::pair<std::string, std::string>> artifacts;  // label -> filename
    std::vector<StageTiming> timings;  // wall clock; sidecar only, never in report.json
};

// Runs the five stages, persisting each artifact in cfg.out_dir:
//   teacher.srwt, pruned.srwt + prune_report.json, plan.json,
//   student.srwt + distill_log.jsonl, metrics.json, then report.json and a
//   timings.json sidecar. A stage whose artifacts already exist is skipped
//   and its outputs are loaded instead, so a failed run resumes where it
//   stopped. Any stage failure rethrows with the stage name attached.
WorkflowReport run_workflow(const RunConfig& cfg);

// report.json: run id, config, the five stage sections, and the summary.
// Deterministic for a given config and dataset (timings are excluded).
void save_workflow_report(const WorkflowReport& report, const std::filesystem::path& path);

}  // namespace srsq
