// srsqueeze: train, prune, plan, distill, evaluate, and orchestrate compact
// super-resolution models from the command line.

#include <CLI11.hpp>
#include <json.hpp>

#include "srsqueeze/pipeline.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

using namespace srsq;
namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace {

ordered_json eval_result_json(const EvalResult& r) {
    auto psnr_value = [](double v) {
        return std::isinf(v) ? ordered_json(v > 0 ? "inf" : "-inf") : ordered_json(v);
    };
    ordered_json per = ordered_json::array();
    for (const auto& img : r.images) {
        per.push_back(ordered_json{
            {"name", img.name}, {"psnr", psnr_value(img.psnr)}, {"ssim", img.ssim}});
    }
    return ordered_json{{"mean_psnr", psnr_value(r.mean_psnr)},
                        {"mean_ssim", r.mean_ssim},
                        {"per_image", std::move(per)}};
}

void write_json(const ordered_json& j, const fs::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << j.dump(2) << '\n';
    if (!out) throw std::runtime_error("failed writing " + path.string());
}

struct PruneArgs {
    std::string model, data, out, report;
    PruneConfig cfg;
    long patch = 48;
    unsigned seed = 0;
};

int cmd_prune(const PruneArgs& a) {
    SRModel model = load_srwt(a.model);
    PatchSampler sampler(a.data, a.patch, model.config().scale, a.seed);
    const PruneReport rep = run_pruning(model, sampler, a.cfg);
    save_srwt(model, a.out);
    if (!a.report.empty()) save_prune_report(rep, a.cfg, a.report);
    std::printf("pruned %s: deep density %.6f (%ld of %ld nonzero)\n", a.model.c_str(),
                rep.density, rep.nonzero_deep, rep.total_deep);
    std::printf("wrote %s%s%s\n", a.out.c_str(), a.report.empty() ? "" : " and ",
                a.report.c_str());
    return 0;
}

struct PlanArgs {
    ModelConfig source;
    double density = 0.0;
    std::string mode = "search";
    std::string out;
};

int cmd_plan(const PlanArgs& a) {
    const CompressionPlan p = plan(a.source, a.density, parse_rounding_mode(a.mode));
    std::printf("source (n_c %ld, n_l %ld, n_b %ld), density %.6f, mode %s\n", a.source.n_c,
                a.source.n_l, a.source.n_b, a.density, rounding_mode_name(p.mode).c_str());
    std::printf("target (n_c %ld, n_l %ld, n_b %ld)%s\n", p.target.n_c, p.target.n_l,
                p.target.n_b, p.clamped_channels ? " [channel floor applied]" : "");
    std::printf("achieved ratio %.6f (power law), %.6f (exact deep counts)\n", p.achieved_ratio,
                p.achieved_exact_ratio);
    if (!a.out.empty()) {
        save_plan(p, a.out);
        std::printf("wrote %s\n", a.out.c_str());
    }
    return 0;
}

struct DistillArgs {
    std::string teacher, student_config, data, out, log;
    KDConfig cfg;
    std::string student_loss = "charbonnier";
    unsigned seed = 0;
    unsigned student_seed = 1;
};

int cmd_distill(const DistillArgs& a) {
    const SRModel teacher = load_srwt(a.teacher);
    const CompressionPlan p = load_plan(a.student_config);
    if (!(p.source == teacher.config()))
        throw std::runtime_error("the plan in " + a.student_config +
                                 " was derived from a different source model than " + a.teacher);
    KDConfig cfg = a.cfg;
    if (a.student_loss == "charbonnier") cfg.student_loss = StudentLoss::Charbonnier;
    else if (a.student_loss == "l1") cfg.student_loss = StudentLoss::L1;
    else throw std::runtime_error("--student-loss must be charbonnier or l1");

    const ModelConfig student_cfg = adjust_peripherals(teacher.config(), p.target);
    SRModel student = SRModel::build(student_cfg, a.student_seed);
    PatchSampler sampler(a.data, cfg.patch, teacher.config().scale, a.seed);
    const TrainRun run = run_distillation(student, teacher, sampler, cfg);
    save_srwt(student, a.out);
    if (!a.log.empty()) save_train_log(run, a.log);

    std::printf("distilled student (n_c %ld, n_l %ld, n_b %ld) for %zu iterations\n",
                student_cfg.n_c, student_cfg.n_l, student_cfg.n_b, run.log.size());
    if (!run.log.empty())
        std::printf("loss: first %.6f, final %.6f\n", run.log.front().total,
                    run.log.back().total);
    std::printf("wrote %s%s%s\n", a.out.c_str(), a.log.empty() ? "" : " and ", a.log.c_str());
    return 0;
}

struct EvalArgs {
    std::string model, hr, out;
    long scale = 2;
    int border = -1;
};

int cmd_eval(const EvalArgs& a) {
    const SRModel model = load_srwt(a.model);
    if (model.config().scale != a.scale)
        throw std::runtime_error("--scale " + std::to_string(a.scale) +
                                 " does not match the model's scale factor of " +
                                 std::to_string(model.config().scale));
    const int border = a.border < 0 ? static_cast<int>(a.scale) : a.border;
    const EvalResult learned = evaluate_model(model, a.hr, border);
    const EvalResult baseline = evaluate_bicubic(a.hr, a.scale, border);
    std::printf("%zu images, border %d\n", learned.images.size(), border);
    std::printf("model:   PSNR %.4f dB, SSIM %.6f\n", learned.mean_psnr, learned.mean_ssim);
    std::printf("bicubic: PSNR %.4f dB, SSIM %.6f\n", baseline.mean_psnr, baseline.mean_ssim);
    if (!a.out.empty()) {
        write_json(ordered_json{{"scale", a.scale},
                                {"border", border},
                                {"images", learned.images.size()},
                                {"model", eval_result_json(learned)},
                                {"bicubic", eval_result_json(baseline)}},
                   a.out);
        std::printf("wrote %s\n", a.out.c_str());
    }
    return 0;
}

int cmd_count(const ModelConfig& cfg) {
    const ParamCount counts = exact_param_count(cfg);
    std::printf("config: n_c=%ld n_l=%ld n_b=%ld kernel=%ld scale=%ld in_channels=%ld\n", cfg.n_c,
                cfg.n_l, cfg.n_b, cfg.kernel, cfg.scale, cfg.in_channels);
    std::printf("exact parameters: shallow %ld, deep %ld, recon %ld, total %ld\n", counts.shallow,
                counts.deep, counts.recon, counts.total);
    std::printf("approximate deep weights (power law): %.0f\n", approx_param_count(cfg));
    const double flops = estimate_flops(cfg, 720, 1280);
    std::printf("forward cost for a 1280x720 output: %.4g GFLOPs (%.4g G multiply-accumulates)\n",
                flops / 1e9, estimate_macs(cfg, 720, 1280) / 1e9);
    return 0;
}

int cmd_run(const std::string& config_path) {
    const RunConfig cfg = load_run_config(config_path);
    std::printf("run %s (id %s)\n", cfg.name.c_str(), workflow_run_id(cfg).c_str());
    const WorkflowReport report = run_workflow(cfg);
    std::printf("deep density after pruning: %.6f\n", report.prune.density);
    std::printf("parameters: teacher %ld -> student %ld (ratio %.4f)\n", report.teacher_params,
                report.student_params, report.achieved_ratio);
    std::printf("held-out means (border %d, %ld images):\n", report.eval_border,
                report.eval_images);
    std::printf("  bicubic  PSNR %.4f dB, SSIM %.6f\n", report.bicubic.mean_psnr,
                report.bicubic.mean_ssim);
    std::printf("  teacher  PSNR %.4f dB, SSIM %.6f\n", report.teacher.mean_psnr,
                report.teacher.mean_ssim);
    std::printf("  student  PSNR %.4f dB, SSIM %.6f\n", report.student.mean_psnr,
                report.student.mean_ssim);
    for (const auto& t : report.timings)
        std::printf("  stage %-8s %8.2fs%s\n", t.stage.c_str(), t.seconds,
                    t.resumed ? " (resumed)" : "");
    std::printf("artifacts in %s\n", cfg.out_dir.string().c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Compact super-resolution workflows: prune, plan, distill, evaluate."};
    app.require_subcommand(1);

    // ---- prune ----
    PruneArgs prune_args;
    CLI::App* prune_cmd =
        app.add_subcommand("prune", "Sparsity-inducing fine-tuning of a model's deep module");
    prune_cmd->add_option("--model", prune_args.model, "input weights (.srwt)")->required();
    prune_cmd->add_option("--data", prune_args.data, "directory of HR training PNGs")->required();
    prune_cmd->add_option("--out", prune_args.out, "output weights (.srwt)")->required();
    prune_cmd->add_option("--report", prune_args.report, "write the density report JSON here");
    prune_cmd->add_option("--lambda", prune_args.cfg.lambda, "L1 penalty weight")
        ->capture_default_str();
    prune_cmd->add_option("--epochs", prune_args.cfg.epochs, "epochs over the dataset")
        ->capture_default_str();
    prune_cmd->add_option("--lr", prune_args.cfg.lr, "learning rate")->capture_default_str();
    prune_cmd
        ->add_option("--switch-point", prune_args.cfg.switch_point,
                     "fraction of steps before the orthant phase")
        ->capture_default_str();
    prune_cmd->add_option("--batch", prune_args.cfg.batch, "batch size")->capture_default_str();
    prune_cmd->add_option("--epsilon", prune_args.cfg.epsilon, "Charbonnier constant")
        ->capture_default_str();
    prune_cmd->add_option("--zero-tol", prune_args.cfg.zero_tol, "zero-counting tolerance")
        ->capture_default_str();
    prune_cmd->add_option("--patch", prune_args.patch, "HR patch size")->capture_default_str();
    prune_cmd->add_option("--seed", prune_args.seed, "patch sampler seed")->capture_default_str();

    // ---- plan ----
    PlanArgs plan_args;
    CLI::App* plan_cmd =
        app.add_subcommand("plan", "Closed-form compression plan from a measured density");
    plan_cmd->add_option("--nc", plan_args.source.n_c, "source feature channels")->required();
    plan_cmd->add_option("--nl", plan_args.source.n_l, "source convs per block")->required();
    plan_cmd->add_option("--nb", plan_args.source.n_b, "source residual blocks")->required();
    plan_cmd->add_option("--density", plan_args.density, "measured deep density in (0, 1]")
        ->required();
    plan_cmd->add_option("--mode", plan_args.mode, "nearest|floor|ceil|search|paper_compat")
        ->capture_default_str();
    plan_cmd->add_option("--kernel", plan_args.source.kernel, "conv kernel side")
        ->capture_default_str();
    plan_cmd->add_option("--scale", plan_args.source.scale, "upscale factor")
        ->capture_default_str();
    plan_cmd->add_option("--in-channels", plan_args.source.in_channels, "image channels")
        ->capture_default_str();
    plan_cmd->add_option("--out", plan_args.out, "write the plan JSON here");

    // ---- distill ----
    DistillArgs distill_args;
    CLI::App* distill_cmd =
        app.add_subcommand("distill", "Train a compact student against a frozen teacher");
    distill_cmd->add_option("--teacher", distill_args.teacher, "teacher weights (.srwt)")
        ->required();
    distill_cmd
        ->add_option("--student-config", distill_args.student_config,
                     "compression plan JSON naming the student architecture")
        ->required();
    distill_cmd->add_option("--data", distill_args.data, "directory of HR training PNGs")
        ->required();
    distill_cmd->add_option("--out", distill_args.out, "output student weights (.srwt)")
        ->required();
    distill_cmd->add_option("--log", distill_args.log, "write the JSONL iteration log here");
    distill_cmd->add_option("--alpha", distill_args.cfg.alpha, "weight of the student loss term")
        ->capture_default_str();
    distill_cmd->add_option("--iters", distill_args.cfg.iterations, "training iterations")
        ->capture_default_str();
    distill_cmd
        ->add_option("--levels", distill_args.cfg.pyramid_levels, "Laplacian pyramid levels")
        ->capture_default_str();
    distill_cmd->add_option("--epsilon", distill_args.cfg.epsilon, "Charbonnier constant")
        ->capture_default_str();
    distill_cmd
        ->add_option("--student-loss", distill_args.student_loss, "charbonnier|l1")
        ->capture_default_str();
    distill_cmd->add_option("--lr", distill_args.cfg.lr, "learning rate")->capture_default_str();
    distill_cmd->add_option("--batch", distill_args.cfg.batch, "batch size")
        ->capture_default_str();
    distill_cmd->add_option("--patch", distill_args.cfg.patch, "HR patch size")
        ->capture_default_str();
    distill_cmd->add_option("--seed", distill_args.seed, "patch sampler seed")
        ->capture_default_str();
    distill_cmd
        ->add_option("--student-seed", distill_args.student_seed, "student initialization seed")
        ->capture_default_str();

    // ---- eval ----
    EvalArgs eval_args;
    CLI::App* eval_cmd =
        app.add_subcommand("eval", "Score a model against bicubic on a directory of HR PNGs");
    eval_cmd->add_option("--model", eval_args.model, "weights (.srwt)")->required();
    eval_cmd->add_option("--hr", eval_args.hr, "directory of HR PNGs")->required();
    eval_cmd->add_option("--scale", eval_args.scale, "upscale factor (must match the model)")
        ->capture_default_str();
    eval_cmd->add_option("--border", eval_args.border, "border crop (default: the scale)");
    eval_cmd->add_option("--out", eval_args.out, "write the metrics JSON here");

    // ---- count ----
    ModelConfig count_cfg;
    CLI::App* count_cmd =
        app.add_subcommand("count", "Parameter and FLOP accounting for a configuration");
    count_cmd->add_option("--nc", count_cfg.n_c, "feature channels")->required();
    count_cmd->add_option("--nl", count_cfg.n_l, "convs per block")->required();
    count_cmd->add_option("--nb", count_cfg.n_b, "residual blocks")->required();
    count_cmd->add_option("--scale", count_cfg.scale, "upscale factor")->capture_default_str();
    count_cmd->add_option("--kernel", count_cfg.kernel, "conv kernel side")
        ->capture_default_str();
    count_cmd->add_option("--in-channels", count_cfg.in_channels, "image channels")
        ->capture_default_str();

    // ---- run ----
    std::string run_config_path;
    CLI::App* run_cmd = app.add_subcommand("run", "Execute the full workflow from a config file");
    run_cmd->add_option("--config", run_config_path, "run configuration file")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (prune_cmd->parsed()) return cmd_prune(prune_args);
        if (plan_cmd->parsed()) return cmd_plan(plan_args);
        if (distill_cmd->parsed()) return cmd_distill(distill_args);
        if (eval_cmd->parsed()) return cmd_eval(eval_args);
        if (count_cmd->parsed()) return cmd_count(count_cfg);
        if (run_cmd->parsed()) return cmd_run(run_config_path);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "srsqueeze: error: %s\n", e.what());
        return 1;
    }
    return 0;
}
