#pragma once

#include "srsqueeze/image.hpp"
#include "srsqueeze/model.hpp"
#include "srsqueeze/tensor.hpp"

#include <filesystem>
#include <vector>

namespace srsq {

// Stage 1: sparsity-inducing fine-tuning. The objective is
//     mean Charbonnier(sr, gt; epsilon) + lambda * sum_i |theta_i|
// over all trainable parameters, optimized with a two-phase orthant-based
// proximal scheme that produces exact zeros. Density is always reported over
// the deep feature module only.
struct PruneConfig {
    float epsilon = 1e-3f;      // Charbonnier constant
    float lambda = 1e-4f;       // L1 weight; 0 disables the sparsity pressure
    double lr = 1e-4;           // proximal-SGD learning rate
    int epochs = 100;           // one epoch = ceil(images / batch) steps
    double switch_point = 0.5;  // fraction of steps before the orthant phase
    float zero_tol = 0.0f;      // |theta| <= zero_tol counts as zero
    long batch = 16;

    void validate() const;  // throws std::invalid_argument on bad fields
};

struct PruneReport {
    long nonzero_deep = 0;
    long total_deep = 0;
    double density = 0.0;
    // One entry per deep parameter tensor, in deep_parameters() order
    // (diagnostic only; the contractual density is the global one above).
    std::vector<double> per_layer_density;
};

enum class PrunePhase { ProxSG, Orthant };

// sign(x) * max(|x| - threshold, 0); yields exact zeros for |x| <= threshold.
float soft_threshold(float x, double threshold);

// Full objective value (fidelity + L1 penalty) for reporting and tests.
Tensor prune_loss(const Tensor& sr, const Tensor& gt, const std::vector<Tensor>& params,
                  const PruneConfig& cfg);

// One in-place update. `grads` holds the gradients of the smooth (Charbonnier)
// part only and is aligned with `params`; an empty entry means zero gradient.
// ProxSG: theta <- soft_threshold(theta - lr*g, lr*lambda).
// Orthant: theta <- theta - lr*(g + lambda*sign(theta)) for theta != 0, with
// sign flips projected to exactly 0; zero coordinates stay zero.
void obprox_step(const std::vector<Tensor>& params, const std::vector<std::vector<float>>& grads,
                 const PruneConfig& cfg, PrunePhase phase);

// Counts deep-module parameters with |theta| > zero_tol.
PruneReport measure_density(const SRModel& model, float zero_tol = 0.0f);

// Fine-tunes the model in place on batches drawn from `sampler` and returns
// the post-run density report. The sampler's scale must match the model's.
PruneReport run_pruning(SRModel& model, PatchSampler& sampler, const PruneConfig& cfg);

// Writes the report (plus the config that produced it) as JSON.
void save_prune_report(const PruneReport& report, const PruneConfig& cfg,
                       const std::filesystem::path& path);
PruneReport load_prune_report(const std::filesystem::path& path);

}  // namespace srsq
