#include "srsqueeze/pruning.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <stdexcept>

namespace srsq {

void PruneConfig::validate() const {
    if (!(epsilon > 0.0f)) throw std::invalid_argument("epsilon must be positive");
    if (!(lambda >= 0.0f)) throw std::invalid_argument("lambda must be non-negative");
    if (!(lr > 0.0)) throw std::invalid_argument("learning rate must be positive");
    if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
    if (!(switch_point > 0.0 && switch_point < 1.0)) {
        throw std::invalid_argument("switch_point must lie strictly between 0 and 1");
    }
    if (!(zero_tol >= 0.0f)) throw std::invalid_argument("zero_tol must be non-negative");
    if (batch < 1) throw std::invalid_argument("batch must be >= 1");
}

float soft_threshold(float x, double threshold) {
    const double magnitude = std::abs(static_cast<double>(x)) - threshold;
    if (magnitude <= 0.0) return 0.0f;
    return static_cast<float>(x < 0.0f ? -magnitude : magnitude);
}

Tensor prune_loss(const Tensor& sr, const Tensor& gt, const std::vector<Tensor>& params,
                  const PruneConfig& cfg) {
    cfg.validate();
    Tensor loss = charbonnier(sr, gt, cfg.epsilon);
    if (params.empty()) return loss;
    Tensor penalty = l1_norm(params[0]);
    for (std::size_t i = 1; i < params.size(); ++i) {
        penalty = add(penalty, l1_norm(params[i]));
    }
    return add(loss, scale(penalty, cfg.lambda));
}

void obprox_step(const std::vector<Tensor>& params, const std::vector<std::vector<float>>& grads,
                 const PruneConfig& cfg, PrunePhase phase) {
    if (params.size() != grads.size()) {
        throw std::invalid_argument("parameter and gradient lists differ in length");
    }
    const double lr = cfg.lr;
    const double lambda = cfg.lambda;
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor p = params[i];
        const std::span<float> data = p.data();
        if (!grads[i].empty() && grads[i].size() != data.size()) {
            throw std::invalid_argument("gradient size does not match its parameter");
        }
        for (std::size_t j = 0; j < data.size(); ++j) {
            const double g = grads[i].empty() ? 0.0 : static_cast<double>(grads[i][j]);
            const float theta = data[j];
            if (phase == PrunePhase::ProxSG) {
                const double z = static_cast<double>(theta) - lr * g;
                data[j] = soft_threshold(static_cast<float>(z), lr * lambda);
            } else {
                if (theta == 0.0f) continue;  // zeros are frozen in the orthant phase
                const double sign = theta > 0.0f ? 1.0 : -1.0;
                const double moved = static_cast<double>(theta) - lr * (g + lambda * sign);
                const bool flipped = theta > 0.0f ? moved <= 0.0 : moved >= 0.0;
                data[j] = flipped ? 0.0f : static_cast<float>(moved);
            }
        }
    }
}

PruneReport measure_density(const SRModel& model, float zero_tol) {
    if (zero_tol < 0.0f) throw std::invalid_argument("zero_tol must be non-negative");
    PruneReport report;
    for (const Tensor& p : model.deep_parameters()) {
        long nonzero = 0;
        for (float v : p.data()) {
            if (std::abs(v) > zero_tol) ++nonzero;
        }
        report.nonzero_deep += nonzero;
        report.total_deep += p.numel();
        report.per_layer_density.push_back(static_cast<double>(nonzero) / p.numel());
    }
    report.density = report.total_deep > 0
                         ? static_cast<double>(report.nonzero_deep) / report.total_deep
                         : 0.0;
    return report;
}

PruneReport run_pruning(SRModel& model, PatchSampler& sampler, const PruneConfig& cfg) {
    cfg.validate();
    if (sampler.image_count() == 0) throw std::invalid_argument("empty training set");

    const long steps_per_epoch =
        (static_cast<long>(sampler.image_count()) + cfg.batch - 1) / cfg.batch;
    const long total_steps = steps_per_epoch * cfg.epochs;
    const long switch_step = static_cast<long>(cfg.switch_point * total_steps);

    std::vector<Tensor> params = model.parameters();
    const long scale_factor = model.config().scale;

    for (long step = 0; step < total_steps; ++step) {
        TrainBatch batch = sampler.next_batch(cfg.batch);
        if (batch.hr.dim(2) != batch.lr.dim(2) * scale_factor ||
            batch.hr.dim(1) != model.config().in_channels) {
            throw std::invalid_argument("training batches do not match the model's scale/channels");
        }
        for (Tensor& p : params) p.zero_grad();
        const Tensor sr = model.forward(batch.lr);
        Tensor loss = charbonnier(sr, batch.hr, cfg.epsilon);
        backward(loss);

        std::vector<std::vector<float>> grads;
        grads.reserve(params.size());
        for (const Tensor& p : params) {
            const std::span<const float> g = p.grad();
            grads.emplace_back(g.begin(), g.end());
        }
        const PrunePhase phase = step < switch_step ? PrunePhase::ProxSG : PrunePhase::Orthant;
        obprox_step(params, grads, cfg, phase);
        clear_tape();
    }
    return measure_density(model, cfg.zero_tol);
}

void save_prune_report(const PruneReport& report, const PruneConfig& cfg,
                       const std::filesystem::path& path) {
    nlohmann::json j{
        {"nonzero_deep", report.nonzero_deep},
        {"total_deep", report.total_deep},
        {"density", report.density},
        {"per_layer_density", report.per_layer_density},
        {"config",
         {{"epsilon", cfg.epsilon},
          {"lambda", cfg.lambda},
          {"lr", cfg.lr},
          {"epochs", cfg.epochs},
          {"switch_point", cfg.switch_point},
          {"zero_tol", cfg.zero_tol},
          {"batch", cfg.batch}}},
    };
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

PruneReport load_prune_report(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    try {
        const nlohmann::json j = nlohmann::json::parse(in);
        PruneReport report;
        report.nonzero_deep = j.at("nonzero_deep").get<long>();
        report.total_deep = j.at("total_deep").get<long>();
        report.density = j.at("density").get<double>();
        report.per_layer_density = j.at("per_layer_density").get<std::vector<double>>();
        return report;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(path.string() + " is not a valid prune report: " + e.what());
    }
}

}  // namespace srsq
