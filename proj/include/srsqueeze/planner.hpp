#pragma once

#include "srsqueeze/model.hpp"

#include <filesystem>
#include <string>

// Closed-form compression planning: given a source architecture and the
// measured deep-module density d, derive compact hyperparameters so the
// compact deep module's parameter count is approximately d times the
// source's. Depth knobs scale with d^(1/6); the channel width is then solved
// from the parameter balance with the already-rounded depth values:
//
//   n_b_hat            ~ n_b * d^(1/6)
//   (n_l_hat + 1)      ~ (n_l + 1) * d^(1/6)
//   n_c_hat / n_c      = sqrt(d * n_b * (n_l + 1) / (n_b_hat * (n_l_hat + 1)))
//
// With exact real-valued assignments the planned/source ratio under the
// power-law count equals d identically.

namespace srsq {

enum class RoundingMode { Nearest, Floor, Ceil, Search, PaperCompat };

// Real-valued assignments before any rounding.
struct ExactScaling {
    double n_b = 0.0;
    double n_l_plus_1 = 0.0;
    double n_c = 0.0;
};

struct CompressionPlan {
    ModelConfig source;
    double d = 1.0;
    RoundingMode mode = RoundingMode::Search;
    ModelConfig target;
    double achieved_ratio = 1.0;        // power-law deep-count ratio of target vs source
    double achieved_exact_ratio = 1.0;  // exact deep parameter-count ratio
    bool clamped_channels = false;      // channel width hit the floor of 8
};

struct VerificationReport {
    double approx_ratio = 0.0;
    double exact_ratio = 0.0;
    double approx_deviation = 0.0;  // |approx_ratio - d|
    double exact_deviation = 0.0;   // |exact_ratio - d|
};

ExactScaling exact_scaling(const ModelConfig& source, double d);

// Rounding modes: Nearest/Floor/Ceil apply that rule to n_b_hat and
// (n_l_hat + 1); Search tries the floor/ceil combinations of both and keeps
// the candidate whose achieved power-law ratio is closest to d; PaperCompat
// is Search plus an override table for the two published reference plans,
// whose depth choices follow no recoverable closed-form rule.
CompressionPlan plan(const ModelConfig& source, double d,
                     RoundingMode mode = RoundingMode::Search);

// Recomputes the plan's ratios (power-law formula, and exact deep counts of
// freshly built source/target models) and their deviations from d.
VerificationReport verify_plan(const CompressionPlan& plan);

// Propagates the planned core width to the shallow and reconstruction
// modules: they are rebuilt at n_c_hat channels, keeping the source's
// kernel, scale, and image channel count.
ModelConfig adjust_peripherals(const ModelConfig& source, const ModelConfig& target);

std::string rounding_mode_name(RoundingMode mode);
RoundingMode parse_rounding_mode(const std::string& name);

void save_plan(const CompressionPlan& plan, const std::filesystem::path& path);
CompressionPlan load_plan(const std::filesystem::path& path);

}  // namespace srsq
