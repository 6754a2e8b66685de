#pragma once

#include <array>
#include <filesystem>
#include <vector>

#include "srsqueeze/image.hpp"
#include "srsqueeze/model.hpp"
#include "srsqueeze/tensor.hpp"

// Stage 3: knowledge distillation. A compact student network is trained to
// match a frozen teacher through a Laplacian-pyramid loss applied both to the
// raw predictions and to their high-frequency components, plus a weighted
// fidelity term against the ground truth.

namespace srsq {

// Which fidelity term ties the student to the ground truth.
enum class StudentLoss { Charbonnier, L1 };

struct KDConfig {
    double alpha = 0.1;      // weight on the student fidelity term
    int pyramid_levels = 5;  // Laplacian pyramid depth; 1 degenerates to plain L1
    double epsilon = 1e-3;   // Charbonnier knee of the fidelity term
    StudentLoss student_loss = StudentLoss::Charbonnier;
    double lr = 1e-4;      // AdaMax learning rate
    long iterations = 1000;
    long batch = 16;
    long patch = 48;  // HR patch side the training sampler must produce

    void validate() const;  // throws std::invalid_argument on bad fields
};

// The scalar loss tensors of one distillation batch. All five are 1-element
// tensors on the active graph; total == alpha * student_term + dis_term and
// dis_term == lap_image + lap_hf by construction.
struct KDLossSet {
    Tensor total;
    Tensor student_term;  // fidelity against the ground truth
    Tensor dis_term;      // lap_image + lap_hf
    Tensor lap_image;     // pyramid loss between the raw predictions
    Tensor lap_hf;        // pyramid loss between their high-frequency maps
};

struct KDBatchOutput {
    Tensor i_stu;  // student prediction
    Tensor i_tea;  // teacher prediction
    Tensor i_gt;   // ground truth
    KDLossSet losses;
};

// One logged training iteration (loss values at double precision).
struct TrainStep {
    long iter = 0;
    double total = 0.0;
    double student_term = 0.0;
    double dis_term = 0.0;
    double lap_image = 0.0;
    double lap_hf = 0.0;
};

struct TrainRun {
    std::vector<TrainStep> log;  // one entry per iteration, in order
};

// The fixed blur kernel: outer product of [1,4,6,4,1]/16 with itself,
// flattened row-major. Every entry is an exact dyadic m/256 and the 25
// entries sum to exactly 1.
const std::array<float, 25>& gaussian_kernel_5x5();

// Per-channel 5x5 blur with reflect padding (output keeps the input shape).
// Differentiable with respect to img; the kernel is a fixed constant.
Tensor gaussian_blur_5x5(const Tensor& img);

// img - gaussian_blur_5x5(img).
Tensor high_freq(const Tensor& img);

// Laplacian-pyramid loss between two same-shaped 4-D tensors. Pyramids use
// blur + drop-every-second-pixel downsampling; level residuals subtract the
// zero-insertion + 4x blur upsampling of the next level. The loss is
//   sum_{j=0}^{levels-2} 2^j * L1(residual_j(a), residual_j(b))
//   + 2^(levels-1)      * L1(lowpass(a), lowpass(b))
// where L1 is the elementwise mean. levels == 1 is plain L1 on the inputs.
// Requires both spatial dims >= 2^(levels-1); the error message names the
// maximum feasible level count for the given shape.
Tensor laplacian_loss(const Tensor& a, const Tensor& b, int levels);

// laplacian_loss(i_stu, i_tea) + laplacian_loss(high_freq(i_stu), high_freq(i_tea)).
// Symmetric in its two image arguments.
Tensor dis_loss(const Tensor& i_stu, const Tensor& i_tea, const KDConfig& cfg);

// alpha * fidelity(i_stu, i_gt) + dis_loss(i_stu, i_tea), with every
// component reported. All three images must share one shape.
KDBatchOutput total_loss(const Tensor& i_stu, const Tensor& i_tea, const Tensor& i_gt,
                         const KDConfig& cfg);

// Trains the student against the frozen teacher with AdaMax for
// cfg.iterations batches drawn from the sampler. The teacher runs without
// gradient recording and is never modified. Returns the per-iteration loss
// log; checkpoint writing is the caller's job. Throws if the teacher and
// student disagree on scale or channels, or if the sampler's patches do not
// match cfg.patch.
TrainRun run_distillation(SRModel& student, const SRModel& teacher, PatchSampler& sampler,
                          const KDConfig& cfg);

// One JSON object per line: iter, total, student_term, dis_term, lap_image,
// lap_hf.
void save_train_log(const TrainRun& run, const std::filesystem::path& path);
TrainRun load_train_log(const std::filesystem::path& path);

}  // namespace srsq
