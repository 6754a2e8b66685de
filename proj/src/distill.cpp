#include "srsqueeze/distill.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>

#include "srsqueeze/optim.hpp"

namespace srsq {

namespace {

Tensor blur_kernel() {
    const std::array<float, 25>& k = gaussian_kernel_5x5();
    return Tensor::from_data(std::vector<float>(k.begin(), k.end()), {5, 5});
}

// Next pyramid level: blur, then keep every second pixel.
Tensor pyramid_down(const Tensor& x) { return downsample2(gaussian_blur_5x5(x)); }

// Approximate inverse: zero-insertion to the target size, then blur scaled by
// 4 to restore the mean level the inserted zeros diluted.
Tensor pyramid_up(const Tensor& x, long out_h, long out_w) {
    return scale(gaussian_blur_5x5(upsample_zero2(x, out_h, out_w)), 4.0);
}

// Gaussian levels g0..g_{levels-1} of one image.
std::vector<Tensor> gaussian_pyramid(const Tensor& x, int levels) {
    std::vector<Tensor> g;
    g.reserve(static_cast<std::size_t>(levels));
    g.push_back(x);
    for (int k = 1; k < levels; ++k) g.push_back(pyramid_down(g.back()));
    return g;
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* fn) {
    if (a.shape() != b.shape()) {
        throw std::invalid_argument(std::string(fn) + ": shapes " + shape_str(a.shape()) +
                                    " and " + shape_str(b.shape()) + " differ");
    }
}

int max_feasible_levels(long h, long w) {
    const long m = std::min(h, w);
    int levels = 1;
    while ((2L << (levels - 1)) <= m) ++levels;  // grow while 2^levels <= m
    return levels;
}

}  // namespace

void KDConfig::validate() const {
    if (!(alpha >= 0.0)) throw std::invalid_argument("KDConfig: alpha must be >= 0");
    if (pyramid_levels < 1) throw std::invalid_argument("KDConfig: pyramid_levels must be >= 1");
    if (!(epsilon > 0.0)) throw std::invalid_argument("KDConfig: epsilon must be > 0");
    if (!(lr > 0.0)) throw std::invalid_argument("KDConfig: lr must be > 0");
    if (iterations < 1) throw std::invalid_argument("KDConfig: iterations must be >= 1");
    if (batch < 1) throw std::invalid_argument("KDConfig: batch must be >= 1");
    if (patch < 1) throw std::invalid_argument("KDConfig: patch must be >= 1");
}

const std::array<float, 25>& gaussian_kernel_5x5() {
    static const std::array<float, 25> kernel = [] {
        const float base[5] = {1.0f / 16.0f, 4.0f / 16.0f, 6.0f / 16.0f, 4.0f / 16.0f,
                               1.0f / 16.0f};
        std::array<float, 25> k{};
        for (int y = 0; y < 5; ++y) {
            for (int x = 0; x < 5; ++x) k[y * 5 + x] = base[y] * base[x];
        }
        return k;
    }();
    return kernel;
}

Tensor gaussian_blur_5x5(const Tensor& img) {
    if (!img.defined() || img.rank() != 4) {
        throw std::invalid_argument("gaussian_blur_5x5: expected a 4-D image tensor");
    }
    return depthwise_conv2d(reflect_pad2d(img, 2), blur_kernel());
}

Tensor high_freq(const Tensor& img) { return sub(img, gaussian_blur_5x5(img)); }

Tensor laplacian_loss(const Tensor& a, const Tensor& b, int levels) {
    if (!a.defined() || !b.defined() || a.rank() != 4) {
        throw std::invalid_argument("laplacian_loss: expected 4-D image tensors");
    }
    check_same_shape(a, b, "laplacian_loss");
    if (levels < 1) throw std::invalid_argument("laplacian_loss: levels must be >= 1");
    const long h = a.dim(2), w = a.dim(3);
    const long need = 1L << (levels - 1);
    if (h < need || w < need) {
        throw std::invalid_argument(
            "laplacian_loss: " + std::to_string(levels) + " levels need spatial dims >= " +
            std::to_string(need) + ", got " + std::to_string(h) + "x" + std::to_string(w) +
            " (maximum feasible levels: " + std::to_string(max_feasible_levels(h, w)) + ")");
    }

    const std::vector<Tensor> ga = gaussian_pyramid(a, levels);
    const std::vector<Tensor> gb = gaussian_pyramid(b, levels);

    Tensor loss;
    for (int j = 0; j + 1 < levels; ++j) {
        const long lh = ga[j].dim(2), lw = ga[j].dim(3);
        const Tensor ra = sub(ga[j], pyramid_up(ga[j + 1], lh, lw));
        const Tensor rb = sub(gb[j], pyramid_up(gb[j + 1], lh, lw));
        const Tensor term = scale(l1_loss(ra, rb), static_cast<double>(1L << j));
        loss = loss.defined() ? add(loss, term) : term;
    }
    const Tensor base = scale(l1_loss(ga[levels - 1], gb[levels - 1]),
                              static_cast<double>(1L << (levels - 1)));
    return loss.defined() ? add(loss, base) : base;
}

Tensor dis_loss(const Tensor& i_stu, const Tensor& i_tea, const KDConfig& cfg) {
    if (cfg.pyramid_levels < 1) {
        throw std::invalid_argument("dis_loss: pyramid_levels must be >= 1");
    }
    return add(laplacian_loss(i_stu, i_tea, cfg.pyramid_levels),
               laplacian_loss(high_freq(i_stu), high_freq(i_tea), cfg.pyramid_levels));
}

KDBatchOutput total_loss(const Tensor& i_stu, const Tensor& i_tea, const Tensor& i_gt,
                         const KDConfig& cfg) {
    if (!(cfg.alpha >= 0.0)) throw std::invalid_argument("total_loss: alpha must be >= 0");
    check_same_shape(i_stu, i_tea, "total_loss");
    check_same_shape(i_stu, i_gt, "total_loss");

    KDBatchOutput out;
    out.i_stu = i_stu;
    out.i_tea = i_tea;
    out.i_gt = i_gt;
    out.losses.student_term = cfg.student_loss == StudentLoss::Charbonnier
                                  ? charbonnier(i_stu, i_gt, cfg.epsilon)
                                  : l1_loss(i_stu, i_gt);
    out.losses.lap_image = laplacian_loss(i_stu, i_tea, cfg.pyramid_levels);
    out.losses.lap_hf = laplacian_loss(high_freq(i_stu), high_freq(i_tea), cfg.pyramid_levels);
    out.losses.dis_term = add(out.losses.lap_image, out.losses.lap_hf);
    out.losses.total =
        add(scale(out.losses.student_term, cfg.alpha), out.losses.dis_term);
    return out;
}

TrainRun run_distillation(SRModel& student, const SRModel& teacher, PatchSampler& sampler,
                          const KDConfig& cfg) {
    cfg.validate();
    if (student.config().scale != teacher.config().scale) {
        throw std::invalid_argument(
            "run_distillation: teacher (x" + std::to_string(teacher.config().scale) +
            ") and student (x" + std::to_string(student.config().scale) +
            ") disagree on scale");
    }
    if (student.config().in_channels != teacher.config().in_channels) {
        throw std::invalid_argument("run_distillation: teacher and student disagree on channels");
    }
    if (sampler.image_count() == 0) throw std::invalid_argument("empty training set");

    Adamax opt(student.parameters(), cfg.lr);
    const long scale_factor = student.config().scale;
    TrainRun run;
    run.log.reserve(static_cast<std::size_t>(cfg.iterations));

    for (long it = 0; it < cfg.iterations; ++it) {
        const TrainBatch batch = sampler.next_batch(cfg.batch);
        if (batch.hr.dim(2) != cfg.patch) {
            throw std::invalid_argument("run_distillation: sampler produces " +
                                        std::to_string(batch.hr.dim(2)) + "-pixel patches but the"
                                        " config asks for " + std::to_string(cfg.patch));
        }
        if (batch.hr.dim(2) != batch.lr.dim(2) * scale_factor ||
            batch.hr.dim(1) != student.config().in_channels) {
            throw std::invalid_argument(
                "run_distillation: training batches do not match the model's scale/channels");
        }

        Tensor i_tea;
        {
            NoGradGuard frozen;
            i_tea = teacher.forward(batch.lr);
        }
        opt.zero_grad();
        const Tensor i_stu = student.forward(batch.lr);
        const KDBatchOutput out = total_loss(i_stu, i_tea, batch.hr, cfg);
        backward(out.losses.total);
        opt.step();
        run.log.push_back({it, out.losses.total.item_double(),
                           out.losses.student_term.item_double(),
                           out.losses.dis_term.item_double(), out.losses.lap_image.item_double(),
                           out.losses.lap_hf.item_double()});
        clear_tape();
    }
    return run;
}

void save_train_log(const TrainRun& run, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write training log " + path.string());
    for (const TrainStep& s : run.log) {
        nlohmann::ordered_json j{{"iter", s.iter},
                                 {"total", s.total},
                                 {"student_term", s.student_term},
                                 {"dis_term", s.dis_term},
                                 {"lap_image", s.lap_image},
                                 {"lap_hf", s.lap_hf}};
        out << j.dump() << '\n';
    }
    if (!out) throw std::runtime_error("failed while writing training log " + path.string());
}

TrainRun load_train_log(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open training log " + path.string());
    TrainRun run;
    std::string line;
    long line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            const nlohmann::json j = nlohmann::json::parse(line);
            run.log.push_back({j.at("iter").get<long>(), j.at("total").get<double>(),
                               j.at("student_term").get<double>(), j.at("dis_term").get<double>(),
                               j.at("lap_image").get<double>(), j.at("lap_hf").get<double>()});
        } catch (const nlohmann::json::exception&) {
            throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                                     ": not a valid training-log line");
        }
    }
    return run;
}

}  // namespace srsq
