#include "srsqueeze/pipeline.hpp"

#include "srsqueeze/optim.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <variant>

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace srsq {

namespace {

// ---------------------------------------------------------------------------
// Config file parsing: a TOML-style subset. [section] headers, key = value
// lines, full-line or trailing # comments. Values are double-quoted strings
// (no escape sequences), integers, floats, or true/false.

struct ConfigValue {
    enum class Kind { String, Integer, Float, Boolean };
    Kind kind = Kind::String;
    std::string str;
    long long integer = 0;
    double number = 0.0;
    bool boolean = false;
    int line = 0;
    mutable bool used = false;
};

[[noreturn]] void config_error(int line, const std::string& message) {
    throw std::runtime_error("run config line " + std::to_string(line) + ": " + message);
}

std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

bool valid_bare_key(const std::string& s) {
    if (s.empty()) return false;
    for (char c : s) {
        if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_') return false;
    }
    return true;
}

bool looks_like_integer(const std::string& s) {
    std::size_t i = (s[0] == '+' || s[0] == '-') ? 1 : 0;
    if (i == s.size()) return false;
    for (; i < s.size(); ++i) {
        if (!std::isdigit(static_cast<unsigned char>(s[i]))) return false;
    }
    return true;
}

ConfigValue parse_value(const std::string& text, int line) {
    ConfigValue v;
    v.line = line;
    if (text.front() == '"') {
        if (text.size() < 2 || text.back() != '"') config_error(line, "unterminated string");
        const std::string inner = text.substr(1, text.size() - 2);
        if (inner.find('"') != std::string::npos)
            config_error(line, "embedded quotes are not supported in strings");
        v.kind = ConfigValue::Kind::String;
        v.str = inner;
        return v;
    }
    if (text == "true" || text == "false") {
        v.kind = ConfigValue::Kind::Boolean;
        v.boolean = (text == "true");
        return v;
    }
    if (looks_like_integer(text)) {
        try {
            std::size_t pos = 0;
            v.integer = std::stoll(text, &pos);
            if (pos != text.size()) throw std::invalid_argument("");
        } catch (const std::exception&) {
            config_error(line, "integer out of range: " + text);
        }
        v.kind = ConfigValue::Kind::Integer;
        v.number = static_cast<double>(v.integer);
        return v;
    }
    try {
        std::size_t pos = 0;
        v.number = std::stod(text, &pos);
        if (pos != text.size()) throw std::invalid_argument("");
    } catch (const std::exception&) {
        config_error(line, "cannot parse value: " + text);
    }
    v.kind = ConfigValue::Kind::Float;
    return v;
}

// Strips a trailing comment, respecting quoted strings.
std::string strip_comment(const std::string& line) {
    bool in_string = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        if (line[i] == '"') in_string = !in_string;
        else if (line[i] == '#' && !in_string) return line.substr(0, i);
    }
    return line;
}

class ConfigTree {
public:
    explicit ConfigTree(const std::string& text) {
        std::istringstream stream(text);
        std::string raw;
        int lineno = 0;
        std::string section;
        while (std::getline(stream, raw)) {
            ++lineno;
            const std::string line = trim(strip_comment(raw));
            if (line.empty()) continue;
            if (line.front() == '[') {
                if (line.back() != ']') config_error(lineno, "unterminated section header");
                section = trim(line.substr(1, line.size() - 2));
                if (!valid_bare_key(section))
                    config_error(lineno, "invalid section name: [" + section + "]");
                continue;
            }
            const auto eq = line.find('=');
            if (eq == std::string::npos) config_error(lineno, "expected key = value");
            const std::string key = trim(line.substr(0, eq));
            if (!valid_bare_key(key)) config_error(lineno, "invalid key: " + key);
            const std::string value_text = trim(line.substr(eq + 1));
            if (value_text.empty()) config_error(lineno, "missing value for key: " + key);
            const std::string full = section.empty() ? key : section + "." + key;
            if (values_.count(full))
                config_error(lineno, "duplicate key: " + full);
            values_.emplace(full, parse_value(value_text, lineno));
        }
    }

    bool has(const std::string& key) const { return values_.count(key) != 0; }

    std::string get_string(const std::string& key, const std::string& fallback) const {
        const ConfigValue* v = find(key);
        if (!v) return fallback;
        if (v->kind != ConfigValue::Kind::String)
            config_error(v->line, "expected a quoted string for " + key);
        return v->str;
    }

    std::string require_string(const std::string& key) const {
        const ConfigValue* v = find(key);
        if (!v) throw std::runtime_error("run config: missing required key " + key);
        if (v->kind != ConfigValue::Kind::String)
            config_error(v->line, "expected a quoted string for " + key);
        return v->str;
    }

    long long get_integer(const std::string& key, long long fallback) const {
        const ConfigValue* v = find(key);
        if (!v) return fallback;
        if (v->kind != ConfigValue::Kind::Integer)
            config_error(v->line, "expected an integer for " + key);
        return v->integer;
    }

    double get_number(const std::string& key, double fallback) const {
        const ConfigValue* v = find(key);
        if (!v) return fallback;
        if (v->kind != ConfigValue::Kind::Integer && v->kind != ConfigValue::Kind::Float)
            config_error(v->line, "expected a number for " + key);
        return v->number;
    }

    void reject_unused() const {
        for (const auto& [key, value] : values_) {
            if (!value.used)
                config_error(value.line, "unknown key: " + key);
        }
    }

private:
    const ConfigValue* find(const std::string& key) const {
        auto it = values_.find(key);
        if (it == values_.end()) return nullptr;
        it->second.used = true;
        return &it->second;
    }

    std::map<std::string, ConfigValue> values_;
};

fs::path resolve_path(const std::string& value, const fs::path& base_dir) {
    fs::path p(value);
    if (!p.is_absolute()) p = base_dir / p;
    return p.lexically_normal();
}

// ---------------------------------------------------------------------------
// JSON helpers shared by the artifact writers.

ordered_json config_json(const ModelConfig& cfg) {
    return ordered_json{{"n_c", cfg.n_c},     {"n_l", cfg.n_l},
                        {"n_b", cfg.n_b},     {"kernel", cfg.kernel},
                        {"scale", cfg.scale}, {"in_channels", cfg.in_channels}};
}

// PSNR is +infinity for identical inputs and JSON has no literal for that,
// so infinities are stored as the string "inf".
ordered_json psnr_json(double v) {
    if (std::isinf(v)) return ordered_json(v > 0 ? "inf" : "-inf");
    return ordered_json(v);
}

double psnr_from_json(const ordered_json& j) {
    if (j.is_string()) {
        const std::string s = j.get<std::string>();
        if (s == "inf") return std::numeric_limits<double>::infinity();
        if (s == "-inf") return -std::numeric_limits<double>::infinity();
        throw std::runtime_error("metrics: unrecognized PSNR value: " + s);
    }
    return j.get<double>();
}

ordered_json eval_json(const EvalResult& r) {
    ordered_json per = ordered_json::array();
    for (const auto& img : r.images) {
        per.push_back(ordered_json{
            {"name", img.name}, {"psnr", psnr_json(img.psnr)}, {"ssim", img.ssim}});
    }
    return ordered_json{{"mean_psnr", psnr_json(r.mean_psnr)},
                        {"mean_ssim", r.mean_ssim},
                        {"per_image", std::move(per)}};
}

EvalResult eval_from_json(const ordered_json& j, int border) {
    EvalResult r;
    r.border = border;
    r.mean_psnr = psnr_from_json(j.at("mean_psnr"));
    r.mean_ssim = j.at("mean_ssim").get<double>();
    for (const auto& img : j.at("per_image")) {
        r.images.push_back({img.at("name").get<std::string>(), psnr_from_json(img.at("psnr")),
                            img.at("ssim").get<double>()});
    }
    return r;
}

void write_text_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
    if (!out) throw std::runtime_error("failed writing " + path.string());
}

ordered_json read_json_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    try {
        return ordered_json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(path.string() + ": invalid JSON: " + e.what());
    }
}

struct EvalBundle {
    int border = 0;
    long images = 0;
    EvalResult bicubic;
    EvalResult teacher;
    EvalResult student;
};

void save_metrics(const EvalBundle& m, const fs::path& path) {
    ordered_json j{{"border", m.border},
                   {"images", m.images},
                   {"bicubic", eval_json(m.bicubic)},
                   {"teacher", eval_json(m.teacher)},
                   {"student", eval_json(m.student)}};
    write_text_file(path, j.dump(2) + "\n");
}

EvalBundle load_metrics(const fs::path& path) {
    const ordered_json j = read_json_file(path);
    EvalBundle m;
    m.border = j.at("border").get<int>();
    m.images = j.at("images").get<long>();
    m.bicubic = eval_from_json(j.at("bicubic"), m.border);
    m.teacher = eval_from_json(j.at("teacher"), m.border);
    m.student = eval_from_json(j.at("student"), m.border);
    return m;
}

// ---------------------------------------------------------------------------
// Evaluation helpers.

ImageBuffer crop_image(const ImageBuffer& img, long top, long left, long h, long w) {
    ImageBuffer out = ImageBuffer::create(h, w, img.channels);
    for (long y = 0; y < h; ++y)
        for (long x = 0; x < w; ++x)
            for (long c = 0; c < img.channels; ++c)
                out.at(y, x, c) = img.at(top + y, left + x, c);
    return out;
}

std::vector<fs::path> list_pngs(const fs::path& dir) {
    if (!fs::is_directory(dir))
        throw std::runtime_error("not a directory: " + dir.string());
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.is_regular_file() && entry.path().extension() == ".png")
            files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end(),
              [](const fs::path& a, const fs::path& b) { return a.filename() < b.filename(); });
    if (files.empty()) throw std::runtime_error("no PNG images in " + dir.string());
    return files;
}

// Shared scoring loop: `restore` maps the LR image to the SR candidate.
template <typename Restore>
EvalResult evaluate_with(const fs::path& hr_dir, long scale, int border, Restore&& restore) {
    if (scale < 1) throw std::invalid_argument("evaluate: scale must be positive");
    if (border < 0) throw std::invalid_argument("evaluate: border must be >= 0");
    EvalResult result;
    result.border = border;
    for (const fs::path& file : list_pngs(hr_dir)) {
        const ImageBuffer full = load_png(file);
        const long h = full.height - full.height % scale;
        const long w = full.width - full.width % scale;
        if (h < scale || w < scale)
            throw std::runtime_error("evaluate: image smaller than the scale factor: " +
                                     file.filename().string());
        const ImageBuffer hr = crop_image(full, 0, 0, h, w);
        const ImageBuffer lr = bicubic_resize(hr, 1.0 / static_cast<double>(scale));
        const ImageBuffer sr = restore(lr);
        if (sr.height != h || sr.width != w)
            throw std::runtime_error("evaluate: restored size mismatch for " +
                                     file.filename().string());
        const double p = psnr(sr, hr, border);
        const ImageBuffer sr_shaved = crop_image(sr, border, border, h - 2 * border, w - 2 * border);
        const ImageBuffer hr_shaved = crop_image(hr, border, border, h - 2 * border, w - 2 * border);
        const double s = ssim(sr_shaved, hr_shaved);
        result.images.push_back({file.filename().string(), p, s});
    }
    for (const auto& img : result.images) {
        result.mean_psnr += img.psnr;
        result.mean_ssim += img.ssim;
    }
    result.mean_psnr /= static_cast<double>(result.images.size());
    result.mean_ssim /= static_cast<double>(result.images.size());
    return result;
}

// ---------------------------------------------------------------------------
// Workflow stage plumbing.

double seconds_since(const std::chrono::steady_clock::time_point& start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

[[noreturn]] void stage_failure(const std::string& stage, const std::exception& e) {
    throw std::runtime_error("stage " + stage + " failed: " + e.what());
}

void check_artifact_config(const SRModel& model, const ModelConfig& expected,
                           const fs::path& path) {
    if (!(model.config() == expected))
        throw std::runtime_error(
            path.filename().string() +
            " was built from a different configuration; delete stale artifacts or "
            "change out_dir");
}

}  // namespace

// ---------------------------------------------------------------------------
// RunConfig

void RunConfig::validate() const {
    if (name.empty()) throw std::invalid_argument("run config: name must not be empty");
    if (data_dir.empty()) throw std::invalid_argument("run config: data_dir must be set");
    if (out_dir.empty()) throw std::invalid_argument("run config: out_dir must be set");
    teacher.validate();
    if (teacher.scale != scale)
        throw std::invalid_argument("run config: scale and the teacher's scale disagree");
    if (pretrain_iters < 0)
        throw std::invalid_argument("run config: pretrain_iters must be >= 0");
    if (pretrain_batch < 1)
        throw std::invalid_argument("run config: pretrain_batch must be >= 1");
    if (!(pretrain_lr > 0.0))
        throw std::invalid_argument("run config: pretrain_lr must be positive");
    if (pretrain_patch < scale || pretrain_patch % scale != 0)
        throw std::invalid_argument(
            "run config: pretrain_patch must be a positive multiple of the scale");
    prune.validate();
    if (prune_patch < scale || prune_patch % scale != 0)
        throw std::invalid_argument(
            "run config: prune patch must be a positive multiple of the scale");
    kd.validate();
    if (kd.patch < scale || kd.patch % scale != 0)
        throw std::invalid_argument(
            "run config: distill patch must be a positive multiple of the scale");
    if (eval_border < -1)
        throw std::invalid_argument("run config: eval border must be >= 0 (or -1 for the scale)");
}

RunConfig parse_run_config(const std::string& text, const fs::path& base_dir) {
    const ConfigTree tree(text);
    RunConfig cfg;

    cfg.name = tree.get_string("run.name", cfg.name);
    const long long seed = tree.get_integer("run.seed", 0);
    if (seed < 0 || seed > std::numeric_limits<unsigned>::max())
        throw std::runtime_error("run config: seed must fit an unsigned 32-bit integer");
    cfg.seed = static_cast<unsigned>(seed);
    cfg.scale = tree.get_integer("run.scale", cfg.scale);
    cfg.data_dir = resolve_path(tree.require_string("run.data_dir"), base_dir);
    cfg.eval_dir = tree.has("run.eval_dir")
                       ? resolve_path(tree.require_string("run.eval_dir"), base_dir)
                       : cfg.data_dir;
    cfg.out_dir = resolve_path(tree.require_string("run.out_dir"), base_dir);

    cfg.teacher.n_c = tree.get_integer("teacher.n_c", cfg.teacher.n_c);
    cfg.teacher.n_l = tree.get_integer("teacher.n_l", cfg.teacher.n_l);
    cfg.teacher.n_b = tree.get_integer("teacher.n_b", cfg.teacher.n_b);
    cfg.teacher.kernel = tree.get_integer("teacher.kernel", cfg.teacher.kernel);
    cfg.teacher.in_channels = tree.get_integer("teacher.in_channels", cfg.teacher.in_channels);
    cfg.teacher.scale = cfg.scale;
    cfg.pretrain_iters = tree.get_integer("teacher.pretrain_iters", cfg.pretrain_iters);
    cfg.pretrain_batch = tree.get_integer("teacher.pretrain_batch", cfg.pretrain_batch);
    cfg.pretrain_lr = tree.get_number("teacher.pretrain_lr", cfg.pretrain_lr);
    cfg.pretrain_patch = tree.get_integer("teacher.pretrain_patch", cfg.pretrain_patch);

    cfg.prune.lambda = static_cast<float>(tree.get_number("prune.lambda", cfg.prune.lambda));
    cfg.prune.lr = tree.get_number("prune.lr", cfg.prune.lr);
    cfg.prune.epochs = static_cast<int>(tree.get_integer("prune.epochs", cfg.prune.epochs));
    cfg.prune.switch_point = tree.get_number("prune.switch_point", cfg.prune.switch_point);
    cfg.prune.batch = tree.get_integer("prune.batch", cfg.prune.batch);
    cfg.prune.epsilon = static_cast<float>(tree.get_number("prune.epsilon", cfg.prune.epsilon));
    cfg.prune.zero_tol = static_cast<float>(tree.get_number("prune.zero_tol", cfg.prune.zero_tol));
    cfg.prune_patch = tree.get_integer("prune.patch", cfg.prune_patch);

    cfg.plan_mode = parse_rounding_mode(
        tree.get_string("plan.mode", rounding_mode_name(cfg.plan_mode)));

    cfg.kd.alpha = tree.get_number("distill.alpha", cfg.kd.alpha);
    cfg.kd.pyramid_levels =
        static_cast<int>(tree.get_integer("distill.pyramid_levels", cfg.kd.pyramid_levels));
    cfg.kd.epsilon = tree.get_number("distill.epsilon", cfg.kd.epsilon);
    cfg.kd.lr = tree.get_number("distill.lr", cfg.kd.lr);
    cfg.kd.iterations = tree.get_integer("distill.iterations", cfg.kd.iterations);
    cfg.kd.batch = tree.get_integer("distill.batch", cfg.kd.batch);
    cfg.kd.patch = tree.get_integer("distill.patch", cfg.kd.patch);
    const std::string loss = tree.get_string("distill.student_loss", "charbonnier");
    if (loss == "charbonnier") cfg.kd.student_loss = StudentLoss::Charbonnier;
    else if (loss == "l1") cfg.kd.student_loss = StudentLoss::L1;
    else throw std::runtime_error("run config: student_loss must be charbonnier or l1, got " + loss);

    cfg.eval_border = tree.get_integer("eval.border", cfg.eval_border);

    tree.reject_unused();
    cfg.validate();
    return cfg;
}

RunConfig load_run_config(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open run config: " + path.string());
    std::ostringstream buffer;
    buffer << in.rdbuf();
    // Anchor at the config file's directory, absolutized so the snapshot (and
    // with it the run id) names the same physical locations no matter which
    // working directory the file was loaded from.
    return parse_run_config(buffer.str(), fs::absolute(path).parent_path());
}

std::string run_config_snapshot(const RunConfig& cfg) {
    ordered_json j;
    j["run"] = ordered_json{{"name", cfg.name},
                            {"seed", cfg.seed},
                            {"scale", cfg.scale},
                            {"data_dir", cfg.data_dir.generic_string()},
                            {"eval_dir", cfg.eval_dir.generic_string()},
                            {"out_dir", cfg.out_dir.generic_string()}};
    j["teacher"] = ordered_json{{"n_c", cfg.teacher.n_c},
                                {"n_l", cfg.teacher.n_l},
                                {"n_b", cfg.teacher.n_b},
                                {"kernel", cfg.teacher.kernel},
                                {"in_channels", cfg.teacher.in_channels},
                                {"pretrain_iters", cfg.pretrain_iters},
                                {"pretrain_batch", cfg.pretrain_batch},
                                {"pretrain_lr", cfg.pretrain_lr},
                                {"pretrain_patch", cfg.pretrain_patch}};
    j["prune"] = ordered_json{{"lambda", cfg.prune.lambda},
                              {"lr", cfg.prune.lr},
                              {"epochs", cfg.prune.epochs},
                              {"switch_point", cfg.prune.switch_point},
                              {"batch", cfg.prune.batch},
                              {"patch", cfg.prune_patch},
                              {"epsilon", cfg.prune.epsilon},
                              {"zero_tol", cfg.prune.zero_tol}};
    j["plan"] = ordered_json{{"mode", rounding_mode_name(cfg.plan_mode)}};
    j["distill"] =
        ordered_json{{"alpha", cfg.kd.alpha},
                     {"pyramid_levels", cfg.kd.pyramid_levels},
                     {"epsilon", cfg.kd.epsilon},
                     {"lr", cfg.kd.lr},
                     {"iterations", cfg.kd.iterations},
                     {"batch", cfg.kd.batch},
                     {"patch", cfg.kd.patch},
                     {"student_loss",
                      cfg.kd.student_loss == StudentLoss::Charbonnier ? "charbonnier" : "l1"}};
    j["eval"] = ordered_json{{"border", cfg.eval_border}};
    return j.dump();
}

std::string workflow_run_id(const RunConfig& cfg) {
    const std::string snapshot = run_config_snapshot(cfg);
    std::uint64_t hash = 14695981039346656037ULL;
    for (unsigned char c : snapshot) {
        hash ^= c;
        hash *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(hash));
    return std::string(buf);
}

// ---------------------------------------------------------------------------
// Pretraining

SRModel pretrain(const ModelConfig& config, PatchSampler& sampler, long iterations, long batch,
                 double lr, unsigned seed) {
    config.validate();
    if (iterations < 0) throw std::invalid_argument("pretrain: iterations must be >= 0");
    if (batch < 1) throw std::invalid_argument("pretrain: batch must be >= 1");
    if (!(lr > 0.0)) throw std::invalid_argument("pretrain: lr must be positive");

    SRModel model = SRModel::build(config, seed);
    if (iterations == 0) return model;

    Adamax opt(model.parameters(), lr);
    for (long it = 0; it < iterations; ++it) {
        const TrainBatch data = sampler.next_batch(batch);
        if (data.lr.shape()[1] != config.in_channels)
            throw std::invalid_argument("pretrain: sampler images have " +
                                        std::to_string(data.lr.shape()[1]) +
                                        " channels but the model expects " +
                                        std::to_string(config.in_channels));
        if (data.hr.shape()[2] != data.lr.shape()[2] * config.scale)
            throw std::invalid_argument(
                "pretrain: the sampler's scale does not match the model's scale factor of " +
                std::to_string(config.scale));
        opt.zero_grad();
        Tensor sr = model.forward(data.lr);
        Tensor loss = charbonnier(sr, data.hr, 1e-3);
        backward(loss);
        opt.step();
        clear_tape();
    }
    return model;
}

// ---------------------------------------------------------------------------
// Evaluation

EvalResult evaluate_model(const SRModel& model, const fs::path& hr_dir, int border) {
    const long scale = model.config().scale;
    return evaluate_with(hr_dir, scale, border, [&](const ImageBuffer& lr) {
        NoGradGuard guard;
        Tensor out = model.forward(image_to_tensor(lr));
        return tensor_to_image(out);
    });
}

EvalResult evaluate_bicubic(const fs::path& hr_dir, long scale, int border) {
    return evaluate_with(hr_dir, scale, border, [&](const ImageBuffer& lr) {
        return bicubic_resize(lr, static_cast<double>(scale));
    });
}

// ---------------------------------------------------------------------------
// Workflow

WorkflowReport run_workflow(const RunConfig& cfg) {
    cfg.validate();
    fs::create_directories(cfg.out_dir);

    const fs::path teacher_path = cfg.out_dir / "teacher.srwt";
    const fs::path pruned_path = cfg.out_dir / "pruned.srwt";
    const fs::path prune_report_path = cfg.out_dir / "prune_report.json";
    const fs::path plan_path = cfg.out_dir / "plan.json";
    const fs::path student_path = cfg.out_dir / "student.srwt";
    const fs::path distill_log_path = cfg.out_dir / "distill_log.jsonl";
    const fs::path metrics_path = cfg.out_dir / "metrics.json";
    const fs::path report_path = cfg.out_dir / "report.json";
    const fs::path timings_path = cfg.out_dir / "timings.json";

    WorkflowReport report;
    report.run_id = workflow_run_id(cfg);
    report.config_snapshot = run_config_snapshot(cfg);

    // Stage 1: pretrain the teacher (or adopt an existing checkpoint).
    SRModel teacher;
    {
        const auto start = std::chrono::steady_clock::now();
        const bool resumed = fs::exists(teacher_path);
        try {
            if (!resumed) {
                PatchSampler sampler(cfg.data_dir, cfg.pretrain_patch, cfg.scale, cfg.seed + 1);
                SRModel fresh = pretrain(cfg.teacher, sampler, cfg.pretrain_iters,
                                         cfg.pretrain_batch, cfg.pretrain_lr, cfg.seed);
                save_srwt(fresh, teacher_path);
            }
            teacher = load_srwt(teacher_path);
            check_artifact_config(teacher, cfg.teacher, teacher_path);
        } catch (const std::exception& e) {
            stage_failure("pretrain", e);
        }
        report.timings.push_back({"pretrain", seconds_since(start), resumed});
    }

    // Stage 2: sparsity-inducing fine-tuning on a copy of the teacher.
    {
        const auto start = std::chrono::steady_clock::now();
        const bool resumed = fs::exists(pruned_path) && fs::exists(prune_report_path);
        try {
            if (!resumed) {
                SRModel pruned = load_srwt(teacher_path);
                PatchSampler sampler(cfg.data_dir, cfg.prune_patch, cfg.scale, cfg.seed + 2);
                const PruneReport fresh = run_pruning(pruned, sampler, cfg.prune);
                save_srwt(pruned, pruned_path);
                save_prune_report(fresh, cfg.prune, prune_report_path);
            }
            report.prune = load_prune_report(prune_report_path);
        } catch (const std::exception& e) {
            stage_failure("prune", e);
        }
        report.timings.push_back({"prune", seconds_since(start), resumed});
    }

    // Stage 3: closed-form compression planning from the measured density.
    {
        const auto start = std::chrono::steady_clock::now();
        const bool resumed = fs::exists(plan_path);
        try {
            if (!resumed) {
                const CompressionPlan fresh = plan(cfg.teacher, report.prune.density, cfg.plan_mode);
                save_plan(fresh, plan_path);
            }
            report.plan = load_plan(plan_path);
            if (!(report.plan.source == cfg.teacher))
                throw std::runtime_error(
                    "plan.json was derived from a different teacher; delete stale artifacts "
                    "or change out_dir");
            report.student_config = adjust_peripherals(cfg.teacher, report.plan.target);
        } catch (const std::exception& e) {
            stage_failure("plan", e);
        }
        report.timings.push_back({"plan", seconds_since(start), resumed});
    }

    // Stage 4: knowledge distillation of the compact student.
    {
        const auto start = std::chrono::steady_clock::now();
        const bool resumed = fs::exists(student_path) && fs::exists(distill_log_path);
        try {
            if (!resumed) {
                SRModel student = SRModel::build(report.student_config, cfg.seed + 4);
                PatchSampler sampler(cfg.data_dir, cfg.kd.patch, cfg.scale, cfg.seed + 3);
                const TrainRun run = run_distillation(student, teacher, sampler, cfg.kd);
                save_srwt(student, student_path);
                save_train_log(run, distill_log_path);
            }
            report.distill = load_train_log(distill_log_path);
            check_artifact_config(load_srwt(student_path), report.student_config, student_path);
        } catch (const std::exception& e) {
            stage_failure("distill", e);
        }
        report.timings.push_back({"distill", seconds_since(start), resumed});
    }

    // Stage 5: held-out evaluation of bicubic, teacher, and student.
    {
        const auto start = std::chrono::steady_clock::now();
        const bool resumed = fs::exists(metrics_path);
        try {
            if (!resumed) {
                EvalBundle metrics;
                metrics.border =
                    cfg.eval_border < 0 ? static_cast<int>(cfg.scale) : static_cast<int>(cfg.eval_border);
                const SRModel student = load_srwt(student_path);
                metrics.bicubic = evaluate_bicubic(cfg.eval_dir, cfg.scale, metrics.border);
                metrics.teacher = evaluate_model(teacher, cfg.eval_dir, metrics.border);
                metrics.student = evaluate_model(student, cfg.eval_dir, metrics.border);
                metrics.images = static_cast<long>(metrics.bicubic.images.size());
                save_metrics(metrics, metrics_path);
            }
            const EvalBundle metrics = load_metrics(metrics_path);
            report.eval_border = metrics.border;
            report.eval_images = metrics.images;
            report.bicubic = metrics.bicubic;
            report.teacher = metrics.teacher;
            report.student = metrics.student;
        } catch (const std::exception& e) {
            stage_failure("eval", e);
        }
        report.timings.push_back({"eval", seconds_since(start), resumed});
    }

    report.teacher_params = exact_param_count(cfg.teacher).total;
    report.student_params = exact_param_count(report.student_config).total;
    report.achieved_ratio =
        static_cast<double>(report.student_params) / static_cast<double>(report.teacher_params);
    report.teacher_macs_720p = estimate_macs(cfg.teacher, 720, 1280);
    report.student_macs_720p = estimate_macs(report.student_config, 720, 1280);
    report.artifacts = {{"teacher", "teacher.srwt"},
                        {"pruned", "pruned.srwt"},
                        {"prune_report", "prune_report.json"},
                        {"plan", "plan.json"},
                        {"student", "student.srwt"},
                        {"distill_log", "distill_log.jsonl"},
                        {"metrics", "metrics.json"},
                        {"report", "report.json"}};

    save_workflow_report(report, report_path);

    ordered_json timings{{"run_id", report.run_id}, {"stages", ordered_json::array()}};
    for (const auto& t : report.timings) {
        timings["stages"].push_back(
            ordered_json{{"stage", t.stage}, {"seconds", t.seconds}, {"resumed", t.resumed}});
    }
    write_text_file(timings_path, timings.dump(2) + "\n");

    return report;
}

void save_workflow_report(const WorkflowReport& report, const fs::path& path) {
    ordered_json j;
    j["run_id"] = report.run_id;
    j["config"] = ordered_json::parse(report.config_snapshot);

    const ParamCount teacher_counts = exact_param_count(report.plan.source);
    j["pretrain"] = ordered_json{{"checkpoint", "teacher.srwt"},
                                 {"model", config_json(report.plan.source)},
                                 {"parameters", ordered_json{{"shallow", teacher_counts.shallow},
                                                             {"deep", teacher_counts.deep},
                                                             {"recon", teacher_counts.recon},
                                                             {"total", teacher_counts.total}}}};

    j["prune"] = ordered_json{{"checkpoint", "pruned.srwt"},
                              {"report", "prune_report.json"},
                              {"nonzero_deep", report.prune.nonzero_deep},
                              {"total_deep", report.prune.total_deep},
                              {"density", report.prune.density},
                              {"per_layer_density", report.prune.per_layer_density}};

    j["plan"] = ordered_json{{"file", "plan.json"},
                             {"mode", rounding_mode_name(report.plan.mode)},
                             {"d", report.plan.d},
                             {"target", config_json(report.plan.target)},
                             {"achieved_ratio", report.plan.achieved_ratio},
                             {"achieved_exact_ratio", report.plan.achieved_exact_ratio},
                             {"clamped_channels", report.plan.clamped_channels},
                             {"student_config", config_json(report.student_config)}};

    ordered_json distill{{"checkpoint", "student.srwt"},
                         {"log", "distill_log.jsonl"},
                         {"iterations", report.distill.log.size()}};
    if (!report.distill.log.empty()) {
        distill["first_total"] = report.distill.log.front().total;
        distill["final_total"] = report.distill.log.back().total;
    }
    j["distill"] = std::move(distill);

    j["eval"] = ordered_json{{"border", report.eval_border},
                             {"images", report.eval_images},
                             {"bicubic", eval_json(report.bicubic)},
                             {"teacher", eval_json(report.teacher)},
                             {"student", eval_json(report.student)}};

    const double macs_ratio = report.teacher_macs_720p > 0.0
                                  ? report.student_macs_720p / report.teacher_macs_720p
                                  : 0.0;
    j["summary"] = ordered_json{{"teacher_params", report.teacher_params},
                                {"student_params", report.student_params},
                                {"achieved_ratio", report.achieved_ratio},
                                {"teacher_macs_720p", report.teacher_macs_720p},
                                {"student_macs_720p", report.student_macs_720p},
                                {"macs_ratio_720p", macs_ratio}};

    ordered_json artifacts;
    for (const auto& [label, file] : report.artifacts) artifacts[label] = file;
    j["artifacts"] = std::move(artifacts);

    write_text_file(path, j.dump(2) + "\n");
}

}  // namespace srsq
