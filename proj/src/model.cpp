#include "srsqueeze/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <random>
#include <stdexcept>

namespace srsq {

namespace {

// 24-bit uniform in [0, 1): fixed bit-for-bit across platforms for a given
// seed, unlike std::uniform_real_distribution.
float next_uniform(std::mt19937& rng) {
    return static_cast<float>(rng() >> 8) * (1.0f / 16777216.0f);
}

void fill_he_uniform(Tensor& weight, long fan_in, std::mt19937& rng, float gain) {
    const float bound = gain * std::sqrt(6.0f / static_cast<float>(fan_in));
    for (float& v : weight.data()) v = (next_uniform(rng) * 2.0f - 1.0f) * bound;
}

ConvLayer make_conv(long in_ch, long out_ch, long kernel, std::mt19937& rng, float gain = 1.0f) {
    ConvLayer layer;
    layer.weight = Tensor::zeros({out_ch, in_ch, kernel, kernel}, true);
    layer.bias = Tensor::zeros({out_ch}, true);
    fill_he_uniform(layer.weight, in_ch * kernel * kernel, rng, gain);
    return layer;
}

long conv_params(long in_ch, long out_ch, long kernel) {
    return out_ch * in_ch * kernel * kernel + out_ch;
}

Tensor apply(const ConvLayer& layer, const Tensor& x, int padding) {
    return conv2d(x, layer.weight, layer.bias, 1, padding);
}

}  // namespace

void ModelConfig::validate() const {
    if (n_c < 1 || n_l < 1 || n_b < 1) {
        throw std::invalid_argument("model config: channel, layer, and block counts must be >= 1");
    }
    if (kernel < 1 || kernel % 2 == 0) {
        throw std::invalid_argument("model config: kernel side must be odd and positive, got " +
                                    std::to_string(kernel));
    }
    if (scale < 2 || scale > 4) {
        throw std::invalid_argument("model config: scale must be 2, 3, or 4, got " +
                                    std::to_string(scale));
    }
    if (in_channels < 1) throw std::invalid_argument("model config: in_channels must be >= 1");
}

long SRModel::convs_per_block() const { return std::max<long>(2, config_.n_l); }

SRModel SRModel::build(const ModelConfig& config, unsigned seed) {
    config.validate();
    SRModel m;
    m.config_ = config;
    std::mt19937 rng(seed);

    const long k = config.kernel;
    const long m_convs = std::max<long>(2, config.n_l);

    m.shallow_ = make_conv(config.in_channels, config.n_c, k, rng);
    m.blocks_.resize(static_cast<std::size_t>(config.n_b));
    for (auto& block : m.blocks_) {
        block.reserve(static_cast<std::size_t>(m_convs));
        for (long j = 0; j < m_convs; ++j) {
            // Damp each block's last conv so deep stacks start near identity.
            const float gain = (j == m_convs - 1) ? 0.1f : 1.0f;
            block.push_back(make_conv(config.n_c, config.n_c, k, rng, gain));
        }
    }
    m.trailing_ = make_conv(config.n_c, config.n_c, k, rng);
    if (config.scale == 4) {
        m.upsample_.push_back(make_conv(config.n_c, 4 * config.n_c, k, rng));
        m.upsample_.push_back(make_conv(config.n_c, 4 * config.n_c, k, rng));
    } else {
        m.upsample_.push_back(make_conv(config.n_c, config.n_c * config.scale * config.scale, k, rng));
    }
    m.final_ = make_conv(config.n_c, config.in_channels, k, rng);
    return m;
}

Tensor SRModel::features(const Tensor& x) const {
    const int pad = static_cast<int>(config_.kernel / 2);
    Tensor shallow = apply(shallow_, x, pad);
    Tensor f = shallow;
    for (const auto& block : blocks_) {
        Tensor t = f;
        for (std::size_t j = 0; j < block.size(); ++j) {
            t = apply(block[j], t, pad);
            if (j + 1 < block.size()) t = relu(t);
        }
        f = add(f, t);
    }
    f = apply(trailing_, f, pad);
    return add(f, shallow);
}

Tensor SRModel::forward(const Tensor& x) const {
    if (x.rank() != 4 || x.dim(1) != config_.in_channels) {
        throw std::invalid_argument("forward: expected NCHW input with " +
                                    std::to_string(config_.in_channels) + " channels, got " +
                                    shape_str(x.shape()));
    }
    const int pad = static_cast<int>(config_.kernel / 2);
    Tensor f = features(x);
    if (config_.scale == 4) {
        for (const auto& stage : upsample_) {
            f = pixel_shuffle(apply(stage, f, pad), 2);
        }
    } else {
        f = pixel_shuffle(apply(upsample_[0], f, pad), static_cast<int>(config_.scale));
    }
    return apply(final_, f, pad);
}

std::vector<Tensor> SRModel::parameters() const {
    std::vector<Tensor> out;
    auto push = [&out](const ConvLayer& l) {
        out.push_back(l.weight);
        out.push_back(l.bias);
    };
    push(shallow_);
    for (const auto& block : blocks_) {
        for (const auto& conv : block) push(conv);
    }
    push(trailing_);
    for (const auto& stage : upsample_) push(stage);
    push(final_);
    return out;
}

std::vector<Tensor> SRModel::deep_parameters() const {
    std::vector<Tensor> out;
    for (const auto& block : blocks_) {
        for (const auto& conv : block) {
            out.push_back(conv.weight);
            out.push_back(conv.bias);
        }
    }
    out.push_back(trailing_.weight);
    out.push_back(trailing_.bias);
    return out;
}

std::vector<std::string> SRModel::parameter_names() const {
    std::vector<std::string> out;
    auto push = [&out](const std::string& stem) {
        out.push_back(stem + ".weight");
        out.push_back(stem + ".bias");
    };
    push("shallow");
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
        for (std::size_t j = 0; j < blocks_[i].size(); ++j) {
            push("block" + std::to_string(i) + ".conv" + std::to_string(j));
        }
    }
    push("trailing");
    for (std::size_t s = 0; s < upsample_.size(); ++s) push("up" + std::to_string(s));
    push("final");
    return out;
}

ParamCount exact_param_count(const ModelConfig& config) {
    config.validate();
    const long k = config.kernel;
    const long m_convs = std::max<long>(2, config.n_l);
    ParamCount count;
    count.shallow = conv_params(config.in_channels, config.n_c, k);
    count.deep = config.n_b * m_convs * conv_params(config.n_c, config.n_c, k) +
                 conv_params(config.n_c, config.n_c, k);
    if (config.scale == 4) {
        count.recon = 2 * conv_params(config.n_c, 4 * config.n_c, k);
    } else {
        count.recon = conv_params(config.n_c, config.n_c * config.scale * config.scale, k);
    }
    count.recon += conv_params(config.n_c, config.in_channels, k);
    count.total = count.shallow + count.deep + count.recon;
    return count;
}

ParamCount exact_param_count(const SRModel& model) { return exact_param_count(model.config()); }

double approx_param_count(const ModelConfig& config) {
    config.validate();
    const double k = static_cast<double>(config.kernel * config.kernel);
    return k * static_cast<double>(config.n_b) * static_cast<double>(config.n_l + 1) *
           static_cast<double>(config.n_c) * static_cast<double>(config.n_c);
}

double conv_flops(long out_h, long out_w, long out_ch, long in_ch, long kernel) {
    return 2.0 * static_cast<double>(out_h) * static_cast<double>(out_w) *
           static_cast<double>(out_ch) * static_cast<double>(in_ch) *
           static_cast<double>(kernel * kernel);
}

double estimate_flops(const ModelConfig& config, long out_h, long out_w) {
    config.validate();
    if (out_h < 1 || out_w < 1) throw std::invalid_argument("estimate_flops: output dims must be positive");
    const long k = config.kernel;
    const long r = config.scale;
    const long lr_h = out_h / r, lr_w = out_w / r;
    const long m_convs = std::max<long>(2, config.n_l);

    double flops = conv_flops(lr_h, lr_w, config.n_c, config.in_channels, k);
    flops += static_cast<double>(config.n_b * m_convs + 1) *
             conv_flops(lr_h, lr_w, config.n_c, config.n_c, k);
    if (r == 4) {
        flops += conv_flops(lr_h, lr_w, 4 * config.n_c, config.n_c, k);
        flops += conv_flops(2 * lr_h, 2 * lr_w, 4 * config.n_c, config.n_c, k);
    } else {
        flops += conv_flops(lr_h, lr_w, config.n_c * r * r, config.n_c, k);
    }
    flops += conv_flops(out_h, out_w, config.in_channels, config.n_c, k);
    return flops;
}

double estimate_macs(const ModelConfig& config, long out_h, long out_w) {
    return estimate_flops(config, out_h, out_w) / 2.0;
}

// ---- SRWT v1 ----

namespace {

constexpr std::uint32_t kSrwtVersion = 1;

void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

void write_u64(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) throw std::runtime_error("weight file truncated");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

std::uint64_t read_u64(std::istream& is) {
    unsigned char b[8];
    if (!is.read(reinterpret_cast<char*>(b), 8)) throw std::runtime_error("weight file truncated");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

static_assert(sizeof(float) == 4, "SRWT stores IEEE-754 binary32 payloads");

}  // namespace

void save_srwt(const SRModel& model, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");

    os.write("SRWT", 4);
    write_u32(os, kSrwtVersion);
    const ModelConfig& c = model.config();
    for (long field : {c.n_c, c.n_l, c.n_b, c.kernel, c.scale, c.in_channels}) {
        write_u32(os, static_cast<std::uint32_t>(field));
    }

    const std::vector<Tensor> params = model.parameters();
    const std::vector<std::string> names = model.parameter_names();
    write_u32(os, static_cast<std::uint32_t>(params.size()));
    for (std::size_t i = 0; i < params.size(); ++i) {
        write_u32(os, static_cast<std::uint32_t>(names[i].size()));
        os.write(names[i].data(), static_cast<std::streamsize>(names[i].size()));
        write_u32(os, static_cast<std::uint32_t>(params[i].rank()));
        for (long d : params[i].shape()) write_u64(os, static_cast<std::uint64_t>(d));
        os.write(reinterpret_cast<const char*>(params[i].data().data()),
                 static_cast<std::streamsize>(params[i].numel() * 4));
    }
    if (!os) throw std::runtime_error("failed writing " + path.string());
}

SRModel load_srwt(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open " + path.string());

    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, "SRWT", 4) != 0) {
        throw std::runtime_error(path.string() + " is not an SRWT weight file");
    }
    const std::uint32_t version = read_u32(is);
    if (version != kSrwtVersion) {
        throw std::runtime_error(path.string() + ": unsupported SRWT version " +
                                 std::to_string(version));
    }
    ModelConfig config;
    config.n_c = read_u32(is);
    config.n_l = read_u32(is);
    config.n_b = read_u32(is);
    config.kernel = read_u32(is);
    config.scale = read_u32(is);
    config.in_channels = read_u32(is);
    config.validate();

    SRModel model = SRModel::build(config, 0);
    std::vector<Tensor> params = model.parameters();
    const std::vector<std::string> names = model.parameter_names();

    const std::uint32_t count = read_u32(is);
    if (count != params.size()) {
        throw std::runtime_error(path.string() + ": expected " + std::to_string(params.size()) +
                                 " tensors for this config, found " + std::to_string(count));
    }
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t name_len = read_u32(is);
        std::string name(name_len, '\0');
        if (!is.read(name.data(), name_len)) throw std::runtime_error("weight file truncated");
        if (name != names[i]) {
            throw std::runtime_error(path.string() + ": tensor " + std::to_string(i) + " is '" +
                                     name + "', expected '" + names[i] + "'");
        }
        const std::uint32_t rank = read_u32(is);
        std::vector<long> dims(rank);
        for (auto& d : dims) d = static_cast<long>(read_u64(is));
        if (dims != params[i].shape()) {
            throw std::runtime_error(path.string() + ": shape mismatch for '" + name + "': file has " +
                                     shape_str(dims) + ", config implies " +
                                     shape_str(params[i].shape()));
        }
        if (!is.read(reinterpret_cast<char*>(params[i].data().data()),
                     static_cast<std::streamsize>(params[i].numel() * 4))) {
            throw std::runtime_error("weight file truncated in payload of '" + name + "'");
        }
    }
    return model;
}

}  // namespace srsq
