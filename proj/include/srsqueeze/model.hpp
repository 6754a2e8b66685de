#pragma once

#include "srsqueeze/tensor.hpp"

#include <filesystem>
#include <string>
#include <vector>

// EDSR-style super-resolution network family: a shallow feature conv, a stack
// of residual blocks with a trailing conv and a long skip, and a pixel-shuffle
// reconstruction head. Parameter and FLOP accounting for the same family.

namespace srsq {

struct ModelConfig {
    long n_c = 64;        // feature channels
    long n_l = 2;         // conv layers per block (see SRModel note below)
    long n_b = 16;        // residual block count
    long kernel = 3;      // conv kernel side, odd
    long scale = 2;       // upscale factor, one of 2/3/4
    long in_channels = 3; // image channels

    void validate() const;  // throws std::invalid_argument on bad fields
    bool operator==(const ModelConfig&) const = default;
};

struct ParamCount {
    long shallow = 0;
    long deep = 0;
    long recon = 0;
    long total = 0;
};

struct ConvLayer {
    Tensor weight;  // OIHW
    Tensor bias;    // O
};

// Residual blocks realize max(2, n_l) convolutions so that every block keeps
// an inner activation; a lone conv plus skip would collapse to an affine map
// and the family's published parameter totals assume the two-conv floor.
class SRModel {
public:
    SRModel() = default;

    static SRModel build(const ModelConfig& config, unsigned seed);

    // N x C x H x W -> N x C x (rH) x (rW)
    Tensor forward(const Tensor& x) const;
    // Deep features entering the reconstruction head (after the long skip).
    Tensor features(const Tensor& x) const;

    const ModelConfig& config() const { return config_; }
    long convs_per_block() const;

    // All trainable tensors in a stable, documented order: shallow, blocks in
    // index order (each conv's weight then bias), trailing, upsample stage(s),
    // final.
    std::vector<Tensor> parameters() const;
    // The deep-module subset (block convs + trailing conv), same ordering.
    std::vector<Tensor> deep_parameters() const;
    // Parallel to parameters(): the record name of each tensor.
    std::vector<std::string> parameter_names() const;

    const ConvLayer& shallow() const { return shallow_; }
    const std::vector<std::vector<ConvLayer>>& blocks() const { return blocks_; }
    const ConvLayer& trailing() const { return trailing_; }

private:
    ModelConfig config_;
    ConvLayer shallow_;
    std::vector<std::vector<ConvLayer>> blocks_;
    ConvLayer trailing_;
    std::vector<ConvLayer> upsample_;  // one stage for x2/x3, two for x4
    ConvLayer final_;
};

ParamCount exact_param_count(const SRModel& model);
ParamCount exact_param_count(const ModelConfig& config);

// k * n_b * (n_l + 1) * n_c^2 with k = kernel^2: the deep-module weight-count
// power law used by the compression planner.
double approx_param_count(const ModelConfig& config);

// One convolution's forward cost at a given output resolution, counting one
// multiply-accumulate as two floating-point operations.
double conv_flops(long out_h, long out_w, long out_ch, long in_ch, long kernel);

// Whole-model forward cost for producing an out_h x out_w SR image.
double estimate_flops(const ModelConfig& config, long out_h, long out_w);
// Same walk in multiply-accumulate units (= estimate_flops / 2), the scale at
// which SR papers usually tabulate "FLOPs".
double estimate_macs(const ModelConfig& config, long out_h, long out_w);

// SRWT v1 weight container: magic "SRWT", version, config record, then named
// tensor records with explicit dims and raw little-endian f32 payloads.
// Round-trips bit-exactly.
void save_srwt(const SRModel& model, const std::filesystem::path& path);
SRModel load_srwt(const std::filesystem::path& path);

}  // namespace srsq
