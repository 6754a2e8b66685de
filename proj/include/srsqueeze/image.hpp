#pragma once

#include "srsqueeze/tensor.hpp"

#include <filesystem>
#include <random>
#include <string>
#include <utility>
#include <vector>

// Image handling for SR training and evaluation: 8-bit PNG I/O, bicubic
// rescaling for LR generation, BT.601 luma conversion, PSNR/SSIM on the Y
// channel, and a deterministic patch sampler over an HR directory.

namespace srsq {

struct ImageBuffer {
    long height = 0;
    long width = 0;
    long channels = 0;          // 1 (gray) or 3 (RGB)
    std::vector<float> data;    // HWC interleaved, values in [0, 1]

    static ImageBuffer create(long height, long width, long channels, float fill = 0.0f);

    float& at(long y, long x, long c) { return data[(y * width + x) * channels + c]; }
    float at(long y, long x, long c) const { return data[(y * width + x) * channels + c]; }
};

// 8-bit PNG round trip; a value v is stored as round(v * 255) and read back
// as byte / 255. Color files load as 3 channels, grayscale as 1.
ImageBuffer load_png(const std::filesystem::path& path);
void save_png(const ImageBuffer& img, const std::filesystem::path& path);

enum class LumaRange {
    Limited,  // BT.601 studio swing: Y in [16/255, 235/255]
    Full,     // plain Rec. 601 weights: Y in [0, 1]
};

// 3-channel input -> 1-channel luma; 1-channel input passes through.
ImageBuffer rgb_to_y(const ImageBuffer& img, LumaRange range = LumaRange::Limited);

// Catmull-Rom bicubic (a = -0.5) with pixel-center alignment and clamped
// edges; output dims are round(dim * factor).
ImageBuffer bicubic_resize(const ImageBuffer& img, double factor);
ImageBuffer bicubic_resize_to(const ImageBuffer& img, long out_h, long out_w);

// Both metrics evaluate the BT.601 limited-range luma of their inputs.
// psnr crops `border` pixels per side first and returns +infinity for
// identical crops; ssim uses an 11x11 Gaussian window (sigma 1.5) over valid
// positions with K1 = 0.01, K2 = 0.03 at dynamic range 1.
double psnr(const ImageBuffer& a, const ImageBuffer& b, int border);
double ssim(const ImageBuffer& a, const ImageBuffer& b);

struct EvalResult {
    struct PerImage {
        std::string name;
        double psnr = 0.0;
        double ssim = 0.0;
    };
    std::vector<PerImage> images;
    double mean_psnr = 0.0;
    double mean_ssim = 0.0;
    int border = 0;
};

// 1 x C x H x W tensor <-> image; tensor_to_image clamps into [0, 1].
Tensor image_to_tensor(const ImageBuffer& img);
ImageBuffer tensor_to_image(const Tensor& t, long batch_index = 0);

struct PatchPair {
    ImageBuffer lr;
    ImageBuffer hr;
};

struct TrainBatch {
    Tensor lr;  // N x C x (patch/scale) x (patch/scale)
    Tensor hr;  // N x C x patch x patch
};

// Draws seeded random HR crops from the PNG files of a directory (sorted by
// filename), optionally applies one of the eight flip/rotation symmetries,
// and derives each LR patch from its HR patch by bicubic downscaling. Images
// smaller than the patch are skipped and listed in skipped().
class PatchSampler {
public:
    PatchSampler(const std::filesystem::path& hr_dir, long patch, long scale, unsigned seed,
                 bool augment = true);

    PatchPair next();
    TrainBatch next_batch(long n);

    std::size_t image_count() const { return images_.size(); }
    const std::vector<std::string>& skipped() const { return skipped_; }

private:
    long patch_;
    long scale_;
    bool augment_;
    std::mt19937 rng_;
    std::vector<ImageBuffer> images_;
    std::vector<std::string> skipped_;
};

}  // namespace srsq
