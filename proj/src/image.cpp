#include "srsqueeze/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <iostream>
#include <limits>
#include <stdexcept>

namespace srsq {

namespace {

float clamp01(double v) { return static_cast<float>(std::min(1.0, std::max(0.0, v))); }

void check_image(const ImageBuffer& img, const char* op) {
    if (img.height < 1 || img.width < 1 || (img.channels != 1 && img.channels != 3)) {
        throw std::invalid_argument(std::string(op) + ": image must be HxWx{1,3} with positive dims");
    }
    if (static_cast<long>(img.data.size()) != img.height * img.width * img.channels) {
        throw std::invalid_argument(std::string(op) + ": buffer size does not match dimensions");
    }
}

}  // namespace

ImageBuffer ImageBuffer::create(long height, long width, long channels, float fill) {
    if (height < 1 || width < 1 || (channels != 1 && channels != 3)) {
        throw std::invalid_argument("image dims must be positive with 1 or 3 channels");
    }
    ImageBuffer img;
    img.height = height;
    img.width = width;
    img.channels = channels;
    img.data.assign(static_cast<std::size_t>(height * width * channels), fill);
    return img;
}

ImageBuffer load_png(const std::filesystem::path& path) {
    png_image png;
    std::memset(&png, 0, sizeof(png));
    png.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&png, path.string().c_str())) {
        throw std::runtime_error("cannot read PNG " + path.string() + ": " + png.message);
    }
    const bool color = (png.format & PNG_FORMAT_FLAG_COLOR) != 0;
    png.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    const long channels = color ? 3 : 1;

    std::vector<unsigned char> bytes(PNG_IMAGE_SIZE(png));
    if (!png_image_finish_read(&png, nullptr, bytes.data(), 0, nullptr)) {
        throw std::runtime_error("cannot decode PNG " + path.string() + ": " + png.message);
    }

    ImageBuffer img = ImageBuffer::create(png.height, png.width, channels);
    for (std::size_t i = 0; i < bytes.size(); ++i) {
        img.data[i] = static_cast<float>(bytes[i]) / 255.0f;
    }
    return img;
}

void save_png(const ImageBuffer& img, const std::filesystem::path& path) {
    check_image(img, "save_png");
    png_image png;
    std::memset(&png, 0, sizeof(png));
    png.version = PNG_IMAGE_VERSION;
    png.width = static_cast<png_uint_32>(img.width);
    png.height = static_cast<png_uint_32>(img.height);
    png.format = img.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;

    std::vector<unsigned char> bytes(img.data.size());
    for (std::size_t i = 0; i < img.data.size(); ++i) {
        const float v = std::min(1.0f, std::max(0.0f, img.data[i]));
        bytes[i] = static_cast<unsigned char>(std::lround(v * 255.0f));
    }
    if (!png_image_write_to_file(&png, path.string().c_str(), 0, bytes.data(), 0, nullptr)) {
        throw std::runtime_error("cannot write PNG " + path.string() + ": " + png.message);
    }
}

ImageBuffer rgb_to_y(const ImageBuffer& img, LumaRange range) {
    check_image(img, "rgb_to_y");
    if (img.channels == 1) return img;

    ImageBuffer y = ImageBuffer::create(img.height, img.width, 1);
    const std::size_t pixels = static_cast<std::size_t>(img.height * img.width);
    for (std::size_t p = 0; p < pixels; ++p) {
        const double r = img.data[p * 3 + 0];
        const double g = img.data[p * 3 + 1];
        const double b = img.data[p * 3 + 2];
        const double v = range == LumaRange::Limited
                             ? (65.481 * r + 128.553 * g + 24.966 * b + 16.0) / 255.0
                             : 0.299 * r + 0.587 * g + 0.114 * b;
        y.data[p] = static_cast<float>(v);
    }
    return y;
}

namespace {

// Catmull-Rom kernel (bicubic with a = -0.5).
double cubic_weight(double t) {
    t = std::abs(t);
    if (t <= 1.0) return (1.5 * t - 2.5) * t * t + 1.0;
    if (t < 2.0) return ((-0.5 * t + 2.5) * t - 4.0) * t + 2.0;
    return 0.0;
}

long clamp_index(long i, long n) { return std::min(n - 1, std::max(0L, i)); }

}  // namespace

ImageBuffer bicubic_resize_to(const ImageBuffer& img, long out_h, long out_w) {
    check_image(img, "bicubic_resize");
    if (out_h < 1 || out_w < 1) {
        throw std::invalid_argument("bicubic_resize: output dims must be >= 1, got " +
                                    std::to_string(out_h) + "x" + std::to_string(out_w));
    }

    ImageBuffer out = ImageBuffer::create(out_h, out_w, img.channels);
    const double sy_ratio = static_cast<double>(img.height) / static_cast<double>(out_h);
    const double sx_ratio = static_cast<double>(img.width) / static_cast<double>(out_w);

    for (long oy = 0; oy < out_h; ++oy) {
        const double sy = (static_cast<double>(oy) + 0.5) * sy_ratio - 0.5;
        const long y0 = static_cast<long>(std::floor(sy));
        for (long ox = 0; ox < out_w; ++ox) {
            const double sx = (static_cast<double>(ox) + 0.5) * sx_ratio - 0.5;
            const long x0 = static_cast<long>(std::floor(sx));
            for (long c = 0; c < img.channels; ++c) {
                double acc = 0.0, wsum = 0.0;
                for (long dy = -1; dy <= 2; ++dy) {
                    const double wy = cubic_weight(sy - static_cast<double>(y0 + dy));
                    if (wy == 0.0) continue;
                    const long iy = clamp_index(y0 + dy, img.height);
                    for (long dx = -1; dx <= 2; ++dx) {
                        const double wx = cubic_weight(sx - static_cast<double>(x0 + dx));
                        if (wx == 0.0) continue;
                        const double w = wy * wx;
                        acc += w * img.at(iy, clamp_index(x0 + dx, img.width), c);
                        wsum += w;
                    }
                }
                out.at(oy, ox, c) = clamp01(acc / wsum);
            }
        }
    }
    return out;
}

ImageBuffer bicubic_resize(const ImageBuffer& img, double factor) {
    check_image(img, "bicubic_resize");
    if (!(factor > 0.0)) throw std::invalid_argument("bicubic_resize: factor must be positive");
    const long out_h = static_cast<long>(std::llround(static_cast<double>(img.height) * factor));
    const long out_w = static_cast<long>(std::llround(static_cast<double>(img.width) * factor));
    return bicubic_resize_to(img, out_h, out_w);
}

namespace {

void check_same_dims(const ImageBuffer& a, const ImageBuffer& b, const char* op) {
    if (a.height != b.height || a.width != b.width || a.channels != b.channels) {
        throw std::invalid_argument(std::string(op) + ": image dimensions differ");
    }
}

}  // namespace

double psnr(const ImageBuffer& a, const ImageBuffer& b, int border) {
    check_image(a, "psnr");
    check_image(b, "psnr");
    check_same_dims(a, b, "psnr");
    if (border < 0) throw std::invalid_argument("psnr: border must be >= 0");

    const ImageBuffer ya = rgb_to_y(a);
    const ImageBuffer yb = rgb_to_y(b);
    const long y_lo = border, y_hi = ya.height - border;
    const long x_lo = border, x_hi = ya.width - border;
    if (y_lo >= y_hi || x_lo >= x_hi) {
        throw std::invalid_argument("psnr: border " + std::to_string(border) +
                                    " leaves no pixels in a " + std::to_string(ya.height) + "x" +
                                    std::to_string(ya.width) + " image");
    }

    double se = 0.0;
    for (long y = y_lo; y < y_hi; ++y) {
        for (long x = x_lo; x < x_hi; ++x) {
            const double d = static_cast<double>(ya.at(y, x, 0)) - yb.at(y, x, 0);
            se += d * d;
        }
    }
    if (se == 0.0) return std::numeric_limits<double>::infinity();
    const double mse = se / (static_cast<double>(y_hi - y_lo) * static_cast<double>(x_hi - x_lo));
    return 10.0 * std::log10(1.0 / mse);
}

double ssim(const ImageBuffer& a, const ImageBuffer& b) {
    check_image(a, "ssim");
    check_image(b, "ssim");
    check_same_dims(a, b, "ssim");
    constexpr long kWindow = 11;
    if (a.height < kWindow || a.width < kWindow) {
        throw std::invalid_argument("ssim: image smaller than the 11x11 window");
    }

    const ImageBuffer ya = rgb_to_y(a);
    const ImageBuffer yb = rgb_to_y(b);

    // Normalized 11x11 Gaussian, sigma 1.5.
    double window[kWindow][kWindow];
    double wsum = 0.0;
    for (long i = 0; i < kWindow; ++i) {
        for (long j = 0; j < kWindow; ++j) {
            const double di = static_cast<double>(i - 5), dj = static_cast<double>(j - 5);
            window[i][j] = std::exp(-(di * di + dj * dj) / (2.0 * 1.5 * 1.5));
            wsum += window[i][j];
        }
    }
    for (auto& row : window) {
        for (double& w : row) w /= wsum;
    }

    constexpr double kC1 = 0.01 * 0.01;  // (K1 * L)^2 at L = 1
    constexpr double kC2 = 0.03 * 0.03;

    double total = 0.0;
    long count = 0;
    for (long y = 0; y + kWindow <= ya.height; ++y) {
        for (long x = 0; x + kWindow <= ya.width; ++x) {
            double mu_a = 0.0, mu_b = 0.0, aa = 0.0, bb = 0.0, ab = 0.0;
            for (long i = 0; i < kWindow; ++i) {
                for (long j = 0; j < kWindow; ++j) {
                    const double w = window[i][j];
                    const double va = ya.at(y + i, x + j, 0);
                    const double vb = yb.at(y + i, x + j, 0);
                    mu_a += w * va;
                    mu_b += w * vb;
                    // Grouping the pixel product first keeps ssim(a, b) == ssim(b, a)
                    // bitwise, and ssim(a, a) == 1 exactly (ab matches aa term for term).
                    aa += w * (va * va);
                    bb += w * (vb * vb);
                    ab += w * (va * vb);
                }
            }
            const double var_a = aa - mu_a * mu_a;
            const double var_b = bb - mu_b * mu_b;
            const double cov = ab - mu_a * mu_b;
            const double value = ((2.0 * mu_a * mu_b + kC1) * (2.0 * cov + kC2)) /
                                 ((mu_a * mu_a + mu_b * mu_b + kC1) * (var_a + var_b + kC2));
            total += value;
            ++count;
        }
    }
    return total / static_cast<double>(count);
}

Tensor image_to_tensor(const ImageBuffer& img) {
    check_image(img, "image_to_tensor");
    std::vector<float> chw(img.data.size());
    const long plane = img.height * img.width;
    for (long y = 0; y < img.height; ++y) {
        for (long x = 0; x < img.width; ++x) {
            for (long c = 0; c < img.channels; ++c) {
                chw[c * plane + y * img.width + x] = img.at(y, x, c);
            }
        }
    }
    return Tensor::from_data(std::move(chw), {1, img.channels, img.height, img.width});
}

ImageBuffer tensor_to_image(const Tensor& t, long batch_index) {
    if (t.rank() != 4 || (t.dim(1) != 1 && t.dim(1) != 3)) {
        throw std::invalid_argument("tensor_to_image: expected NCHW with 1 or 3 channels, got " +
                                    shape_str(t.shape()));
    }
    if (batch_index < 0 || batch_index >= t.dim(0)) {
        throw std::invalid_argument("tensor_to_image: batch index out of range");
    }
    const long channels = t.dim(1), h = t.dim(2), w = t.dim(3);
    const long plane = h * w;
    ImageBuffer img = ImageBuffer::create(h, w, channels);
    const float* src = t.data().data() + batch_index * channels * plane;
    for (long c = 0; c < channels; ++c) {
        for (long y = 0; y < h; ++y) {
            for (long x = 0; x < w; ++x) {
                img.at(y, x, c) = std::min(1.0f, std::max(0.0f, src[c * plane + y * w + x]));
            }
        }
    }
    return img;
}

// ---- patch sampling ----

PatchSampler::PatchSampler(const std::filesystem::path& hr_dir, long patch, long scale,
                           unsigned seed, bool augment)
    : patch_(patch), scale_(scale), augment_(augment), rng_(seed) {
    if (patch < 1 || scale < 1 || patch % scale != 0) {
        throw std::invalid_argument("patch size must be a positive multiple of the scale");
    }
    if (!std::filesystem::is_directory(hr_dir)) {
        throw std::runtime_error(hr_dir.string() + " is not a directory");
    }

    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(hr_dir)) {
        if (entry.is_regular_file() && entry.path().extension() == ".png") {
            files.push_back(entry.path());
        }
    }
    std::sort(files.begin(), files.end());

    for (const auto& file : files) {
        ImageBuffer img = load_png(file);
        if (img.height < patch_ || img.width < patch_) {
            std::cerr << "warning: skipping " << file.filename().string() << " (" << img.height
                      << "x" << img.width << " is smaller than the " << patch_ << "x" << patch_
                      << " patch)\n";
            skipped_.push_back(file.filename().string());
            continue;
        }
        images_.push_back(std::move(img));
    }
    if (images_.empty()) {
        throw std::runtime_error("no usable PNG images of at least " + std::to_string(patch_) +
                                 "x" + std::to_string(patch_) + " in " + hr_dir.string());
    }
}

namespace {

// The eight axis-aligned symmetries: bit 0 = transpose, bit 1 = flip x,
// bit 2 = flip y (applied in that order).
ImageBuffer dihedral(const ImageBuffer& img, unsigned transform) {
    const bool transpose = transform & 1u;
    const bool flip_x = transform & 2u;
    const bool flip_y = transform & 4u;
    const long oh = transpose ? img.width : img.height;
    const long ow = transpose ? img.height : img.width;
    ImageBuffer out = ImageBuffer::create(oh, ow, img.channels);
    for (long y = 0; y < oh; ++y) {
        for (long x = 0; x < ow; ++x) {
            const long ty = flip_y ? oh - 1 - y : y;
            const long tx = flip_x ? ow - 1 - x : x;
            const long sy = transpose ? tx : ty;
            const long sx = transpose ? ty : tx;
            for (long c = 0; c < img.channels; ++c) out.at(y, x, c) = img.at(sy, sx, c);
        }
    }
    return out;
}

}  // namespace

PatchPair PatchSampler::next() {
    // One modulo draw per decision, in a fixed order: image, y0, x0, transform.
    const ImageBuffer& img = images_[rng_() % images_.size()];
    const long y0 = static_cast<long>(rng_() % static_cast<unsigned long>(img.height - patch_ + 1));
    const long x0 = static_cast<long>(rng_() % static_cast<unsigned long>(img.width - patch_ + 1));

    ImageBuffer crop = ImageBuffer::create(patch_, patch_, img.channels);
    for (long y = 0; y < patch_; ++y) {
        for (long x = 0; x < patch_; ++x) {
            for (long c = 0; c < img.channels; ++c) crop.at(y, x, c) = img.at(y0 + y, x0 + x, c);
        }
    }
    if (augment_) crop = dihedral(crop, rng_() % 8u);

    PatchPair pair;
    pair.hr = std::move(crop);
    pair.lr = bicubic_resize(pair.hr, 1.0 / static_cast<double>(scale_));
    return pair;
}

TrainBatch PatchSampler::next_batch(long n) {
    if (n < 1) throw std::invalid_argument("batch size must be >= 1");
    const long lr_side = patch_ / scale_;
    const long channels = images_.front().channels;

    Tensor lr = Tensor::zeros({n, channels, lr_side, lr_side});
    Tensor hr = Tensor::zeros({n, channels, patch_, patch_});
    for (long i = 0; i < n; ++i) {
        PatchPair pair = next();
        if (pair.hr.channels != channels) {
            throw std::runtime_error("mixed channel counts in the training directory");
        }
        for (long c = 0; c < channels; ++c) {
            for (long y = 0; y < lr_side; ++y) {
                for (long x = 0; x < lr_side; ++x) {
                    lr.data()[((i * channels + c) * lr_side + y) * lr_side + x] = pair.lr.at(y, x, c);
                }
            }
            for (long y = 0; y < patch_; ++y) {
                for (long x = 0; x < patch_; ++x) {
                    hr.data()[((i * channels + c) * patch_ + y) * patch_ + x] = pair.hr.at(y, x, c);
                }
            }
        }
    }
    return {std::move(lr), std::move(hr)};
}

}  // namespace srsq
