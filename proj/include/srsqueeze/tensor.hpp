#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <vector>

// Dense float32 tensors with reverse-mode automatic differentiation.
//
// Operations are free functions returning new tensors. While gradient
// recording is enabled, every op whose inputs require gradients appends a
// node to a global tape; backward() replays the tape in reverse execution
// order and accumulates gradients into leaf tensors. Convolution inner
// products and loss reductions accumulate in double before narrowing back
// to float, so results are reproducible across runs for a fixed build.

namespace srsq {

namespace detail {

struct TensorImpl {
    std::vector<long> shape;
    std::vector<float> data;
    std::vector<float> grad;  // empty until touched by backward()
    bool requires_grad = false;
    long node = -1;           // producing tape node, -1 for leaves
    std::uint64_t tape_generation = 0;
    // For scalars produced by double-accumulated reductions (and scalar
    // arithmetic on them): the unrounded value, NaN when absent. Whenever it
    // is set, data[0] == float(scalar_hint).
    double scalar_hint = std::numeric_limits<double>::quiet_NaN();
};

}  // namespace detail

class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(std::vector<long> shape, bool requires_grad = false);
    static Tensor full(std::vector<long> shape, float value, bool requires_grad = false);
    static Tensor from_data(std::vector<float> values, std::vector<long> shape,
                            bool requires_grad = false);
    static Tensor scalar(float value, bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }

    const std::vector<long>& shape() const;
    long dim(int axis) const;
    int rank() const;
    long numel() const;

    std::span<const float> data() const;
    std::span<float> data();

    // Gradient buffer; empty span until a backward pass (or zero_grad) touches it.
    std::span<const float> grad() const;
    std::span<float> grad_mutable();  // allocates and zero-fills on first use
    void zero_grad();

    bool requires_grad() const;
    void set_requires_grad(bool value);
    bool is_leaf() const;

    float item() const;  // numel() == 1 only
    // Scalar value at double precision where the producing chain kept one
    // (reductions and scalar arithmetic on their results); data[0] otherwise.
    double item_double() const;

    // Deep copy of data (gradient state and graph history are not copied).
    Tensor clone() const;

    std::shared_ptr<detail::TensorImpl> impl() const { return impl_; }

private:
    explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
    std::shared_ptr<detail::TensorImpl> impl_;

    friend Tensor make_op_output(std::vector<long> shape, bool requires_grad);
};

long shape_numel(const std::vector<long>& shape);
std::string shape_str(const std::vector<long>& shape);

// ---- autograd control ----

// Accumulates d(loss)/d(leaf) into every reachable leaf that requires grad.
// Intermediate gradients are recomputed from scratch on each call, so calling
// backward twice without zeroing leaf grads accumulates exactly twice.
void backward(const Tensor& loss);

void clear_tape();
std::size_t tape_size();
bool grad_enabled();

struct NoGradGuard {
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

// ---- elementwise and structural ops ----

Tensor add(const Tensor& a, const Tensor& b);       // same shape
Tensor sub(const Tensor& a, const Tensor& b);       // same shape
Tensor mul(const Tensor& a, const Tensor& b);       // same shape, Hadamard
Tensor scale(const Tensor& a, double factor);
Tensor relu(const Tensor& a);                       // subgradient at 0 is 0

// 2-D convolution over NCHW input with OIHW weight and optional length-O bias
// (pass a default-constructed Tensor for no bias). Zero padding.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              int stride = 1, int padding = 0);

// Per-channel correlation with a single fixed HxW kernel (kernel is a
// constant: no gradient flows to it). No padding; pad beforehand.
Tensor depthwise_conv2d(const Tensor& input, const Tensor& kernel);

Tensor reflect_pad2d(const Tensor& input, int pad);

// C*r^2 channels -> r-times larger spatial dims, and its inverse.
Tensor pixel_shuffle(const Tensor& input, int upscale);
Tensor pixel_unshuffle(const Tensor& input, int downscale);

// Keep every second pixel starting at (0,0); output dims are ceil(H/2) x ceil(W/2).
Tensor downsample2(const Tensor& input);
// Zero-insertion upsampling to the given spatial dims (values land on even
// indices; target dims must be 2*H-1, 2*H, or 2*H+1 per axis).
Tensor upsample_zero2(const Tensor& input, long out_h, long out_w);

// ---- reductions and losses (scalar outputs) ----

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor l1_norm(const Tensor& a);                    // sum of |a|
Tensor l1_loss(const Tensor& a, const Tensor& b);   // mean of |a - b|
// mean of sqrt((pred-target)^2 + eps^2); smooth L1 with a floor of eps.
Tensor charbonnier(const Tensor& pred, const Tensor& target, double eps);

}  // namespace srsq
