#include "srsqueeze/tensor.hpp"

#include <Eigen/Core>

#include <cmath>
#include <cstdlib>
#include <sstream>
#include <stdexcept>

namespace srsq {

namespace {

using detail::TensorImpl;

struct Node {
    std::vector<std::shared_ptr<TensorImpl>> inputs;
    std::shared_ptr<TensorImpl> output;
    std::function<void()> backprop;
    const char* op = "";
};

struct Tape {
    std::vector<Node> nodes;
    std::uint64_t generation = 1;
    bool enabled = true;
};

Tape& tape() {
    static Tape t;
    return t;
}

void ensure_grad(TensorImpl& impl) {
    if (impl.grad.size() != impl.data.size()) impl.grad.assign(impl.data.size(), 0.0f);
}

std::shared_ptr<TensorImpl> make_impl(std::vector<long> shape, bool requires_grad) {
    for (long d : shape) {
        if (d <= 0) throw std::invalid_argument("tensor dimensions must be positive, got shape " + shape_str(shape));
    }
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->data.assign(static_cast<std::size_t>(shape_numel(impl->shape)), 0.0f);
    impl->requires_grad = requires_grad;
    return impl;
}

bool wants_grad(std::initializer_list<const Tensor*> inputs) {
    if (!tape().enabled) return false;
    for (const Tensor* t : inputs) {
        if (t->defined() && t->requires_grad()) return true;
    }
    return false;
}

void set_hint(const Tensor& out, double value) {
    out.impl()->scalar_hint = value;
    out.impl()->data[0] = static_cast<float>(value);
}

bool scalar_hints(const Tensor& a, const Tensor& b, double& ha, double& hb) {
    if (a.numel() != 1) return false;
    ha = a.impl()->scalar_hint;
    hb = b.impl()->scalar_hint;
    return !std::isnan(ha) && !std::isnan(hb);
}

// Registers a node for `out` computed from `ins`. `backprop` must read
// out->grad and accumulate into each input's grad (allocating via ensure_grad).
void record(const char* op, std::initializer_list<const Tensor*> ins, const Tensor& out,
            std::function<void()> backprop) {
    Tape& t = tape();
    Node node;
    node.op = op;
    for (const Tensor* in : ins) {
        if (in->defined()) node.inputs.push_back(in->impl());
    }
    node.output = out.impl();
    node.backprop = std::move(backprop);
    out.impl()->node = static_cast<long>(t.nodes.size());
    out.impl()->tape_generation = t.generation;
    t.nodes.push_back(std::move(node));
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                    " vs " + shape_str(b.shape()));
    }
}

void check_4d(const Tensor& t, const char* op, const char* role) {
    if (t.rank() != 4) {
        throw std::invalid_argument(std::string(op) + ": " + role + " must be 4-D, got shape " +
                                    shape_str(t.shape()));
    }
}

}  // namespace

Tensor make_op_output(std::vector<long> shape, bool requires_grad) {
    return Tensor(make_impl(std::move(shape), requires_grad));
}

// ---- Tensor basics ----

Tensor Tensor::zeros(std::vector<long> shape, bool requires_grad) {
    return Tensor(make_impl(std::move(shape), requires_grad));
}

Tensor Tensor::full(std::vector<long> shape, float value, bool requires_grad) {
    Tensor t(make_impl(std::move(shape), requires_grad));
    std::fill(t.impl_->data.begin(), t.impl_->data.end(), value);
    return t;
}

Tensor Tensor::from_data(std::vector<float> values, std::vector<long> shape, bool requires_grad) {
    if (static_cast<long>(values.size()) != shape_numel(shape)) {
        throw std::invalid_argument("from_data: " + std::to_string(values.size()) +
                                    " values cannot fill shape " + shape_str(shape));
    }
    Tensor t(make_impl(std::move(shape), requires_grad));
    t.impl_->data = std::move(values);
    return t;
}

Tensor Tensor::scalar(float value, bool requires_grad) {
    return from_data({value}, {1}, requires_grad);
}

const std::vector<long>& Tensor::shape() const { return impl_->shape; }

long Tensor::dim(int axis) const { return impl_->shape.at(static_cast<std::size_t>(axis)); }

int Tensor::rank() const { return static_cast<int>(impl_->shape.size()); }

long Tensor::numel() const { return static_cast<long>(impl_->data.size()); }

std::span<const float> Tensor::data() const { return impl_->data; }

std::span<float> Tensor::data() { return impl_->data; }

std::span<const float> Tensor::grad() const { return impl_->grad; }

std::span<float> Tensor::grad_mutable() {
    ensure_grad(*impl_);
    return impl_->grad;
}

void Tensor::zero_grad() {
    ensure_grad(*impl_);
    std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0f);
}

bool Tensor::requires_grad() const { return impl_->requires_grad; }

void Tensor::set_requires_grad(bool value) { impl_->requires_grad = value; }

bool Tensor::is_leaf() const { return impl_->node < 0; }

float Tensor::item() const {
    if (numel() != 1) {
        throw std::invalid_argument("item: tensor of shape " + shape_str(shape()) + " is not scalar");
    }
    return impl_->data[0];
}

double Tensor::item_double() const {
    if (numel() != 1) {
        throw std::invalid_argument("item_double: tensor of shape " + shape_str(shape()) +
                                    " is not scalar");
    }
    if (!std::isnan(impl_->scalar_hint)) return impl_->scalar_hint;
    return static_cast<double>(impl_->data[0]);
}

Tensor Tensor::clone() const {
    Tensor t(make_impl(impl_->shape, impl_->requires_grad));
    t.impl_->data = impl_->data;
    return t;
}

long shape_numel(const std::vector<long>& shape) {
    long n = 1;
    for (long d : shape) n *= d;
    return n;
}

std::string shape_str(const std::vector<long>& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

// ---- autograd ----

void backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1) {
        throw std::invalid_argument("backward: loss must be a defined scalar tensor");
    }
    Tape& t = tape();
    auto loss_impl = loss.impl();

    // Leaf loss (no recorded history): gradient of x w.r.t. itself.
    if (loss_impl->node < 0 || loss_impl->tape_generation != t.generation) {
        if (loss_impl->requires_grad) {
            ensure_grad(*loss_impl);
            loss_impl->grad[0] += 1.0f;
        }
        return;
    }

    // Intermediate gradients are scratch state: reset them so repeated calls
    // propagate exactly one unit of loss gradient per call. Leaf gradients
    // are left untouched and therefore accumulate.
    for (Node& node : t.nodes) {
        if (!node.output->grad.empty()) std::fill(node.output->grad.begin(), node.output->grad.end(), 0.0f);
    }

    ensure_grad(*loss_impl);
    loss_impl->grad[0] = 1.0f;

    for (long i = loss_impl->node; i >= 0; --i) {
        Node& node = t.nodes[static_cast<std::size_t>(i)];
        if (node.output->grad.empty()) continue;  // not reached from the loss
        node.backprop();
    }
}

void clear_tape() {
    Tape& t = tape();
    t.nodes.clear();
    ++t.generation;
}

std::size_t tape_size() { return tape().nodes.size(); }

bool grad_enabled() { return tape().enabled; }

NoGradGuard::NoGradGuard() : previous_(tape().enabled) { tape().enabled = false; }

NoGradGuard::~NoGradGuard() { tape().enabled = previous_; }

// ---- elementwise ops ----

namespace {

using EArray = Eigen::Map<Eigen::ArrayXf>;
using CEArray = Eigen::Map<const Eigen::ArrayXf>;

CEArray carr(const TensorImpl& t) { return CEArray(t.data.data(), static_cast<long>(t.data.size())); }
EArray arr(TensorImpl& t) { return EArray(t.data.data(), static_cast<long>(t.data.size())); }
EArray garr(TensorImpl& t) {
    ensure_grad(t);
    return EArray(t.grad.data(), static_cast<long>(t.grad.size()));
}
CEArray cgarr(const TensorImpl& t) { return CEArray(t.grad.data(), static_cast<long>(t.grad.size())); }

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    Tensor out = make_op_output(a.shape(), wants_grad({&a, &b}));
    arr(*out.impl()) = carr(*a.impl()) + carr(*b.impl());
    if (double ha, hb; scalar_hints(a, b, ha, hb)) set_hint(out, ha + hb);
    if (out.requires_grad()) {
        auto ai = a.impl(), bi = b.impl(), oi = out.impl();
        record("add", {&a, &b}, out, [ai, bi, oi] {
            if (ai->requires_grad) garr(*ai) += cgarr(*oi);
            if (bi->requires_grad) garr(*bi) += cgarr(*oi);
        });
    }
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    Tensor out = make_op_output(a.shape(), wants_grad({&a, &b}));
    arr(*out.impl()) = carr(*a.impl()) - carr(*b.impl());
    if (double ha, hb; scalar_hints(a, b, ha, hb)) set_hint(out, ha - hb);
    if (out.requires_grad()) {
        auto ai = a.impl(), bi = b.impl(), oi = out.impl();
        record("sub", {&a, &b}, out, [ai, bi, oi] {
            if (ai->requires_grad) garr(*ai) += cgarr(*oi);
            if (bi->requires_grad) garr(*bi) -= cgarr(*oi);
        });
    }
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    Tensor out = make_op_output(a.shape(), wants_grad({&a, &b}));
    arr(*out.impl()) = carr(*a.impl()) * carr(*b.impl());
    if (double ha, hb; scalar_hints(a, b, ha, hb)) set_hint(out, ha * hb);
    if (out.requires_grad()) {
        auto ai = a.impl(), bi = b.impl(), oi = out.impl();
        record("mul", {&a, &b}, out, [ai, bi, oi] {
            if (ai->requires_grad) garr(*ai) += cgarr(*oi) * carr(*bi);
            if (bi->requires_grad) garr(*bi) += cgarr(*oi) * carr(*ai);
        });
    }
    return out;
}

Tensor scale(const Tensor& a, double factor) {
    Tensor out = make_op_output(a.shape(), wants_grad({&a}));
    const float f = static_cast<float>(factor);
    arr(*out.impl()) = carr(*a.impl()) * f;
    if (a.numel() == 1 && !std::isnan(a.impl()->scalar_hint)) {
        set_hint(out, a.impl()->scalar_hint * factor);
    }
    if (out.requires_grad()) {
        auto ai = a.impl(), oi = out.impl();
        record("scale", {&a}, out, [ai, oi, f] { garr(*ai) += cgarr(*oi) * f; });
    }
    return out;
}

Tensor relu(const Tensor& a) {
    Tensor out = make_op_output(a.shape(), wants_grad({&a}));
    arr(*out.impl()) = carr(*a.impl()).max(0.0f);
    if (out.requires_grad()) {
        auto ai = a.impl(), oi = out.impl();
        record("relu", {&a}, out, [ai, oi] {
            garr(*ai) += cgarr(*oi) * (carr(*ai) > 0.0f).cast<float>();
        });
    }
    return out;
}

// ---- convolution ----

namespace {

// Scatters/gathers between the padded input plane and the column matrix used
// for the kernel-size x output-size product. Layout matches a row-major
// flattening of the OIHW weight: row index = (ci*kh + dy)*kw + dx.
void im2col(const float* src, long channels, long h, long w, long kh, long kw, long stride,
            long padding, long out_h, long out_w, Eigen::MatrixXd& cols) {
    cols.resize(channels * kh * kw, out_h * out_w);
    for (long c = 0; c < channels; ++c) {
        const float* plane = src + c * h * w;
        for (long dy = 0; dy < kh; ++dy) {
            for (long dx = 0; dx < kw; ++dx) {
                const long row = (c * kh + dy) * kw + dx;
                for (long oy = 0; oy < out_h; ++oy) {
                    const long iy = oy * stride - padding + dy;
                    if (iy < 0 || iy >= h) {
                        for (long ox = 0; ox < out_w; ++ox) cols(row, oy * out_w + ox) = 0.0;
                        continue;
                    }
                    for (long ox = 0; ox < out_w; ++ox) {
                        const long ix = ox * stride - padding + dx;
                        cols(row, oy * out_w + ox) =
                            (ix >= 0 && ix < w) ? static_cast<double>(plane[iy * w + ix]) : 0.0;
                    }
                }
            }
        }
    }
}

void col2im_accumulate(const Eigen::MatrixXd& cols, long channels, long h, long w, long kh, long kw,
                       long stride, long padding, long out_h, long out_w, float* dst) {
    for (long c = 0; c < channels; ++c) {
        float* plane = dst + c * h * w;
        for (long dy = 0; dy < kh; ++dy) {
            for (long dx = 0; dx < kw; ++dx) {
                const long row = (c * kh + dy) * kw + dx;
                for (long oy = 0; oy < out_h; ++oy) {
                    const long iy = oy * stride - padding + dy;
                    if (iy < 0 || iy >= h) continue;
                    for (long ox = 0; ox < out_w; ++ox) {
                        const long ix = ox * stride - padding + dx;
                        if (ix < 0 || ix >= w) continue;
                        plane[iy * w + ix] += static_cast<float>(cols(row, oy * out_w + ox));
                    }
                }
            }
        }
    }
}

Eigen::MatrixXd weight_matrix(const TensorImpl& w) {
    const long out_ch = w.shape[0];
    const long cols = w.shape[1] * w.shape[2] * w.shape[3];
    Eigen::MatrixXd m(out_ch, cols);
    for (long o = 0; o < out_ch; ++o) {
        for (long c = 0; c < cols; ++c) m(o, c) = static_cast<double>(w.data[o * cols + c]);
    }
    return m;
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride,
              int padding) {
    check_4d(input, "conv2d", "input");
    check_4d(weight, "conv2d", "weight");
    if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
    if (padding < 0) throw std::invalid_argument("conv2d: padding must be >= 0");

    const long batch = input.dim(0), in_ch = input.dim(1), h = input.dim(2), w = input.dim(3);
    const long out_ch = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
    if (weight.dim(1) != in_ch) {
        throw std::invalid_argument("conv2d: input has " + std::to_string(in_ch) +
                                    " channels but weight " + shape_str(weight.shape()) +
                                    " expects " + std::to_string(weight.dim(1)));
    }
    if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != out_ch)) {
        throw std::invalid_argument("conv2d: bias shape " + shape_str(bias.shape()) +
                                    " does not match " + std::to_string(out_ch) + " output channels");
    }
    const long out_h = (h + 2 * padding - kh) / stride + 1;
    const long out_w = (w + 2 * padding - kw) / stride + 1;
    if (h + 2 * padding < kh || w + 2 * padding < kw) {
        throw std::invalid_argument("conv2d: kernel " + shape_str(weight.shape()) +
                                    " larger than padded input " + shape_str(input.shape()));
    }

    Tensor out = make_op_output({batch, out_ch, out_h, out_w}, wants_grad({&input, &weight, &bias}));

    const Eigen::MatrixXd wmat = weight_matrix(*weight.impl());
    Eigen::MatrixXd cols;
    for (long n = 0; n < batch; ++n) {
        im2col(input.data().data() + n * in_ch * h * w, in_ch, h, w, kh, kw, stride, padding, out_h,
               out_w, cols);
        Eigen::MatrixXd prod = wmat * cols;  // out_ch x (out_h*out_w), double accumulation
        float* dst = out.data().data() + n * out_ch * out_h * out_w;
        for (long o = 0; o < out_ch; ++o) {
            const double b = bias.defined() ? static_cast<double>(bias.data()[o]) : 0.0;
            for (long p = 0; p < out_h * out_w; ++p) {
                dst[o * out_h * out_w + p] = static_cast<float>(prod(o, p) + b);
            }
        }
    }

    if (out.requires_grad()) {
        auto xi = input.impl(), wi = weight.impl(), oi = out.impl();
        auto bi = bias.defined() ? bias.impl() : nullptr;
        const int s = stride, p = padding;
        record("conv2d", {&input, &weight, &bias}, out, [xi, wi, bi, oi, s, p] {
            const long batch = xi->shape[0], in_ch = xi->shape[1], h = xi->shape[2], w = xi->shape[3];
            const long out_ch = wi->shape[0], kh = wi->shape[2], kw = wi->shape[3];
            const long out_h = oi->shape[2], out_w = oi->shape[3];
            const long plane = out_h * out_w;

            Eigen::MatrixXd wmat;
            if (xi->requires_grad) wmat = weight_matrix(*wi);
            Eigen::MatrixXd dwmat = Eigen::MatrixXd::Zero(out_ch, in_ch * kh * kw);
            Eigen::VectorXd dbias = Eigen::VectorXd::Zero(out_ch);
            Eigen::MatrixXd cols, dout(out_ch, plane);

            if (xi->requires_grad) ensure_grad(*xi);
            for (long n = 0; n < batch; ++n) {
                const float* g = oi->grad.data() + n * out_ch * plane;
                for (long o = 0; o < out_ch; ++o) {
                    for (long q = 0; q < plane; ++q) dout(o, q) = static_cast<double>(g[o * plane + q]);
                }
                if (wi->requires_grad) {
                    im2col(xi->data.data() + n * in_ch * h * w, in_ch, h, w, kh, kw, s, p, out_h,
                           out_w, cols);
                    dwmat.noalias() += dout * cols.transpose();
                }
                if (bi && bi->requires_grad) dbias.noalias() += dout.rowwise().sum();
                if (xi->requires_grad) {
                    Eigen::MatrixXd dcols = wmat.transpose() * dout;
                    col2im_accumulate(dcols, in_ch, h, w, kh, kw, s, p, out_h, out_w,
                                      xi->grad.data() + n * in_ch * h * w);
                }
            }
            if (wi->requires_grad) {
                ensure_grad(*wi);
                const long cols_n = in_ch * kh * kw;
                for (long o = 0; o < out_ch; ++o) {
                    for (long c = 0; c < cols_n; ++c) {
                        wi->grad[o * cols_n + c] += static_cast<float>(dwmat(o, c));
                    }
                }
            }
            if (bi && bi->requires_grad) {
                ensure_grad(*bi);
                for (long o = 0; o < out_ch; ++o) bi->grad[o] += static_cast<float>(dbias(o));
            }
        });
    }
    return out;
}

Tensor depthwise_conv2d(const Tensor& input, const Tensor& kernel) {
    check_4d(input, "depthwise_conv2d", "input");
    if (kernel.rank() != 2) {
        throw std::invalid_argument("depthwise_conv2d: kernel must be 2-D, got " +
                                    shape_str(kernel.shape()));
    }
    const long batch = input.dim(0), ch = input.dim(1), h = input.dim(2), w = input.dim(3);
    const long kh = kernel.dim(0), kw = kernel.dim(1);
    if (h < kh || w < kw) {
        throw std::invalid_argument("depthwise_conv2d: input " + shape_str(input.shape()) +
                                    " smaller than kernel " + shape_str(kernel.shape()));
    }
    const long out_h = h - kh + 1, out_w = w - kw + 1;

    Tensor out = make_op_output({batch, ch, out_h, out_w}, wants_grad({&input}));
    const float* k = kernel.data().data();
    const float* src = input.data().data();
    float* dst = out.data().data();
    for (long nc = 0; nc < batch * ch; ++nc) {
        const float* plane = src + nc * h * w;
        float* oplane = dst + nc * out_h * out_w;
        for (long oy = 0; oy < out_h; ++oy) {
            for (long ox = 0; ox < out_w; ++ox) {
                double acc = 0.0;
                for (long dy = 0; dy < kh; ++dy) {
                    for (long dx = 0; dx < kw; ++dx) {
                        acc += static_cast<double>(k[dy * kw + dx]) *
                               static_cast<double>(plane[(oy + dy) * w + (ox + dx)]);
                    }
                }
                oplane[oy * out_w + ox] = static_cast<float>(acc);
            }
        }
    }

    if (out.requires_grad()) {
        auto xi = input.impl(), ki = kernel.impl(), oi = out.impl();
        record("depthwise_conv2d", {&input}, out, [xi, ki, oi] {
            const long batch = xi->shape[0], ch = xi->shape[1], h = xi->shape[2], w = xi->shape[3];
            const long kh = ki->shape[0], kw = ki->shape[1];
            const long out_h = oi->shape[2], out_w = oi->shape[3];
            ensure_grad(*xi);
            const float* k = ki->data.data();
            for (long nc = 0; nc < batch * ch; ++nc) {
                const float* g = oi->grad.data() + nc * out_h * out_w;
                float* gx = xi->grad.data() + nc * h * w;
                for (long oy = 0; oy < out_h; ++oy) {
                    for (long ox = 0; ox < out_w; ++ox) {
                        const float gv = g[oy * out_w + ox];
                        if (gv == 0.0f) continue;
                        for (long dy = 0; dy < kh; ++dy) {
                            for (long dx = 0; dx < kw; ++dx) {
                                gx[(oy + dy) * w + (ox + dx)] += gv * k[dy * kw + dx];
                            }
                        }
                    }
                }
            }
        });
    }
    return out;
}

Tensor reflect_pad2d(const Tensor& input, int pad) {
    check_4d(input, "reflect_pad2d", "input");
    if (pad < 0) throw std::invalid_argument("reflect_pad2d: pad must be >= 0");
    const long batch = input.dim(0), ch = input.dim(1), h = input.dim(2), w = input.dim(3);
    const long oh = h + 2 * pad, ow = w + 2 * pad;

    // Mirror without repeating the border, folding as many times as needed, so
    // any pad works for any spatial size (a 1-wide axis reflects to a constant).
    auto mirror = [](long i, long n) {
        if (n == 1) return 0L;
        const long period = 2 * (n - 1);
        i = std::abs(i) % period;
        return i < n ? i : period - i;
    };

    Tensor out = make_op_output({batch, ch, oh, ow}, wants_grad({&input}));
    const float* src = input.data().data();
    float* dst = out.data().data();
    for (long nc = 0; nc < batch * ch; ++nc) {
        const float* plane = src + nc * h * w;
        float* oplane = dst + nc * oh * ow;
        for (long oy = 0; oy < oh; ++oy) {
            const long iy = mirror(oy - pad, h);
            for (long ox = 0; ox < ow; ++ox) {
                oplane[oy * ow + ox] = plane[iy * w + mirror(ox - pad, w)];
            }
        }
    }

    if (out.requires_grad()) {
        auto xi = input.impl(), oi = out.impl();
        const int p = pad;
        record("reflect_pad2d", {&input}, out, [xi, oi, p, mirror] {
            const long batch = xi->shape[0], ch = xi->shape[1], h = xi->shape[2], w = xi->shape[3];
            const long oh = h + 2 * p, ow = w + 2 * p;
            ensure_grad(*xi);
            for (long nc = 0; nc < batch * ch; ++nc) {
                const float* g = oi->grad.data() + nc * oh * ow;
                float* gx = xi->grad.data() + nc * h * w;
                for (long oy = 0; oy < oh; ++oy) {
                    const long iy = mirror(oy - p, h);
                    for (long ox = 0; ox < ow; ++ox) {
                        gx[iy * w + mirror(ox - p, w)] += g[oy * ow + ox];
                    }
                }
            }
        });
    }
    return out;
}

namespace {

// shuffle: out[n][c][y*r+dy][x*r+dx] = in[n][c*r*r + dy*r + dx][y][x]
void shuffle_forward(const float* src, float* dst, long batch, long out_ch, long h, long w, long r) {
    const long in_plane = h * w;
    const long oh = h * r, ow = w * r;
    for (long n = 0; n < batch; ++n) {
        for (long c = 0; c < out_ch; ++c) {
            for (long dy = 0; dy < r; ++dy) {
                for (long dx = 0; dx < r; ++dx) {
                    const float* sp = src + ((n * out_ch * r * r) + c * r * r + dy * r + dx) * in_plane;
                    float* dp = dst + (n * out_ch + c) * oh * ow;
                    for (long y = 0; y < h; ++y) {
                        for (long x = 0; x < w; ++x) {
                            dp[(y * r + dy) * ow + (x * r + dx)] = sp[y * w + x];
                        }
                    }
                }
            }
        }
    }
}

void shuffle_backward(const float* dout, float* dsrc, long batch, long out_ch, long h, long w,
                      long r) {
    const long in_plane = h * w;
    const long oh = h * r, ow = w * r;
    for (long n = 0; n < batch; ++n) {
        for (long c = 0; c < out_ch; ++c) {
            for (long dy = 0; dy < r; ++dy) {
                for (long dx = 0; dx < r; ++dx) {
                    float* sp = dsrc + ((n * out_ch * r * r) + c * r * r + dy * r + dx) * in_plane;
                    const float* dp = dout + (n * out_ch + c) * oh * ow;
                    for (long y = 0; y < h; ++y) {
                        for (long x = 0; x < w; ++x) {
                            sp[y * w + x] += dp[(y * r + dy) * ow + (x * r + dx)];
                        }
                    }
                }
            }
        }
    }
}

}  // namespace

Tensor pixel_shuffle(const Tensor& input, int upscale) {
    check_4d(input, "pixel_shuffle", "input");
    if (upscale < 1) throw std::invalid_argument("pixel_shuffle: upscale must be >= 1");
    const long r = upscale;
    const long batch = input.dim(0), ch = input.dim(1), h = input.dim(2), w = input.dim(3);
    if (ch % (r * r) != 0) {
        throw std::invalid_argument("pixel_shuffle: " + std::to_string(ch) +
                                    " channels not divisible by r^2 = " + std::to_string(r * r));
    }
    const long out_ch = ch / (r * r);
    Tensor out = make_op_output({batch, out_ch, h * r, w * r}, wants_grad({&input}));
    shuffle_forward(input.data().data(), out.data().data(), batch, out_ch, h, w, r);
    if (out.requires_grad()) {
        auto xi = input.impl(), oi = out.impl();
        record("pixel_shuffle", {&input}, out, [xi, oi, r] {
            ensure_grad(*xi);
            shuffle_backward(oi->grad.data(), xi->grad.data(), xi->shape[0], xi->shape[1] / (r * r),
                             xi->shape[2], xi->shape[3], r);
        });
    }
    return out;
}

Tensor pixel_unshuffle(const Tensor& input, int downscale) {
    check_4d(input, "pixel_unshuffle", "input");
    if (downscale < 1) throw std::invalid_argument("pixel_unshuffle: downscale must be >= 1");
    const long r = downscale;
    const long batch = input.dim(0), ch = input.dim(1), h = input.dim(2), w = input.dim(3);
    if (h % r != 0 || w % r != 0) {
        throw std::invalid_argument("pixel_unshuffle: spatial dims of " + shape_str(input.shape()) +
                                    " not divisible by " + std::to_string(r));
    }
    Tensor out = make_op_output({batch, ch * r * r, h / r, w / r}, wants_grad({&input}));
    // The inverse rearrangement is the shuffle backward scatter run on data.
    std::fill(out.data().begin(), out.data().end(), 0.0f);
    shuffle_backward(input.data().data(), out.data().data(), batch, ch, h / r, w / r, r);
    if (out.requires_grad()) {
        auto xi = input.impl(), oi = out.impl();
        record("pixel_unshuffle", {&input}, out, [xi, oi, r] {
            ensure_grad(*xi);
            shuffle_forward(oi->grad.data(), xi->grad.data(), oi->shape[0], oi->shape[1] / (r * r),
                            oi->shape[2], oi->shape[3], r);
        });
    }
    return out;
}

Tensor downsample2(const Tensor& input) {
    check_4d(input, "downsample2", "input");
    const long batch = input.dim(0), ch = input.dim(1), h = input.dim(2), w = input.dim(3);
    const long oh = (h + 1) / 2, ow = (w + 1) / 2;
    Tensor out = make_op_output({batch, ch, oh, ow}, wants_grad({&input}));
    const float* src = input.data().data();
    float* dst = out.data().data();
    for (long nc = 0; nc < batch * ch; ++nc) {
        for (long y = 0; y < oh; ++y) {
            for (long x = 0; x < ow; ++x) {
                dst[nc * oh * ow + y * ow + x] = src[nc * h * w + (2 * y) * w + 2 * x];
            }
        }
    }
    if (out.requires_grad()) {
        auto xi = input.impl(), oi = out.impl();
        record("downsample2", {&input}, out, [xi, oi] {
            const long h = xi->shape[2], w = xi->shape[3];
            const long oh = oi->shape[2], ow = oi->shape[3];
            ensure_grad(*xi);
            for (long nc = 0; nc < xi->shape[0] * xi->shape[1]; ++nc) {
                for (long y = 0; y < oh; ++y) {
                    for (long x = 0; x < ow; ++x) {
                        xi->grad[nc * h * w + (2 * y) * w + 2 * x] += oi->grad[nc * oh * ow + y * ow + x];
                    }
                }
            }
        });
    }
    return out;
}

Tensor upsample_zero2(const Tensor& input, long out_h, long out_w) {
    check_4d(input, "upsample_zero2", "input");
    const long batch = input.dim(0), ch = input.dim(1), h = input.dim(2), w = input.dim(3);
    if (out_h < 2 * h - 1 || out_h > 2 * h + 1 || out_w < 2 * w - 1 || out_w > 2 * w + 1) {
        throw std::invalid_argument("upsample_zero2: target " + std::to_string(out_h) + "x" +
                                    std::to_string(out_w) + " is not a 2x expansion of " +
                                    shape_str(input.shape()));
    }
    Tensor out = make_op_output({batch, ch, out_h, out_w}, wants_grad({&input}));
    const float* src = input.data().data();
    float* dst = out.data().data();
    for (long nc = 0; nc < batch * ch; ++nc) {
        for (long y = 0; y < h && 2 * y < out_h; ++y) {
            for (long x = 0; x < w && 2 * x < out_w; ++x) {
                dst[nc * out_h * out_w + (2 * y) * out_w + 2 * x] = src[nc * h * w + y * w + x];
            }
        }
    }
    if (out.requires_grad()) {
        auto xi = input.impl(), oi = out.impl();
        record("upsample_zero2", {&input}, out, [xi, oi] {
            const long h = xi->shape[2], w = xi->shape[3];
            const long oh = oi->shape[2], ow = oi->shape[3];
            ensure_grad(*xi);
            for (long nc = 0; nc < xi->shape[0] * xi->shape[1]; ++nc) {
                for (long y = 0; y < h && 2 * y < oh; ++y) {
                    for (long x = 0; x < w && 2 * x < ow; ++x) {
                        xi->grad[nc * h * w + y * w + x] += oi->grad[nc * oh * ow + (2 * y) * ow + 2 * x];
                    }
                }
            }
        });
    }
    return out;
}

// ---- reductions ----

Tensor sum(const Tensor& a) {
    double acc = 0.0;
    for (float v : a.data()) acc += static_cast<double>(v);
    Tensor out = make_op_output({1}, wants_grad({&a}));
    out.impl()->scalar_hint = acc;
    out.data()[0] = static_cast<float>(acc);
    if (out.requires_grad()) {
        auto ai = a.impl(), oi = out.impl();
        record("sum", {&a}, out, [ai, oi] { garr(*ai) += oi->grad[0]; });
    }
    return out;
}

Tensor mean(const Tensor& a) {
    double acc = 0.0;
    for (float v : a.data()) acc += static_cast<double>(v);
    const double inv_n = 1.0 / static_cast<double>(a.numel());
    Tensor out = make_op_output({1}, wants_grad({&a}));
    out.impl()->scalar_hint = acc * inv_n;
    out.data()[0] = static_cast<float>(acc * inv_n);
    if (out.requires_grad()) {
        auto ai = a.impl(), oi = out.impl();
        record("mean", {&a}, out, [ai, oi, inv_n] {
            garr(*ai) += static_cast<float>(static_cast<double>(oi->grad[0]) * inv_n);
        });
    }
    return out;
}

Tensor l1_norm(const Tensor& a) {
    double acc = 0.0;
    for (float v : a.data()) acc += std::abs(static_cast<double>(v));
    Tensor out = make_op_output({1}, wants_grad({&a}));
    out.impl()->scalar_hint = acc;
    out.data()[0] = static_cast<float>(acc);
    if (out.requires_grad()) {
        auto ai = a.impl(), oi = out.impl();
        record("l1_norm", {&a}, out, [ai, oi] {
            const float g = oi->grad[0];
            ensure_grad(*ai);
            for (std::size_t i = 0; i < ai->data.size(); ++i) {
                const float v = ai->data[i];
                if (v > 0.0f) ai->grad[i] += g;
                else if (v < 0.0f) ai->grad[i] -= g;
            }
        });
    }
    return out;
}

Tensor l1_loss(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "l1_loss");
    double acc = 0.0;
    const auto av = a.data(), bv = b.data();
    for (long i = 0; i < a.numel(); ++i) acc += std::abs(static_cast<double>(av[i]) - bv[i]);
    const double inv_n = 1.0 / static_cast<double>(a.numel());
    Tensor out = make_op_output({1}, wants_grad({&a, &b}));
    out.impl()->scalar_hint = acc * inv_n;
    out.data()[0] = static_cast<float>(acc * inv_n);
    if (out.requires_grad()) {
        auto ai = a.impl(), bi = b.impl(), oi = out.impl();
        record("l1_loss", {&a, &b}, out, [ai, bi, oi, inv_n] {
            const float g = static_cast<float>(static_cast<double>(oi->grad[0]) * inv_n);
            if (ai->requires_grad) ensure_grad(*ai);
            if (bi->requires_grad) ensure_grad(*bi);
            for (std::size_t i = 0; i < ai->data.size(); ++i) {
                const float d = ai->data[i] - bi->data[i];
                const float s = d > 0.0f ? g : (d < 0.0f ? -g : 0.0f);
                if (ai->requires_grad) ai->grad[i] += s;
                if (bi->requires_grad) bi->grad[i] -= s;
            }
        });
    }
    return out;
}

Tensor charbonnier(const Tensor& pred, const Tensor& target, double eps) {
    check_same_shape(pred, target, "charbonnier");
    if (eps <= 0.0) throw std::invalid_argument("charbonnier: eps must be positive");
    double acc = 0.0;
    const auto pv = pred.data(), tv = target.data();
    const double e2 = eps * eps;
    for (long i = 0; i < pred.numel(); ++i) {
        const double d = static_cast<double>(pv[i]) - tv[i];
        acc += std::sqrt(d * d + e2);
    }
    const double inv_n = 1.0 / static_cast<double>(pred.numel());
    Tensor out = make_op_output({1}, wants_grad({&pred, &target}));
    out.impl()->scalar_hint = acc * inv_n;
    out.data()[0] = static_cast<float>(acc * inv_n);
    if (out.requires_grad()) {
        auto ai = pred.impl(), bi = target.impl(), oi = out.impl();
        record("charbonnier", {&pred, &target}, out, [ai, bi, oi, e2, inv_n] {
            const double g = static_cast<double>(oi->grad[0]) * inv_n;
            if (ai->requires_grad) ensure_grad(*ai);
            if (bi->requires_grad) ensure_grad(*bi);
            for (std::size_t i = 0; i < ai->data.size(); ++i) {
                const double d = static_cast<double>(ai->data[i]) - bi->data[i];
                const float s = static_cast<float>(g * d / std::sqrt(d * d + e2));
                if (ai->requires_grad) ai->grad[i] += s;
                if (bi->requires_grad) bi->grad[i] -= s;
            }
        });
    }
    return out;
}

}  // namespace srsq
