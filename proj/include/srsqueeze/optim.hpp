#pragma once

#include "srsqueeze/tensor.hpp"

#include <vector>

namespace srsq {

// AdaMax: the infinity-norm variant of Adam, with bias correction on the
// first moment. Moment state is kept in double precision.
class Adamax {
public:
    explicit Adamax(std::vector<Tensor> params, double lr, double beta1 = 0.9,
                    double beta2 = 0.99, double eps = 1e-8);

    // Applies one update from the accumulated gradients. Parameters whose
    // gradient buffer is empty are treated as having zero gradient.
    void step();
    void zero_grad();

    double lr() const { return lr_; }
    void set_lr(double lr);
    long steps() const { return t_; }

private:
    std::vector<Tensor> params_;
    std::vector<std::vector<double>> m_;  // first moment
    std::vector<std::vector<double>> u_;  // infinity-norm second moment
    double lr_;
    double beta1_;
    double beta2_;
    double eps_;
    long t_ = 0;
};

}  // namespace srsq
