#include "srsqueeze/optim.hpp"

#include <cmath>
#include <stdexcept>
#include <utility>

namespace srsq {

Adamax::Adamax(std::vector<Tensor> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    if (!(lr > 0.0)) throw std::invalid_argument("learning rate must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
        throw std::invalid_argument("betas must lie in [0, 1)");
    }
    if (!(eps > 0.0)) throw std::invalid_argument("eps must be positive");
    m_.reserve(params_.size());
    u_.reserve(params_.size());
    for (const Tensor& p : params_) {
        if (!p.defined()) throw std::invalid_argument("undefined parameter tensor");
        m_.emplace_back(p.numel(), 0.0);
        u_.emplace_back(p.numel(), 0.0);
    }
}

void Adamax::set_lr(double lr) {
    if (!(lr > 0.0)) throw std::invalid_argument("learning rate must be positive");
    lr_ = lr;
}

void Adamax::step() {
    ++t_;
    const double correction = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Tensor& p = params_[i];
        const std::span<const float> grad = p.grad();
        const bool has_grad = !grad.empty();
        const std::span<float> data = p.data();
        for (std::size_t j = 0; j < data.size(); ++j) {
            const double g = has_grad ? static_cast<double>(grad[j]) : 0.0;
            m_[i][j] = beta1_ * m_[i][j] + (1.0 - beta1_) * g;
            u_[i][j] = std::max(beta2_ * u_[i][j], std::abs(g));
            const double step = (lr_ / correction) * m_[i][j] / (u_[i][j] + eps_);
            data[j] = static_cast<float>(static_cast<double>(data[j]) - step);
        }
    }
}

void Adamax::zero_grad() {
    for (Tensor& p : params_) p.zero_grad();
}

}  // namespace srsq
