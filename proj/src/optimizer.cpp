#include "dynamar/optimizer.hpp"

#include "dynamar/error.hpp"

#include <cmath>

namespace dynamar {

AdamOptimizer::AdamOptimizer(std::vector<Parameter*> params, double lr, double beta1, double beta2, double eps,
                             double weight_decay)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {
    if (!(lr_ > 0.0)) fail(Errc::InvalidParams, "learning rate must be positive");
    slots_.reserve(params_.size());
    for (const Parameter* p : params_) slots_.push_back({Tensor(p->value.rows, p->value.cols),
                                                         Tensor(p->value.rows, p->value.cols)});
}

void AdamOptimizer::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Parameter& p = *params_[i];
        Slot& s = slots_[i];
        for (std::size_t j = 0; j < p.value.size(); ++j) {
            const double g = p.grad.v[j];
            s.m.v[j] = beta1_ * s.m.v[j] + (1.0 - beta1_) * g;
            s.v.v[j] = beta2_ * s.v.v[j] + (1.0 - beta2_) * g * g;
            const double mhat = s.m.v[j] / bc1;
            const double vhat = s.v.v[j] / bc2;
            p.value.v[j] -= lr_ * (mhat / (std::sqrt(vhat) + eps_) + weight_decay_ * p.value.v[j]);
        }
    }
}

} // namespace dynamar
