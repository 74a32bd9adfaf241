#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

namespace fairstamp {

// Adam over a sequence of tensors visited in the same order on every step.
// Moment estimates are kept in double regardless of the parameter type.
class Adam {
public:
    explicit Adam(double learning_rate, double beta1 = 0.9, double beta2 = 0.999,
                  double eps = 1e-8)
        : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void begin_step() {
        ++step_;
        cursor_ = 0;
    }

    template <typename T>
    void update(T* param, const T* grad, std::size_t n) {
        if (m_.size() < cursor_ + n) {
            m_.resize(cursor_ + n, 0.0);
            v_.resize(cursor_ + n, 0.0);
        }
        const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
        const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
        for (std::size_t i = 0; i < n; ++i) {
            const double g = static_cast<double>(grad[i]);
            double& m = m_[cursor_ + i];
            double& v = v_[cursor_ + i];
            m = beta1_ * m + (1.0 - beta1_) * g;
            v = beta2_ * v + (1.0 - beta2_) * g * g;
            const double step = lr_ * (m / c1) / (std::sqrt(v / c2) + eps_);
            param[i] = static_cast<T>(static_cast<double>(param[i]) - step);
        }
        cursor_ += n;
    }

    long steps_taken() const { return step_; }

private:
    double lr_;
    double beta1_;
    double beta2_;
    double eps_;
    long step_ = 0;
    std::size_t cursor_ = 0;
    std::vector<double> m_;
    std::vector<double> v_;
};

}  // namespace fairstamp
