#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "segkit/error.hpp"
#include "segkit/layers.hpp"
#include "segkit/prng.hpp"
#include "segkit/tensor.hpp"

namespace segkit {

// Uniform He initialization: i.i.d. samples in [-sqrt(6/fan_in), +sqrt(6/fan_in)].
template <typename T>
Tensor4<T> he_uniform_init(Shape4 shape, std::size_t fan_in, Prng& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    return rand_uniform<T>(rng, shape, -bound, bound);
}

// Convenience overload for conv-layout weights (out_c, in_c, k, k),
// where fan_in = in_c * k * k.
template <typename T>
Tensor4<T> he_uniform_init(Shape4 shape, Prng& rng) {
    return he_uniform_init<T>(
        shape, static_cast<std::size_t>(shape.c) * shape.h * shape.w, rng);
}

struct NadamConfig {
    double lr = 5e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Nesterov-Adam. Per step t (1-based):
//   m <- b1*m + (1-b1)*g,  v <- b2*v + (1-b2)*g^2
//   m_hat = m / (1 - b1^t), v_hat = v / (1 - b2^t)
//   theta -= lr * (b1*m_hat + (1-b1)*g/(1 - b1^t)) / (sqrt(v_hat) + eps)
// A step with any non-finite gradient is rejected before touching state.
template <typename T>
class Nadam {
public:
    explicit Nadam(NadamConfig cfg = {}) : cfg_(cfg) {}

    void bind(const std::vector<ParamRef<T>>& params) {
        m_.clear();
        v_.clear();
        for (const auto& p : params) {
            if (!p.trainable) continue;
            m_.emplace_back(p.value->shape());
            v_.emplace_back(p.value->shape());
        }
        t_ = 0;
        bound_count_ = m_.size();
    }

    double lr() const { return cfg_.lr; }
    void set_lr(double lr) { cfg_.lr = lr; }
    long long step_count() const { return t_; }

    void step(const std::vector<ParamRef<T>>& params) {
        std::size_t slot = 0;
        for (const auto& p : params) {
            if (!p.trainable) continue;
            if (slot >= bound_count_ || m_[slot].shape() != p.value->shape())
                throw ContractError("nadam: parameter set does not match bound state");
            if (!p.grad) throw ContractError("nadam: trainable parameter without gradient");
            for (std::size_t q = 0; q < p.grad->size(); ++q)
                if (!std::isfinite(static_cast<double>((*p.grad)[q])))
                    throw NumericError("nadam: non-finite gradient in " + p.name +
                                       ", step rejected");
            ++slot;
        }

        ++t_;
        const double b1 = cfg_.beta1, b2 = cfg_.beta2;
        const double m_corr = 1.0 - std::pow(b1, static_cast<double>(t_));
        const double v_corr = 1.0 - std::pow(b2, static_cast<double>(t_));
        slot = 0;
        for (const auto& p : params) {
            if (!p.trainable) continue;
            Tensor4<T>& m = m_[slot];
            Tensor4<T>& v = v_[slot];
            ++slot;
            Tensor4<T>& theta = *p.value;
            const Tensor4<T>& g = *p.grad;
            for (std::size_t q = 0; q < theta.size(); ++q) {
                const double gq = static_cast<double>(g[q]);
                const double mq = b1 * m[q] + (1.0 - b1) * gq;
                const double vq = b2 * v[q] + (1.0 - b2) * gq * gq;
                m[q] = static_cast<T>(mq);
                v[q] = static_cast<T>(vq);
                const double lookahead = b1 * (mq / m_corr) + (1.0 - b1) * gq / m_corr;
                theta[q] = static_cast<T>(theta[q] -
                                          cfg_.lr * lookahead / (std::sqrt(vq / v_corr) + cfg_.eps));
            }
        }
    }

private:
    NadamConfig cfg_;
    long long t_ = 0;
    std::size_t bound_count_ = 0;
    std::vector<Tensor4<T>> m_, v_;
};

// Divides the learning rate by `factor` once the monitored loss has failed to
// improve by more than `min_delta` for `patience` consecutive epochs.
class PlateauScheduler {
public:
    explicit PlateauScheduler(double factor = 10.0, int patience = 2, double min_delta = 1e-4)
        : factor_(factor), patience_(patience), min_delta_(min_delta) {}

    // Returns true when the learning rate was reduced this epoch.
    bool observe(double val_loss, double& lr) {
        if (std::isnan(val_loss)) throw NumericError("scheduler: NaN validation loss");
        if (val_loss < best_ - min_delta_) {
            best_ = val_loss;
            stagnation_ = 0;
            return false;
        }
        ++stagnation_;
        if (stagnation_ >= patience_) {
            lr /= factor_;
            stagnation_ = 0;
            ++reductions_;
            return true;
        }
        return false;
    }

    int reductions() const { return reductions_; }
    double best() const { return best_; }

private:
    double factor_;
    int patience_;
    double min_delta_;
    double best_ = std::numeric_limits<double>::infinity();
    int stagnation_ = 0;
    int reductions_ = 0;
};

}  // namespace segkit
