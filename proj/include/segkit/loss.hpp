#pragma once

#include <cmath>

#include "segkit/error.hpp"
#include "segkit/tensor.hpp"

namespace segkit {

struct DiceConfig {
    double smooth = 1.0;  // added to numerator and denominator
};

template <typename T>
struct LossResult {
    double value;
    Tensor4<T> grad;  // d(loss)/d(pred), same shape as pred
};

// Soft Dice loss over the whole batch:
//   L = 1 - (2*sum(p*g) + s) / (sum(p) + sum(g) + s)
// with analytic gradient dL/dp_i = (sum... ) derived from the quotient rule:
//   dL/dp_i = (N - 2*g_i*D) / D^2,  N = 2*sum(p*g)+s,  D = sum(p)+sum(g)+s.
// Sums accumulate in double in flat index order.
template <typename T>
LossResult<T> dice_loss(const Tensor4<T>& pred, const Tensor4<T>& target,
                        DiceConfig cfg = {}) {
    if (pred.shape() != target.shape())
        throw ShapeError("dice_loss: pred " + pred.shape().str() + " vs target " +
                         target.shape().str());
    double inter = 0.0, psum = 0.0, gsum = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double p = static_cast<double>(pred[i]);
        const double g = static_cast<double>(target[i]);
        inter += p * g;
        psum += p;
        gsum += g;
    }
    const double num = 2.0 * inter + cfg.smooth;
    const double den = psum + gsum + cfg.smooth;
    LossResult<T> out{1.0 - num / den, Tensor4<T>(pred.shape())};
    const double den2 = den * den;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double g = static_cast<double>(target[i]);
        out.grad[i] = static_cast<T>((num - 2.0 * g * den) / den2);
    }
    return out;
}

// Hard Dice coefficient of a thresholded prediction against a binary mask.
// Both masks empty scores a perfect 1.0.
template <typename T>
double dice_metric(const Tensor4<T>& pred, const Tensor4<T>& target,
                   double threshold = 0.5) {
    if (pred.shape() != target.shape())
        throw ShapeError("dice_metric: pred " + pred.shape().str() + " vs target " +
                         target.shape().str());
    std::size_t inter = 0, psum = 0, gsum = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool p = static_cast<double>(pred[i]) > threshold;
        const bool g = static_cast<double>(target[i]) > 0.5;
        inter += static_cast<std::size_t>(p && g);
        psum += static_cast<std::size_t>(p);
        gsum += static_cast<std::size_t>(g);
    }
    if (psum + gsum == 0) return 1.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(psum + gsum);
}

}  // namespace segkit
