#pragma once

#include <cmath>
#include <cstring>
#include <memory>
#include <string>
#include <vector>

#include "segkit/error.hpp"
#include "segkit/gemm.hpp"
#include "segkit/prng.hpp"
#include "segkit/tensor.hpp"

namespace segkit {

enum class Mode { train, infer };

// ---------------------------------------------------------------------------
// Convolution geometry and primitives
// ---------------------------------------------------------------------------

struct ConvSpec {
    int in_channels = 0;
    int out_channels = 0;
    int kernel = 3;
    int stride = 1;
    int dilation = 1;
};

// "Same" padding: output spatial size = ceil(input / stride). When the total
// padding is odd the extra pixel goes on the bottom/right, which makes the
// 256 -> 128 -> 64 chain exact.
struct ConvGeom {
    int out_h, out_w;
    int pad_top, pad_left;

    ConvGeom(int in_h, int in_w, const ConvSpec& s) {
        out_h = (in_h + s.stride - 1) / s.stride;
        out_w = (in_w + s.stride - 1) / s.stride;
        const int span = (s.kernel - 1) * s.dilation + 1;
        int total_h = (out_h - 1) * s.stride + span - in_h;
        int total_w = (out_w - 1) * s.stride + span - in_w;
        pad_top = total_h > 0 ? total_h / 2 : 0;
        pad_left = total_w > 0 ? total_w / 2 : 0;
    }
};

namespace detail {

inline int ceil_div(int a, int b) { return a >= 0 ? (a + b - 1) / b : -((-a) / b); }
inline int floor_div(int a, int b) { return a >= 0 ? a / b : -((-a + b - 1) / b); }

// Rows of col are kernel taps (j*k + ky)*k + kx, columns are output pixels of
// the row chunk [r0, r1). Out-of-image taps read as zero.
template <typename T>
void im2col_chunk(const Tensor4<T>& x, int img, const ConvSpec& sp, const ConvGeom& g, int r0,
                  int r1, T* col) {
    const int k = sp.kernel, s = sp.stride, d = sp.dilation;
    const int in_h = x.h(), in_w = x.w();
    const std::size_t nc = static_cast<std::size_t>(r1 - r0) * g.out_w;
    for (int j = 0; j < sp.in_channels; ++j) {
        const T* plane = x.plane(img, j);
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
                T* crow = col + (static_cast<std::size_t>(j) * k * k + ky * k + kx) * nc;
                const int ox_lo = std::max(0, ceil_div(g.pad_left - kx * d, s));
                const int ox_hi =
                    std::min(g.out_w, floor_div(in_w - 1 + g.pad_left - kx * d, s) + 1);
                for (int oy = r0; oy < r1; ++oy) {
                    T* dst = crow + static_cast<std::size_t>(oy - r0) * g.out_w;
                    const int iy = oy * s - g.pad_top + ky * d;
                    if (iy < 0 || iy >= in_h || ox_lo >= ox_hi) {
                        std::fill(dst, dst + g.out_w, T(0));
                        continue;
                    }
                    const T* srow = plane + static_cast<std::size_t>(iy) * in_w;
                    std::fill(dst, dst + ox_lo, T(0));
                    if (s == 1) {
                        std::memcpy(dst + ox_lo, srow + ox_lo - g.pad_left + kx * d,
                                    static_cast<std::size_t>(ox_hi - ox_lo) * sizeof(T));
                    } else {
                        for (int ox = ox_lo; ox < ox_hi; ++ox)
                            dst[ox] = srow[ox * s - g.pad_left + kx * d];
                    }
                    std::fill(dst + ox_hi, dst + g.out_w, T(0));
                }
            }
    }
}

// Adjoint of im2col_chunk: scatter-adds col back into gx.
template <typename T>
void col2im_add_chunk(const T* col, int img, const ConvSpec& sp, const ConvGeom& g, int r0, int r1,
                      Tensor4<T>& gx) {
    const int k = sp.kernel, s = sp.stride, d = sp.dilation;
    const int in_h = gx.h(), in_w = gx.w();
    const std::size_t nc = static_cast<std::size_t>(r1 - r0) * g.out_w;
    for (int j = 0; j < sp.in_channels; ++j) {
        T* plane = gx.plane(img, j);
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
                const T* crow = col + (static_cast<std::size_t>(j) * k * k + ky * k + kx) * nc;
                const int ox_lo = std::max(0, ceil_div(g.pad_left - kx * d, s));
                const int ox_hi =
                    std::min(g.out_w, floor_div(in_w - 1 + g.pad_left - kx * d, s) + 1);
                for (int oy = r0; oy < r1; ++oy) {
                    const int iy = oy * s - g.pad_top + ky * d;
                    if (iy < 0 || iy >= in_h || ox_lo >= ox_hi) continue;
                    const T* src = crow + static_cast<std::size_t>(oy - r0) * g.out_w;
                    T* drow = plane + static_cast<std::size_t>(iy) * in_w;
                    for (int ox = ox_lo; ox < ox_hi; ++ox)
                        drow[ox * s - g.pad_left + kx * d] += src[ox];
                }
            }
    }
}

// Row chunking keeps the im2col buffer near 8 MB regardless of image size.
inline int conv_chunk_rows(std::size_t elem_bytes, int k_col, int out_w, int out_h) {
    const std::size_t target = std::size_t(8) << 20;
    std::size_t rows = target / (elem_bytes * static_cast<std::size_t>(k_col) * out_w);
    if (rows < 1) rows = 1;
    if (rows > static_cast<std::size_t>(out_h)) rows = out_h;
    return static_cast<int>(rows);
}

}  // namespace detail

// Cross-correlation (no kernel flip) with zero same-padding.
// weights layout (out_c, in_c, k, k); bias may be null.
template <typename T>
Tensor4<T> conv_forward(const Tensor4<T>& x, const ConvSpec& sp, const Tensor4<T>& w,
                        const Tensor4<T>* bias) {
    if (x.c() != sp.in_channels)
        throw ContractError("conv: input has " + std::to_string(x.c()) + " channels, spec wants " +
                            std::to_string(sp.in_channels));
    if (w.shape() != Shape4{sp.out_channels, sp.in_channels, sp.kernel, sp.kernel})
        throw ContractError("conv: weight shape " + w.shape().str() + " does not match spec");
    const ConvGeom g(x.h(), x.w(), sp);
    const int k_col = sp.in_channels * sp.kernel * sp.kernel;
    Tensor4<T> y(x.n(), sp.out_channels, g.out_h, g.out_w);
    const std::size_t plane_stride = static_cast<std::size_t>(g.out_h) * g.out_w;

    const int chunk = detail::conv_chunk_rows(sizeof(T), k_col, g.out_w, g.out_h);
    std::vector<T> col(static_cast<std::size_t>(k_col) * chunk * g.out_w);
    for (int i = 0; i < x.n(); ++i)
        for (int r0 = 0; r0 < g.out_h; r0 += chunk) {
            const int r1 = std::min(g.out_h, r0 + chunk);
            const std::size_t nc = static_cast<std::size_t>(r1 - r0) * g.out_w;
            detail::im2col_chunk(x, i, sp, g, r0, r1, col.data());
            gemm_nn(sp.out_channels, static_cast<int>(nc), k_col, w.data(), k_col, col.data(), nc,
                    &y.at(i, 0, r0, 0), plane_stride, false);
        }
    if (bias) {
        if (bias->shape() != Shape4{1, sp.out_channels, 1, 1})
            throw ContractError("conv: bias shape " + bias->shape().str() + " does not match spec");
        for (int i = 0; i < y.n(); ++i)
            for (int j = 0; j < y.c(); ++j) {
                const T b = (*bias)[static_cast<std::size_t>(j)];
                T* p = y.plane(i, j);
                for (std::size_t q = 0; q < plane_stride; ++q) p[q] += b;
            }
    }
    return y;
}

// Gradient w.r.t. the convolution input; also the forward map of the
// transposed convolution. in_h/in_w give the input spatial size (it cannot
// be recovered from the output size when stride > 1).
template <typename T>
Tensor4<T> conv_grad_input(const Tensor4<T>& gy, const ConvSpec& sp, const Tensor4<T>& w, int in_h,
                           int in_w) {
    if (gy.c() != sp.out_channels)
        throw ContractError("conv_grad_input: grad has wrong channel count");
    const ConvGeom g(in_h, in_w, sp);
    if (gy.h() != g.out_h || gy.w() != g.out_w)
        throw ContractError("conv_grad_input: grad spatial size does not match geometry");
    const int k_col = sp.in_channels * sp.kernel * sp.kernel;

    std::vector<T> wt(static_cast<std::size_t>(k_col) * sp.out_channels);
    transpose(sp.out_channels, k_col, w.data(), wt.data());

    Tensor4<T> gx(gy.n(), sp.in_channels, in_h, in_w);
    const std::size_t plane_stride = static_cast<std::size_t>(g.out_h) * g.out_w;
    const int chunk = detail::conv_chunk_rows(sizeof(T), k_col, g.out_w, g.out_h);
    std::vector<T> colgrad(static_cast<std::size_t>(k_col) * chunk * g.out_w);
    for (int i = 0; i < gy.n(); ++i)
        for (int r0 = 0; r0 < g.out_h; r0 += chunk) {
            const int r1 = std::min(g.out_h, r0 + chunk);
            const std::size_t nc = static_cast<std::size_t>(r1 - r0) * g.out_w;
            gemm_nn(k_col, static_cast<int>(nc), sp.out_channels, wt.data(), sp.out_channels,
                    &gy.at(i, 0, r0, 0), plane_stride, colgrad.data(), nc, false);
            detail::col2im_add_chunk(colgrad.data(), i, sp, g, r0, r1, gx);
        }
    return gx;
}

// Accumulates the weight gradient into gw (shape (out_c, in_c, k, k)).
template <typename T>
void conv_grad_weights(const Tensor4<T>& x, const Tensor4<T>& gy, const ConvSpec& sp,
                       Tensor4<T>& gw) {
    const ConvGeom g(x.h(), x.w(), sp);
    const int k_col = sp.in_channels * sp.kernel * sp.kernel;
    const std::size_t plane_stride = static_cast<std::size_t>(g.out_h) * g.out_w;
    const int chunk = detail::conv_chunk_rows(sizeof(T), k_col, g.out_w, g.out_h);
    std::vector<T> col(static_cast<std::size_t>(k_col) * chunk * g.out_w);
    for (int i = 0; i < x.n(); ++i)
        for (int r0 = 0; r0 < g.out_h; r0 += chunk) {
            const int r1 = std::min(g.out_h, r0 + chunk);
            const std::size_t nc = static_cast<std::size_t>(r1 - r0) * g.out_w;
            detail::im2col_chunk(x, i, sp, g, r0, r1, col.data());
            gemm_nt(sp.out_channels, k_col, static_cast<int>(nc), &gy.at(i, 0, r0, 0),
                    plane_stride, col.data(), nc, gw.data(), k_col, true);
        }
}

// Accumulates the bias gradient (per-channel sum of gy) into gb.
template <typename T>
void conv_grad_bias(const Tensor4<T>& gy, Tensor4<T>& gb) {
    const std::size_t plane = static_cast<std::size_t>(gy.h()) * gy.w();
    for (int j = 0; j < gy.c(); ++j) {
        double s = 0;
        for (int i = 0; i < gy.n(); ++i) {
            const T* p = gy.plane(i, j);
            for (std::size_t q = 0; q < plane; ++q) s += p[q];
        }
        gb[static_cast<std::size_t>(j)] += static_cast<T>(s);
    }
}

// ---------------------------------------------------------------------------
// Layer graph node interface
// ---------------------------------------------------------------------------

template <typename T>
struct ParamRef {
    std::string name;
    Tensor4<T>* value = nullptr;
    Tensor4<T>* grad = nullptr;  // null for non-trainable state
    bool trainable = true;
};

template <typename T>
class Layer {
public:
    virtual ~Layer() = default;
    virtual std::string_view kind() const = 0;
    virtual int arity() const { return 1; }
    // Inputs are borrowed; rng is only consulted by stochastic layers in
    // train mode. Forward must populate whatever cache backward needs.
    virtual Tensor4<T> forward(const std::vector<const Tensor4<T>*>& in, Mode mode, Prng* rng) = 0;
    // One gradient tensor per input, in input order.
    virtual std::vector<Tensor4<T>> backward(const Tensor4<T>& grad_out) = 0;
    virtual std::vector<ParamRef<T>> params() { return {}; }
    virtual std::unique_ptr<Layer<T>> clone() const = 0;

protected:
    static const Tensor4<T>& single(const std::vector<const Tensor4<T>*>& in) {
        if (in.size() != 1) throw ContractError("layer expects exactly one input");
        return *in[0];
    }
    void require_cache(bool ok) const {
        if (!ok) throw ContractError("backward called without a preceding forward");
    }
};

// ---------------------------------------------------------------------------
// Concrete layers
// ---------------------------------------------------------------------------

template <typename T>
class Conv2d final : public Layer<T> {
public:
    explicit Conv2d(ConvSpec sp)
        : spec_(sp),
          w_(sp.out_channels, sp.in_channels, sp.kernel, sp.kernel),
          b_(1, sp.out_channels, 1, 1),
          gw_(w_.shape()),
          gb_(b_.shape()) {}

    std::string_view kind() const override { return "conv"; }
    const ConvSpec& spec() const { return spec_; }
    Tensor4<T>& weights() { return w_; }
    Tensor4<T>& bias() { return b_; }

    Tensor4<T> forward(const std::vector<const Tensor4<T>*>& in, Mode mode, Prng*) override {
        const Tensor4<T>& x = this->single(in);
        Tensor4<T> y = conv_forward(x, spec_, w_, &b_);
        x_ = mode == Mode::train ? x : Tensor4<T>();  // backward needs the input again
        return y;
    }

    std::vector<Tensor4<T>> backward(const Tensor4<T>& gy) override {
        this->require_cache(!x_.empty());
        conv_grad_weights(x_, gy, spec_, gw_);
        conv_grad_bias(gy, gb_);
        std::vector<Tensor4<T>> gin;
        gin.push_back(conv_grad_input(gy, spec_, w_, x_.h(), x_.w()));
        return gin;
    }

    std::vector<ParamRef<T>> params() override {
        return {{"w", &w_, &gw_, true}, {"b", &b_, &gb_, true}};
    }

    std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Conv2d>(*this); }

private:
    ConvSpec spec_;
    Tensor4<T> w_, b_, gw_, gb_;
    Tensor4<T> x_;
};

// Transposed convolution, the exact adjoint of the matching strided conv.
// Weights are stored as the matching conv would store them:
// (in_channels, out_channels, k, k). Output spatial size is exactly
// stride * input size.
template <typename T>
class Deconv2d final : public Layer<T> {
public:
    Deconv2d(int in_channels, int out_channels, int kernel = 3, int stride = 2)
        : in_c_(in_channels),
          out_c_(out_channels),
          w_(in_channels, out_channels, kernel, kernel),
          b_(1, out_channels, 1, 1),
          gw_(w_.shape()),
          gb_(b_.shape()) {
        // the adjoint "virtual conv" maps out_c -> in_c at the given stride
        adj_.in_channels = out_channels;
        adj_.out_channels = in_channels;
        adj_.kernel = kernel;
        adj_.stride = stride;
        adj_.dilation = 1;
    }

    std::string_view kind() const override { return "deconv"; }
    Tensor4<T>& weights() { return w_; }
    Tensor4<T>& bias() { return b_; }

    Tensor4<T> forward(const std::vector<const Tensor4<T>*>& in, Mode mode, Prng*) override {
        const Tensor4<T>& x = this->single(in);
        if (x.c() != in_c_) throw ContractError("deconv: input channel mismatch");
        x_ = mode == Mode::train ? x : Tensor4<T>();
        Tensor4<T> y = conv_grad_input(x, adj_, w_, x.h() * adj_.stride, x.w() * adj_.stride);
        const std::size_t plane = static_cast<std::size_t>(y.h()) * y.w();
        for (int i = 0; i < y.n(); ++i)
            for (int j = 0; j < y.c(); ++j) {
                const T bv = b_[static_cast<std::size_t>(j)];
                T* p = y.plane(i, j);
                for (std::size_t q = 0; q < plane; ++q) p[q] += bv;
            }
        return y;
    }

    std::vector<Tensor4<T>> backward(const Tensor4<T>& gy) override {
        this->require_cache(!x_.empty());
        conv_grad_weights(gy, x_, adj_, gw_);
        conv_grad_bias(gy, gb_);
        std::vector<Tensor4<T>> gin;
        gin.push_back(conv_forward<T>(gy, adj_, w_, nullptr));
        return gin;
    }

    std::vector<ParamRef<T>> params() override {
        return {{"w", &w_, &gw_, true}, {"b", &b_, &gb_, true}};
    }

    std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Deconv2d>(*this); }

private:
    int in_c_, out_c_;
    ConvSpec adj_;
    Tensor4<T> w_, b_, gw_, gb_;
    Tensor4<T> x_;
};

// Per-channel batch normalization. Train mode normalizes by batch statistics
// over (n,h,w) and updates the running estimates:
//   moving = momentum * moving + (1 - momentum) * batch   (biased variance).
// Infer mode is a per-channel affine map from the running estimates.
template <typename T>
class BatchNorm final : public Layer<T> {
public:
    explicit BatchNorm(int channels, double momentum = 0.99, double epsilon = 1e-3)
        : c_(channels),
          momentum_(momentum),
          eps_(epsilon),
          gamma_(1, channels, 1, 1),
          beta_(1, channels, 1, 1),
          mmean_(1, channels, 1, 1),
          mvar_(1, channels, 1, 1),
          ggamma_(1, channels, 1, 1),
          gbeta_(1, channels, 1, 1) {
        gamma_.fill(T(1));
    }

    std::string_view kind() const override { return "batchnorm"; }
    int channels() const { return c_; }

    // Marks the running statistics usable for inference (build-time init or
    // checkpoint load). A train-mode forward does the same.
    void set_moving_stats(T mean, T var) {
        mmean_.fill(mean);
        mvar_.fill(var);
        stats_ready_ = true;
    }
    void mark_stats_ready() { stats_ready_ = true; }

    Tensor4<T>& gamma() { return gamma_; }
    Tensor4<T>& beta() { return beta_; }

    Tensor4<T> forward(const std::vector<const Tensor4<T>*>& in, Mode mode, Prng*) override {
        const Tensor4<T>& x = this->single(in);
        if (x.c() != c_) throw ContractError("batchnorm: channel count mismatch");
        const std::size_t plane = static_cast<std::size_t>(x.h()) * x.w();
        const std::size_t per_channel = static_cast<std::size_t>(x.n()) * plane;
        Tensor4<T> y(x.shape());

        if (mode == Mode::train) {
            mode_ = Mode::train;
            xhat_ = Tensor4<T>(x.shape());
            inv_std_.assign(c_, 0.0);
            for (int j = 0; j < c_; ++j) {
                double sum = 0;
                for (int i = 0; i < x.n(); ++i) {
                    const T* p = x.plane(i, j);
                    for (std::size_t q = 0; q < plane; ++q) sum += p[q];
                }
                const double mean = sum / static_cast<double>(per_channel);
                double var_sum = 0;
                for (int i = 0; i < x.n(); ++i) {
                    const T* p = x.plane(i, j);
                    for (std::size_t q = 0; q < plane; ++q) {
                        const double d = p[q] - mean;
                        var_sum += d * d;
                    }
                }
                const double var = var_sum / static_cast<double>(per_channel);
                const double inv = 1.0 / std::sqrt(var + eps_);
                inv_std_[j] = inv;
                const T gj = gamma_[static_cast<std::size_t>(j)];
                const T bj = beta_[static_cast<std::size_t>(j)];
                for (int i = 0; i < x.n(); ++i) {
                    const T* p = x.plane(i, j);
                    T* xh = xhat_.plane(i, j);
                    T* out = y.plane(i, j);
                    for (std::size_t q = 0; q < plane; ++q) {
                        const T v = static_cast<T>((p[q] - mean) * inv);
                        xh[q] = v;
                        out[q] = gj * v + bj;
                    }
                }
                mmean_[static_cast<std::size_t>(j)] = static_cast<T>(
                    momentum_ * mmean_[static_cast<std::size_t>(j)] + (1.0 - momentum_) * mean);
                mvar_[static_cast<std::size_t>(j)] = static_cast<T>(
                    momentum_ * mvar_[static_cast<std::size_t>(j)] + (1.0 - momentum_) * var);
            }
            stats_ready_ = true;
        } else {
            if (!stats_ready_)
                throw ContractError("batchnorm: infer mode with uninitialized moving statistics");
            mode_ = Mode::infer;
            xhat_ = Tensor4<T>();  // no backward cache in infer mode
            for (int j = 0; j < c_; ++j) {
                const double inv = 1.0 / std::sqrt(static_cast<double>(mvar_[j]) + eps_);
                const T a = static_cast<T>(gamma_[j] * inv);
                const T b = static_cast<T>(beta_[j] - gamma_[j] * inv * mmean_[j]);
                for (int i = 0; i < x.n(); ++i) {
                    const T* p = x.plane(i, j);
                    T* out = y.plane(i, j);
                    for (std::size_t q = 0; q < plane; ++q) out[q] = a * p[q] + b;
                }
            }
        }
        return y;
    }

    std::vector<Tensor4<T>> backward(const Tensor4<T>& gy) override {
        this->require_cache(!xhat_.empty() && mode_ == Mode::train);
        if (gy.shape() != xhat_.shape()) throw ContractError("batchnorm: gradient shape mismatch");
        const std::size_t plane = static_cast<std::size_t>(gy.h()) * gy.w();
        const double count = static_cast<double>(gy.n()) * plane;
        Tensor4<T> gx(gy.shape());
        for (int j = 0; j < c_; ++j) {
            double sum_gy = 0, sum_gy_xhat = 0;
            for (int i = 0; i < gy.n(); ++i) {
                const T* g = gy.plane(i, j);
                const T* xh = xhat_.plane(i, j);
                for (std::size_t q = 0; q < plane; ++q) {
                    sum_gy += g[q];
                    sum_gy_xhat += static_cast<double>(g[q]) * xh[q];
                }
            }
            ggamma_[static_cast<std::size_t>(j)] += static_cast<T>(sum_gy_xhat);
            gbeta_[static_cast<std::size_t>(j)] += static_cast<T>(sum_gy);
            const double gj = gamma_[static_cast<std::size_t>(j)];
            const double scale = gj * inv_std_[j];
            for (int i = 0; i < gy.n(); ++i) {
                const T* g = gy.plane(i, j);
                const T* xh = xhat_.plane(i, j);
                T* out = gx.plane(i, j);
                for (std::size_t q = 0; q < plane; ++q)
                    out[q] = static_cast<T>(
                        scale * (g[q] - sum_gy / count - xh[q] * (sum_gy_xhat / count)));
            }
        }
        return {std::move(gx)};
    }

    std::vector<ParamRef<T>> params() override {
        return {{"gamma", &gamma_, &ggamma_, true},
                {"beta", &beta_, &gbeta_, true},
                {"moving_mean", &mmean_, nullptr, false},
                {"moving_var", &mvar_, nullptr, false}};
    }

    std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<BatchNorm>(*this); }

private:
    int c_;
    double momentum_, eps_;
    Tensor4<T> gamma_, beta_, mmean_, mvar_, ggamma_, gbeta_;
    Tensor4<T> xhat_;
    std::vector<double> inv_std_;
    Mode mode_ = Mode::train;
    bool stats_ready_ = false;
};

// y = x for x > 0, alpha * (exp(x) - 1) otherwise.
template <typename T>
class Elu final : public Layer<T> {
public:
    explicit Elu(double alpha = 1.0) : alpha_(alpha) {}

    std::string_view kind() const override { return "elu"; }

    Tensor4<T> forward(const std::vector<const Tensor4<T>*>& in, Mode mode, Prng*) override {
        const Tensor4<T>& x = this->single(in);
        Tensor4<T> y(x.shape());
        const T a = static_cast<T>(alpha_);
        for (std::size_t q = 0; q < x.size(); ++q)
            y[q] = x[q] > T(0) ? x[q] : a * (std::exp(x[q]) - T(1));
        y_ = mode == Mode::train ? y : Tensor4<T>();
        return y;
    }

    std::vector<Tensor4<T>> backward(const Tensor4<T>& gy) override {
        this->require_cache(!y_.empty());
        Tensor4<T> gx(gy.shape());
        const T a = static_cast<T>(alpha_);
        // for x <= 0: dy/dx = alpha * exp(x) = y + alpha
        for (std::size_t q = 0; q < gy.size(); ++q)
            gx[q] = y_[q] > T(0) ? gy[q] : gy[q] * (y_[q] + a);
        return {std::move(gx)};
    }

    std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Elu>(*this); }

private:
    double alpha_;
    Tensor4<T> y_;
};

// Zeroes whole channels with probability `rate` in train mode and scales the
// survivors by 1/(1-rate); identity in infer mode.
template <typename T>
class SpatialDropout final : public Layer<T> {
public:
    explicit SpatialDropout(double rate) : rate_(rate) {
        if (rate < 0.0 || rate >= 1.0)
            throw ArgError("spatial_dropout: rate must be in [0, 1), got " + std::to_string(rate));
    }

    std::string_view kind() const override { return "spatial_dropout"; }
    double rate() const { return rate_; }

    Tensor4<T> forward(const std::vector<const Tensor4<T>*>& in, Mode mode, Prng* rng) override {
        const Tensor4<T>& x = this->single(in);
        if (mode == Mode::infer) {
            scale_.assign(static_cast<std::size_t>(x.n()) * x.c(), T(1));
            return x;
        }
        if (!rng) throw ContractError("spatial_dropout: train mode requires an rng");
        const T keep_scale = static_cast<T>(1.0 / (1.0 - rate_));
        scale_.resize(static_cast<std::size_t>(x.n()) * x.c());
        Tensor4<T> y(x.shape());
        const std::size_t plane = static_cast<std::size_t>(x.h()) * x.w();
        for (int i = 0; i < x.n(); ++i)
            for (int j = 0; j < x.c(); ++j) {
                const T s = rng->bernoulli(rate_) ? T(0) : keep_scale;
                scale_[static_cast<std::size_t>(i) * x.c() + j] = s;
                const T* src = x.plane(i, j);
                T* dst = y.plane(i, j);
                if (s == T(0))
                    std::fill(dst, dst + plane, T(0));
                else
                    for (std::size_t q = 0; q < plane; ++q) dst[q] = src[q] * s;
            }
        return y;
    }

    std::vector<Tensor4<T>> backward(const Tensor4<T>& gy) override {
        this->require_cache(!scale_.empty());
        Tensor4<T> gx(gy.shape());
        const std::size_t plane = static_cast<std::size_t>(gy.h()) * gy.w();
        for (int i = 0; i < gy.n(); ++i)
            for (int j = 0; j < gy.c(); ++j) {
                const T s = scale_[static_cast<std::size_t>(i) * gy.c() + j];
                const T* src = gy.plane(i, j);
                T* dst = gx.plane(i, j);
                for (std::size_t q = 0; q < plane; ++q) dst[q] = src[q] * s;
            }
        return {std::move(gx)};
    }

    std::unique_ptr<Layer<T>> clone() const override {
        return std::make_unique<SpatialDropout>(*this);
    }

private:
    double rate_;
    std::vector<T> scale_;  // per (image, channel): 0 or 1/(1-rate)
};

template <typename T>
class Sigmoid final : public Layer<T> {
public:
    std::string_view kind() const override { return "sigmoid"; }

    Tensor4<T> forward(const std::vector<const Tensor4<T>*>& in, Mode mode, Prng*) override {
        const Tensor4<T>& x = this->single(in);
        Tensor4<T> y(x.shape());
        for (std::size_t q = 0; q < x.size(); ++q) {
            const T v = x[q];
            if (v >= T(0)) {
                y[q] = T(1) / (T(1) + std::exp(-v));
            } else {
                const T e = std::exp(v);
                y[q] = e / (T(1) + e);
            }
        }
        y_ = mode == Mode::train ? y : Tensor4<T>();
        return y;
    }

    std::vector<Tensor4<T>> backward(const Tensor4<T>& gy) override {
        this->require_cache(!y_.empty());
        Tensor4<T> gx(gy.shape());
        for (std::size_t q = 0; q < gy.size(); ++q) gx[q] = gy[q] * y_[q] * (T(1) - y_[q]);
        return {std::move(gx)};
    }

    std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Sigmoid>(*this); }

private:
    Tensor4<T> y_;
};

// Stacks the channels of two inputs, first input's channels first.
template <typename T>
class ConcatChannels final : public Layer<T> {
public:
    std::string_view kind() const override { return "concat"; }
    int arity() const override { return 2; }

    Tensor4<T> forward(const std::vector<const Tensor4<T>*>& in, Mode, Prng*) override {
        if (in.size() != 2) throw ContractError("concat expects two inputs");
        const Tensor4<T>& a = *in[0];
        const Tensor4<T>& b = *in[1];
        if (a.n() != b.n() || a.h() != b.h() || a.w() != b.w())
            throw ContractError("concat: inputs disagree on batch or spatial dims: " +
                                a.shape().str() + " vs " + b.shape().str());
        ca_ = a.c();
        cb_ = b.c();
        Tensor4<T> y(a.n(), ca_ + cb_, a.h(), a.w());
        const std::size_t plane = static_cast<std::size_t>(a.h()) * a.w();
        for (int i = 0; i < a.n(); ++i) {
            for (int j = 0; j < ca_; ++j)
                std::memcpy(y.plane(i, j), a.plane(i, j), plane * sizeof(T));
            for (int j = 0; j < cb_; ++j)
                std::memcpy(y.plane(i, ca_ + j), b.plane(i, j), plane * sizeof(T));
        }
        return y;
    }

    std::vector<Tensor4<T>> backward(const Tensor4<T>& gy) override {
        this->require_cache(ca_ > 0);
        Tensor4<T> ga(gy.n(), ca_, gy.h(), gy.w());
        Tensor4<T> gb(gy.n(), cb_, gy.h(), gy.w());
        const std::size_t plane = static_cast<std::size_t>(gy.h()) * gy.w();
        for (int i = 0; i < gy.n(); ++i) {
            for (int j = 0; j < ca_; ++j)
                std::memcpy(ga.plane(i, j), gy.plane(i, j), plane * sizeof(T));
            for (int j = 0; j < cb_; ++j)
                std::memcpy(gb.plane(i, j), gy.plane(i, ca_ + j), plane * sizeof(T));
        }
        std::vector<Tensor4<T>> out;
        out.push_back(std::move(ga));
        out.push_back(std::move(gb));
        return out;
    }

    std::unique_ptr<Layer<T>> clone() const override {
        return std::make_unique<ConcatChannels>(*this);
    }

private:
    int ca_ = 0, cb_ = 0;
};

// Elementwise sum of two equal-shaped inputs (residual short connection).
template <typename T>
class AddResidual final : public Layer<T> {
public:
    std::string_view kind() const override { return "add"; }
    int arity() const override { return 2; }

    Tensor4<T> forward(const std::vector<const Tensor4<T>*>& in, Mode, Prng*) override {
        if (in.size() != 2) throw ContractError("add expects two inputs");
        const Tensor4<T>& a = *in[0];
        const Tensor4<T>& b = *in[1];
        if (a.shape() != b.shape())
            throw ContractError("add: shape mismatch: " + a.shape().str() + " vs " +
                                b.shape().str());
        fed_ = true;
        Tensor4<T> y(a.shape());
        for (std::size_t q = 0; q < a.size(); ++q) y[q] = a[q] + b[q];
        return y;
    }

    std::vector<Tensor4<T>> backward(const Tensor4<T>& gy) override {
        this->require_cache(fed_);
        std::vector<Tensor4<T>> out;
        out.push_back(gy);
        out.push_back(gy);
        return out;
    }

    std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<AddResidual>(*this); }

private:
    bool fed_ = false;
};

}  // namespace segkit
