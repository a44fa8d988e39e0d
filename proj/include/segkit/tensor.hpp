#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <string>
#include <type_traits>
#include <vector>

#include "segkit/error.hpp"
#include "segkit/prng.hpp"

namespace segkit {

struct Shape4 {
    int n = 0;  // batch
    int c = 0;  // channels
    int h = 0;  // rows
    int w = 0;  // cols

    bool operator==(const Shape4&) const = default;

    std::size_t count() const {
        return static_cast<std::size_t>(n) * static_cast<std::size_t>(c) *
               static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
    }

    std::string str() const {
        return "(" + std::to_string(n) + "," + std::to_string(c) + "," +
               std::to_string(h) + "," + std::to_string(w) + ")";
    }
};

// Dense 4-D array in (batch, channel, row, col) order, contiguous row-major.
// Element (i,j,y,x) lives at offset ((i*c + j)*h + y)*w + x. Per-channel
// planes are contiguous, which every convolution and dropout loop relies on.
template <typename T>
class Tensor4 {
    static_assert(std::is_floating_point_v<T>);

public:
    Tensor4() = default;

    explicit Tensor4(Shape4 s) : shape_(s) {
        if (s.n < 1 || s.c < 1 || s.h < 1 || s.w < 1)
            throw ArgError("Tensor4: all dims must be >= 1, got " + s.str());
        const std::size_t max_elems = std::numeric_limits<std::size_t>::max() / sizeof(T) / 2;
        if (static_cast<std::size_t>(s.n) > max_elems / s.c ||
            static_cast<std::size_t>(s.n) * s.c > max_elems / s.h ||
            static_cast<std::size_t>(s.n) * s.c * s.h > max_elems / s.w)
            throw AllocError("Tensor4: shape " + s.str() + " exceeds addressable size");
        data_.assign(s.count(), T(0));
    }

    Tensor4(int n, int c, int h, int w) : Tensor4(Shape4{n, c, h, w}) {}

    const Shape4& shape() const { return shape_; }
    int n() const { return shape_.n; }
    int c() const { return shape_.c; }
    int h() const { return shape_.h; }
    int w() const { return shape_.w; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }

    T& at(int i, int j, int y, int x) { return data_[offset(i, j, y, x)]; }
    const T& at(int i, int j, int y, int x) const { return data_[offset(i, j, y, x)]; }

    T& operator[](std::size_t k) { return data_[k]; }
    const T& operator[](std::size_t k) const { return data_[k]; }

    // Start of the (i,j) channel plane, h*w contiguous scalars.
    T* plane(int i, int j) { return data_.data() + plane_offset(i, j); }
    const T* plane(int i, int j) const { return data_.data() + plane_offset(i, j); }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    std::size_t offset(int i, int j, int y, int x) const {
        return ((static_cast<std::size_t>(i) * shape_.c + j) * shape_.h + y) * shape_.w + x;
    }

    template <typename U>
    Tensor4<U> cast() const {
        Tensor4<U> out(shape_);
        for (std::size_t k = 0; k < data_.size(); ++k) out[k] = static_cast<U>(data_[k]);
        return out;
    }

private:
    std::size_t plane_offset(int i, int j) const {
        return (static_cast<std::size_t>(i) * shape_.c + j) *
               (static_cast<std::size_t>(shape_.h) * shape_.w);
    }

    Shape4 shape_;
    std::vector<T> data_;
};

using Tensor4f = Tensor4<float>;
using Tensor4d = Tensor4<double>;

template <typename T>
Tensor4<T> zeros(Shape4 s) {
    return Tensor4<T>(s);
}

template <typename T>
Tensor4<T> full(Shape4 s, T v) {
    Tensor4<T> t(s);
    t.fill(v);
    return t;
}

// Pads the two spatial dims with a constant border.
template <typename T>
Tensor4<T> pad2d(const Tensor4<T>& x, int top, int bottom, int left, int right, T value) {
    if (top < 0 || bottom < 0 || left < 0 || right < 0)
        throw ArgError("pad2d: padding amounts must be >= 0");
    Tensor4<T> out(x.n(), x.c(), x.h() + top + bottom, x.w() + left + right);
    out.fill(value);
    for (int i = 0; i < x.n(); ++i)
        for (int j = 0; j < x.c(); ++j)
            for (int y = 0; y < x.h(); ++y) {
                const T* src = &x.at(i, j, y, 0);
                T* dst = &out.at(i, j, y + top, left);
                std::copy(src, src + x.w(), dst);
            }
    return out;
}

// Inverse of pad2d for the same amounts.
template <typename T>
Tensor4<T> crop2d(const Tensor4<T>& x, int top, int bottom, int left, int right) {
    if (top < 0 || bottom < 0 || left < 0 || right < 0)
        throw ArgError("crop2d: crop amounts must be >= 0");
    if (x.h() <= top + bottom || x.w() <= left + right)
        throw ArgError("crop2d: crop exceeds spatial extent");
    Tensor4<T> out(x.n(), x.c(), x.h() - top - bottom, x.w() - left - right);
    for (int i = 0; i < x.n(); ++i)
        for (int j = 0; j < x.c(); ++j)
            for (int y = 0; y < out.h(); ++y) {
                const T* src = &x.at(i, j, y + top, left);
                std::copy(src, src + out.w(), &out.at(i, j, y, 0));
            }
    return out;
}

namespace detail {

// Half-pixel-center source coordinate: src = (dst + 0.5) * scale - 0.5,
// clamped to the valid range. Interpolation uses the lerp form
// a + (b - a) * f so constant images are preserved exactly.
inline void resize_axis_coords(int out_len, int in_len, std::vector<int>& lo,
                               std::vector<double>& frac) {
    const double scale = static_cast<double>(in_len) / out_len;
    lo.resize(out_len);
    frac.resize(out_len);
    for (int d = 0; d < out_len; ++d) {
        double s = (d + 0.5) * scale - 0.5;
        if (s < 0) s = 0;
        if (s > in_len - 1) s = in_len - 1;
        int i = static_cast<int>(s);
        if (i > in_len - 2) i = in_len > 1 ? in_len - 2 : 0;
        lo[d] = i;
        frac[d] = in_len > 1 ? s - i : 0.0;
    }
}

}  // namespace detail

// Per-channel bilinear interpolation with half-pixel centers.
template <typename T>
Tensor4<T> bilinear_resize(const Tensor4<T>& x, int out_h, int out_w) {
    if (out_h < 1 || out_w < 1) throw ArgError("bilinear_resize: output dims must be >= 1");
    if (out_h == x.h() && out_w == x.w()) return x;

    std::vector<int> y0, x0;
    std::vector<double> fy, fx;
    detail::resize_axis_coords(out_h, x.h(), y0, fy);
    detail::resize_axis_coords(out_w, x.w(), x0, fx);

    Tensor4<T> out(x.n(), x.c(), out_h, out_w);
    for (int i = 0; i < x.n(); ++i)
        for (int j = 0; j < x.c(); ++j) {
            const T* src = x.plane(i, j);
            T* dst = out.plane(i, j);
            for (int y = 0; y < out_h; ++y) {
                const T* r0 = src + static_cast<std::size_t>(y0[y]) * x.w();
                const T* r1 = r0 + (x.h() > 1 ? x.w() : 0);
                const double gy = fy[y];
                for (int xx = 0; xx < out_w; ++xx) {
                    const int c0 = x0[xx];
                    const double gx = fx[xx];
                    const double top = r0[c0] + (r0[c0 + (x.w() > 1 ? 1 : 0)] - r0[c0]) * gx;
                    const double bot = r1[c0] + (r1[c0 + (x.w() > 1 ? 1 : 0)] - r1[c0]) * gx;
                    dst[static_cast<std::size_t>(y) * out_w + xx] =
                        static_cast<T>(top + (bot - top) * gy);
                }
            }
        }
    return out;
}

// I.i.d. uniform samples in [lo, hi), deterministic for a fixed seed.
template <typename T>
Tensor4<T> rand_uniform(Prng& rng, Shape4 s, double lo, double hi) {
    if (!(lo < hi)) throw ArgError("rand_uniform: requires lo < hi");
    Tensor4<T> t(s);
    for (std::size_t k = 0; k < t.size(); ++k) t[k] = static_cast<T>(rng.uniform(lo, hi));
    return t;
}

}  // namespace segkit
