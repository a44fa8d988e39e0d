#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "segkit/error.hpp"
#include "segkit/prng.hpp"
#include "segkit/tensor.hpp"
#include "segkit/tensor_io.hpp"

namespace segkit {

// Synthetic small-target segmentation task: one or two bright elliptical
// blobs on a smooth value-noise background. Semi-axes span 6%..18% of the
// image side and every ellipse is inset so it fits completely, which bounds
// the positive mask fraction to roughly [1.1%, 20.5%] and keeps it nonempty.
struct SynthTask {
    int size = 64;
    std::uint64_t seed = 0;
    int max_blobs = 2;
    double min_axis_frac = 0.06;
    double max_axis_frac = 0.18;
};

template <typename T>
struct SamplePair {
    Tensor4<T> image;  // (1,1,h,w), values in [0,1]
    Tensor4<T> mask;   // (1,1,h,w), values in {0,1}
};

namespace detail {

// Smooth noise in [0,1]: a coarse uniform grid upsampled bilinearly.
template <typename T>
Tensor4<T> value_noise(Prng& rng, int h, int w) {
    const int gh = std::max(2, h / 8);
    const int gw = std::max(2, w / 8);
    Tensor4<T> coarse = rand_uniform<T>(rng, Shape4(1, 1, gh, gw), 0.0, 1.0);
    return bilinear_resize(coarse, h, w);
}

}  // namespace detail

// Deterministic for a given task.seed: sample k draws a fixed sequence
// (blob count; per blob: two semi-axes, orientation, center, brightness;
// then the background grid), so `n` only extends the dataset.
template <typename T>
std::vector<SamplePair<T>> generate(const SynthTask& task, int n) {
    if (n < 1) throw ArgError("generate: n must be >= 1");
    if (task.size < 8) throw ArgError("generate: size must be >= 8");
    if (task.max_blobs < 1) throw ArgError("generate: max_blobs must be >= 1");
    Prng rng(task.seed);
    const int s = task.size;
    std::vector<SamplePair<T>> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int k = 0; k < n; ++k) {
        Tensor4<T> mask(1, 1, s, s);
        std::vector<double> bright(static_cast<std::size_t>(s) * s, 0.0);
        const int blobs = 1 + static_cast<int>(rng.uniform_index(
                                  static_cast<std::size_t>(task.max_blobs)));
        for (int bi = 0; bi < blobs; ++bi) {
            const double a = rng.uniform(task.min_axis_frac * s, task.max_axis_frac * s);
            const double b = rng.uniform(task.min_axis_frac * s, task.max_axis_frac * s);
            const double theta = rng.uniform(0.0, 3.14159265358979323846);
            const double margin = std::max(a, b) + 1.0;
            const double cy = rng.uniform(margin, s - 1 - margin);
            const double cx = rng.uniform(margin, s - 1 - margin);
            const double level = rng.uniform(0.35, 0.55);
            const double ct = std::cos(theta), st = std::sin(theta);
            for (int y = 0; y < s; ++y)
                for (int x = 0; x < s; ++x) {
                    const double dy = y - cy, dx = x - cx;
                    const double u = ct * dx + st * dy;
                    const double v = -st * dx + ct * dy;
                    if ((u / a) * (u / a) + (v / b) * (v / b) <= 1.0) {
                        mask.at(0, 0, y, x) = T(1);
                        auto& px = bright[static_cast<std::size_t>(y) * s + x];
                        px = std::max(px, level);
                    }
                }
        }
        // Paranoia against a degenerate rasterization on tiny images: the
        // generator contract promises a nonempty mask.
        bool any = false;
        for (std::size_t i = 0; i < mask.size(); ++i) any = any || mask[i] != T(0);
        if (!any) {
            mask.at(0, 0, s / 2, s / 2) = T(1);
            bright[static_cast<std::size_t>(s / 2) * s + s / 2] = 0.45;
        }

        Tensor4<T> noise = detail::value_noise<T>(rng, s, s);
        Tensor4<T> img(1, 1, s, s);
        for (int y = 0; y < s; ++y)
            for (int x = 0; x < s; ++x) {
                const double bg = 0.05 + 0.40 * static_cast<double>(noise.at(0, 0, y, x));
                img.at(0, 0, y, x) =
                    static_cast<T>(bg + bright[static_cast<std::size_t>(y) * s + x]);
            }
        out.push_back({std::move(img), std::move(mask)});
    }
    return out;
}

// Default augmentation ranges: rotation up to 10 degrees, zoom +/-0.25,
// shifts up to 0.2 of the image side.
struct AugmentConfig {
    double max_rotation_deg = 10.0;
    double zoom_range = 0.25;
    double shift_fraction = 0.2;
};

namespace detail {

// Consumes one draw even when the range is zero, so switching augmentations
// off does not shift the random stream; a zero range maps exactly to `center`.
inline double signed_range(Prng& rng, double center, double half_width) {
    return center + (2.0 * rng.next_double() - 1.0) * half_width;
}

template <typename T>
double bilinear_at_zero(const Tensor4<T>& t, int n, int c, double y, double x) {
    const int y0 = static_cast<int>(std::floor(y));
    const int x0 = static_cast<int>(std::floor(x));
    const double fy = y - y0, fx = x - x0;
    auto pick = [&](int yy, int xx) -> double {
        if (yy < 0 || yy >= t.h() || xx < 0 || xx >= t.w()) return 0.0;
        return static_cast<double>(t.at(n, c, yy, xx));
    };
    const double top = pick(y0, x0) + (pick(y0, x0 + 1) - pick(y0, x0)) * fx;
    const double bot = pick(y0 + 1, x0) + (pick(y0 + 1, x0 + 1) - pick(y0 + 1, x0)) * fx;
    return top + (bot - top) * fy;
}

}  // namespace detail

// Applies one random rotation+zoom+shift to an (image, mask) pair: the image
// is resampled bilinearly, the mask by nearest neighbor, out-of-bounds reads
// fill with 0. The transform maps src -> dst as
//   dst = center + zoom * R(angle) * (src - center) + shift
// about the half-pixel center ((h-1)/2, (w-1)/2). With all ranges zero the
// inverse map is the exact identity, bitwise.
template <typename T>
SamplePair<T> augment(const Tensor4<T>& image, const Tensor4<T>& mask,
                      const AugmentConfig& cfg, Prng& rng) {
    if (image.shape() != mask.shape())
        throw ShapeError("augment: image " + image.shape().str() + " vs mask " +
                         mask.shape().str());
    const double deg = detail::signed_range(rng, 0.0, cfg.max_rotation_deg);
    const double zoom = detail::signed_range(rng, 1.0, cfg.zoom_range);
    const double shift_y = detail::signed_range(rng, 0.0, cfg.shift_fraction * image.h());
    const double shift_x = detail::signed_range(rng, 0.0, cfg.shift_fraction * image.w());

    const double rad = deg * (3.14159265358979323846 / 180.0);
    const double ct = std::cos(rad), st = std::sin(rad);
    const double cy = (image.h() - 1) / 2.0, cx = (image.w() - 1) / 2.0;

    SamplePair<T> out{Tensor4<T>(image.shape()), Tensor4<T>(mask.shape())};
    for (int n = 0; n < image.n(); ++n)
        for (int c = 0; c < image.c(); ++c)
            for (int y = 0; y < image.h(); ++y)
                for (int x = 0; x < image.w(); ++x) {
                    // invert: src = c + R^T((dst - c - shift) / zoom)
                    const double dy = (y - cy - shift_y) / zoom;
                    const double dx = (x - cx - shift_x) / zoom;
                    const double sy = cy + (st * dx + ct * dy);
                    const double sx = cx + (ct * dx - st * dy);
                    out.image.at(n, c, y, x) =
                        static_cast<T>(detail::bilinear_at_zero(image, n, c, sy, sx));
                    const long iy = std::lround(sy), ix = std::lround(sx);
                    out.mask.at(n, c, y, x) =
                        (iy >= 0 && iy < mask.h() && ix >= 0 && ix < mask.w())
                            ? mask.at(n, c, static_cast<int>(iy), static_cast<int>(ix))
                            : T(0);
                }
    return out;
}

// Volumes are .t4 tensors; a scan of S slices is (S,1,H,W) with slices on
// the batch axis.
template <typename T>
Tensor4<T> load_volume(const std::string& path) {
    return load_t4<T>(path);
}

template <typename T>
void save_volume(const std::string& path, const Tensor4<T>& t) {
    save_t4(path, t);
}

}  // namespace segkit
