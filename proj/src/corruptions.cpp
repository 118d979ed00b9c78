#include "ttcap/corruptions.hpp"

#include <jpeglib.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ttcap/io_util.hpp"
#include "ttcap/rng.hpp"

namespace ttcap {

namespace {

// ---------------------------------------------------------------------------
// float image plumbing: values in [0,1], H*W*3 interleaved

struct FImage {
    int h = 0, w = 0;
    std::vector<double> px;  // h*w*3

    FImage() = default;
    FImage(int h_, int w_) : h(h_), w(w_), px(size_t(h_) * w_ * 3, 0.0) {}
    double& at(int y, int x, int c) { return px[(size_t(y) * w + x) * 3 + c]; }
    double at(int y, int x, int c) const { return px[(size_t(y) * w + x) * 3 + c]; }
};

FImage to_float(const ImageInput& img) {
    FImage f(img.height, img.width);
    for (size_t i = 0; i < img.pixels.size(); ++i) f.px[i] = img.pixels[i] / 255.0;
    return f;
}

ImageInput from_float(const FImage& f, const std::string& id) {
    ImageInput img(id, f.h, f.w);
    for (size_t i = 0; i < f.px.size(); ++i) {
        const double v = std::clamp(f.px[i], 0.0, 1.0) * 255.0;
        img.pixels[i] = uint8_t(std::lround(v));
    }
    return img;
}

// half-sample symmetric reflection: -1 -> 0, n -> n-1
int reflect_idx(int i, int n) {
    if (n == 1) return 0;
    while (i < 0 || i >= n) {
        if (i < 0) i = -i - 1;
        if (i >= n) i = 2 * n - i - 1;
    }
    return i;
}

// whole-sample symmetric reflection: -1 -> 1, n -> n-2
int reflect101_idx(int i, int n) {
    if (n == 1) return 0;
    while (i < 0 || i >= n) {
        if (i < 0) i = -i;
        if (i >= n) i = 2 * n - i - 2;
    }
    return i;
}

std::vector<double> gaussian_kernel_1d(double sigma, double truncate) {
    const int radius = std::max(1, int(truncate * sigma + 0.5));
    std::vector<double> k(size_t(2 * radius + 1));
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        k[size_t(i + radius)] = std::exp(-0.5 * (double(i) * i) / (sigma * sigma));
        sum += k[size_t(i + radius)];
    }
    for (auto& v : k) v /= sum;
    return k;
}

// separable gaussian, reflect border, applied to every channel
FImage gaussian_blur(const FImage& src, double sigma, double truncate = 4.0) {
    if (sigma <= 0.0) return src;
    const auto k = gaussian_kernel_1d(sigma, truncate);
    const int r = int(k.size() / 2);
    FImage tmp(src.h, src.w), out(src.h, src.w);
    for (int y = 0; y < src.h; ++y)
        for (int x = 0; x < src.w; ++x)
            for (int c = 0; c < 3; ++c) {
                double acc = 0.0;
                for (int i = -r; i <= r; ++i)
                    acc += k[size_t(i + r)] * src.at(y, reflect_idx(x + i, src.w), c);
                tmp.at(y, x, c) = acc;
            }
    for (int y = 0; y < src.h; ++y)
        for (int x = 0; x < src.w; ++x)
            for (int c = 0; c < 3; ++c) {
                double acc = 0.0;
                for (int i = -r; i <= r; ++i)
                    acc += k[size_t(i + r)] * tmp.at(reflect_idx(y + i, src.h), x, c);
                out.at(y, x, c) = acc;
            }
    return out;
}

std::vector<double> gaussian_blur_field(const std::vector<double>& field, int h, int w, double sigma,
                                        double truncate) {
    const auto k = gaussian_kernel_1d(sigma, truncate);
    const int r = int(k.size() / 2);
    std::vector<double> tmp(field.size()), out(field.size());
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int i = -r; i <= r; ++i)
                acc += k[size_t(i + r)] * field[size_t(y) * w + reflect_idx(x + i, w)];
            tmp[size_t(y) * w + x] = acc;
        }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int i = -r; i <= r; ++i)
                acc += k[size_t(i + r)] * tmp[size_t(reflect_idx(y + i, h)) * w + x];
            out[size_t(y) * w + x] = acc;
        }
    return out;
}

// dense 2D convolution, reflect-101 border (filter2D semantics)
FImage convolve2d(const FImage& src, const std::vector<double>& kernel, int kh, int kw) {
    FImage out(src.h, src.w);
    const int ry = kh / 2, rx = kw / 2;
    for (int y = 0; y < src.h; ++y)
        for (int x = 0; x < src.w; ++x)
            for (int c = 0; c < 3; ++c) {
                double acc = 0.0;
                for (int i = 0; i < kh; ++i)
                    for (int j = 0; j < kw; ++j)
                        acc += kernel[size_t(i) * kw + j] *
                               src.at(reflect101_idx(y + i - ry, src.h),
                                      reflect101_idx(x + j - rx, src.w), c);
                out.at(y, x, c) = acc;
            }
    return out;
}

double bilinear_at(const FImage& src, double y, double x, int c) {
    const int y0 = int(std::floor(y)), x0 = int(std::floor(x));
    const double fy = y - y0, fx = x - x0;
    const int y0c = reflect_idx(y0, src.h), y1c = reflect_idx(y0 + 1, src.h);
    const int x0c = reflect_idx(x0, src.w), x1c = reflect_idx(x0 + 1, src.w);
    return (1 - fy) * ((1 - fx) * src.at(y0c, x0c, c) + fx * src.at(y0c, x1c, c)) +
           fy * ((1 - fx) * src.at(y1c, x0c, c) + fx * src.at(y1c, x1c, c));
}

FImage resize_bilinear(const FImage& src, int oh, int ow) {
    FImage out(oh, ow);
    const double sy = double(src.h) / oh, sx = double(src.w) / ow;
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
            const double iy = (y + 0.5) * sy - 0.5;
            const double ix = (x + 0.5) * sx - 0.5;
            for (int c = 0; c < 3; ++c) out.at(y, x, c) = bilinear_at(src, iy, ix, c);
        }
    return out;
}

// exact area averaging (PIL BOX filter)
FImage resize_box(const FImage& src, int oh, int ow) {
    FImage out(oh, ow);
    const double sy = double(src.h) / oh, sx = double(src.w) / ow;
    for (int y = 0; y < oh; ++y) {
        const double y0 = y * sy, y1 = (y + 1) * sy;
        for (int x = 0; x < ow; ++x) {
            const double x0 = x * sx, x1 = (x + 1) * sx;
            double acc[3] = {0, 0, 0};
            double area = 0.0;
            for (int iy = int(std::floor(y0)); iy < int(std::ceil(y1)); ++iy) {
                const double cy = std::min(y1, double(iy + 1)) - std::max(y0, double(iy));
                if (cy <= 0) continue;
                for (int ix = int(std::floor(x0)); ix < int(std::ceil(x1)); ++ix) {
                    const double cx = std::min(x1, double(ix + 1)) - std::max(x0, double(ix));
                    if (cx <= 0) continue;
                    const double wgt = cx * cy;
                    area += wgt;
                    for (int c = 0; c < 3; ++c)
                        acc[c] += wgt * src.at(std::min(iy, src.h - 1), std::min(ix, src.w - 1), c);
                }
            }
            for (int c = 0; c < 3; ++c) out.at(y, x, c) = acc[c] / area;
        }
    }
    return out;
}

// crop the central ceil(h/z) x ceil(w/z) window, scale it back up, trim to size
FImage clipped_zoom(const FImage& src, double zoom) {
    const int ch = std::max(1, int(std::ceil(src.h / zoom)));
    const int cw = std::max(1, int(std::ceil(src.w / zoom)));
    const int top = (src.h - ch) / 2, left = (src.w - cw) / 2;
    FImage crop(ch, cw);
    for (int y = 0; y < ch; ++y)
        for (int x = 0; x < cw; ++x)
            for (int c = 0; c < 3; ++c) crop.at(y, x, c) = src.at(top + y, left + x, c);
    const int zh = std::max(src.h, int(std::lround(ch * zoom)));
    const int zw = std::max(src.w, int(std::lround(cw * zoom)));
    FImage big = resize_bilinear(crop, zh, zw);
    FImage out(src.h, src.w);
    const int ty = (zh - src.h) / 2, tx = (zw - src.w) / 2;
    for (int y = 0; y < src.h; ++y)
        for (int x = 0; x < src.w; ++x)
            for (int c = 0; c < 3; ++c) out.at(y, x, c) = big.at(ty + y, tx + x, c);
    return out;
}

void rgb_to_hsv(double r, double g, double b, double& h, double& s, double& v) {
    const double mx = std::max({r, g, b}), mn = std::min({r, g, b});
    v = mx;
    const double d = mx - mn;
    s = mx == 0.0 ? 0.0 : d / mx;
    if (d == 0.0) {
        h = 0.0;
    } else if (mx == r) {
        h = std::fmod((g - b) / d, 6.0) / 6.0;
    } else if (mx == g) {
        h = ((b - r) / d + 2.0) / 6.0;
    } else {
        h = ((r - g) / d + 4.0) / 6.0;
    }
    if (h < 0) h += 1.0;
}

void hsv_to_rgb(double h, double s, double v, double& r, double& g, double& b) {
    const double hh = h * 6.0;
    const int i = int(std::floor(hh)) % 6;
    const double f = hh - std::floor(hh);
    const double p = v * (1 - s), q = v * (1 - f * s), t = v * (1 - (1 - f) * s);
    switch (i < 0 ? i + 6 : i) {
        case 0: r = v; g = t; b = p; break;
        case 1: r = q; g = v; b = p; break;
        case 2: r = p; g = v; b = t; break;
        case 3: r = p; g = q; b = v; break;
        case 4: r = t; g = p; b = v; break;
        default: r = v; g = p; b = q; break;
    }
}

// one-sided gaussian-weighted line kernel, bilinear sampling along the angle
FImage motion_blur_image(const FImage& src, double radius, double sigma, double angle_deg) {
    const int len = 2 * int(std::lround(radius)) + 1;
    std::vector<double> wgt(size_t(len));
    double sum = 0.0;
    for (int i = 0; i < len; ++i) {
        wgt[size_t(i)] = std::exp(-0.5 * double(i) * i / (sigma * sigma));
        sum += wgt[size_t(i)];
    }
    for (auto& v : wgt) v /= sum;
    const double a = angle_deg * M_PI / 180.0;
    const double dx = std::cos(a), dy = -std::sin(a);
    FImage out(src.h, src.w);
    for (int y = 0; y < src.h; ++y)
        for (int x = 0; x < src.w; ++x)
            for (int c = 0; c < 3; ++c) {
                double acc = 0.0;
                for (int i = 0; i < len; ++i)
                    acc += wgt[size_t(i)] * bilinear_at(src, y + dy * i, x + dx * i, c);
                out.at(y, x, c) = acc;
            }
    return out;
}

// diamond-square heightmap with wraparound, min-max normalized to [0,1]
std::vector<double> plasma_fractal(int mapsize, double wibbledecay, Rng& rng) {
    std::vector<double> map(size_t(mapsize) * mapsize, 0.0);
    auto at = [&map, mapsize](int i, int j) -> double& {
        return map[size_t(i) * mapsize + j];
    };
    int step = mapsize;
    double wibble = 100.0;
    while (step >= 2) {
        const int n = mapsize / step;
        const int half = step / 2;
        // square centers from the four wrapped corners
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) {
                const double sum = at(i * step, j * step) + at(((i - 1 + n) % n) * step, j * step) +
                                   at(i * step, ((j - 1 + n) % n) * step) +
                                   at(((i - 1 + n) % n) * step, ((j - 1 + n) % n) * step);
                at(half + i * step, half + j * step) = sum / 4.0 + rng.uniform(-wibble, wibble);
            }
        // diamond centers
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) {
                const double dr = at(half + i * step, half + j * step);
                const double dr_up = at(half + ((i - 1 + n) % n) * step, half + j * step);
                const double ul = at(i * step, j * step);
                const double ul_right = at(i * step, ((j + 1) % n) * step);
                at(i * step, half + j * step) =
                    (dr + dr_up + ul + ul_right) / 4.0 + rng.uniform(-wibble, wibble);
            }
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) {
                const double dr = at(half + i * step, half + j * step);
                const double dr_left = at(half + i * step, half + ((j - 1 + n) % n) * step);
                const double ul = at(i * step, j * step);
                const double ul_down = at(((i + 1) % n) * step, j * step);
                at(half + i * step, j * step) =
                    (dr + dr_left + ul + ul_down) / 4.0 + rng.uniform(-wibble, wibble);
            }
        step /= 2;
        wibble /= wibbledecay;
    }
    const auto [mn, mx] = std::minmax_element(map.begin(), map.end());
    const double lo = *mn, span = *mx - lo;
    for (auto& v : map) v = span > 0 ? (v - lo) / span : 0.0;
    return map;
}

int next_pow2(int v) {
    int p = 1;
    while (p < v) p *= 2;
    return p;
}

// ---------------------------------------------------------------------------
// severity tables (ImageNet-C constants; elastic uses a size-relative
// monotone family, see README)

const double kGaussianSigma[5] = {0.08, 0.12, 0.18, 0.26, 0.38};
const double kShotC[5] = {60, 25, 12, 5, 3};
const double kImpulseAmount[5] = {0.03, 0.06, 0.09, 0.17, 0.27};
const double kDefocus[5][2] = {{3, 0.1}, {4, 0.5}, {6, 0.5}, {8, 0.5}, {10, 0.5}};
const double kGlass[5][3] = {{0.7, 1, 2}, {0.9, 2, 1}, {1.0, 2, 3}, {1.1, 3, 2}, {1.5, 4, 2}};
const double kMotion[5][2] = {{10, 3}, {15, 5}, {15, 8}, {15, 12}, {20, 15}};
const int kZoomCount[5] = {11, 16, 11, 13, 11};
const double kZoomStep[5] = {0.01, 0.01, 0.02, 0.02, 0.03};
const double kSnow[5][7] = {{0.1, 0.3, 3, 0.5, 10, 4, 0.8},
                            {0.2, 0.3, 2, 0.5, 12, 4, 0.7},
                            {0.55, 0.3, 4, 0.9, 12, 8, 0.7},
                            {0.55, 0.3, 4.5, 0.85, 12, 8, 0.65},
                            {0.55, 0.3, 2.5, 0.85, 12, 12, 0.55}};
const double kFrost[5][2] = {{1, 0.4}, {0.8, 0.6}, {0.7, 0.7}, {0.65, 0.7}, {0.6, 0.75}};
const double kFog[5][2] = {{1.5, 2}, {2.0, 2}, {2.5, 1.7}, {2.5, 1.5}, {3.0, 1.4}};
const double kBrightness[5] = {0.1, 0.2, 0.3, 0.4, 0.5};
const double kContrast[5] = {0.4, 0.3, 0.2, 0.1, 0.05};
const double kElastic[5][3] = {{0.02, 0.01, 0.007},
                               {0.035, 0.01, 0.013},
                               {0.05, 0.01, 0.02},
                               {0.07, 0.01, 0.02},
                               {0.12, 0.01, 0.04}};
const double kPixelate[5] = {0.6, 0.5, 0.4, 0.3, 0.25};
const int kJpegQuality[5] = {25, 18, 15, 10, 7};

// ---------------------------------------------------------------------------
// the 15 kinds

FImage apply_gaussian_noise(const FImage& x, int sev, Rng& rng) {
    const double c = kGaussianSigma[sev - 1];
    FImage out = x;
    for (auto& v : out.px) v += rng.normal(0.0, c);
    return out;
}

FImage apply_shot_noise(const FImage& x, int sev, Rng& rng) {
    const double c = kShotC[sev - 1];
    FImage out = x;
    for (auto& v : out.px) v = rng.poisson(std::max(0.0, v) * c) / c;
    return out;
}

FImage apply_impulse_noise(const FImage& x, int sev, Rng& rng) {
    const double amount = kImpulseAmount[sev - 1];
    FImage out = x;
    for (auto& v : out.px) {
        const double u = rng.uniform();
        if (u < amount * 0.5)
            v = 0.0;
        else if (u > 1.0 - amount * 0.5)
            v = 1.0;
    }
    return out;
}

FImage apply_defocus(const FImage& x, int sev) {
    const double radius = kDefocus[sev - 1][0];
    const double alias = kDefocus[sev - 1][1];
    const int L = radius <= 8 ? 8 : int(radius);
    const int side = 2 * L + 1;
    std::vector<double> disk(size_t(side) * side, 0.0);
    double sum = 0.0;
    for (int i = -L; i <= L; ++i)
        for (int j = -L; j <= L; ++j)
            if (double(i) * i + double(j) * j <= radius * radius) {
                disk[size_t(i + L) * side + (j + L)] = 1.0;
                sum += 1.0;
            }
    for (auto& v : disk) v /= sum;
    // aliased disk smoothed by a small fixed-width gaussian, as the reference
    // kernel builder does
    const int ks = radius <= 8 ? 3 : 5;
    std::vector<double> g1(size_t(ks));
    double gs = 0.0;
    for (int i = 0; i < ks; ++i) {
        const double d = double(i - ks / 2);
        g1[size_t(i)] = std::exp(-0.5 * d * d / (alias * alias));
        gs += g1[size_t(i)];
    }
    for (auto& v : g1) v /= gs;
    std::vector<double> smoothed(disk.size(), 0.0);
    for (int i = 0; i < side; ++i)
        for (int j = 0; j < side; ++j) {
            double acc = 0.0;
            for (int a = 0; a < ks; ++a)
                for (int b = 0; b < ks; ++b)
                    acc += g1[size_t(a)] * g1[size_t(b)] *
                           disk[size_t(reflect101_idx(i + a - ks / 2, side)) * side +
                                reflect101_idx(j + b - ks / 2, side)];
            smoothed[size_t(i) * side + j] = acc;
        }
    return convolve2d(x, smoothed, side, side);
}

FImage apply_glass(const FImage& x, int sev, Rng& rng) {
    const double sigma = kGlass[sev - 1][0];
    const int delta = int(kGlass[sev - 1][1]);
    const int iters = int(kGlass[sev - 1][2]);
    FImage out = gaussian_blur(x, sigma);
    for (int it = 0; it < iters; ++it)
        for (int hh = out.h - delta; hh > delta; --hh)
            for (int ww = out.w - delta; ww > delta; --ww) {
                const int dx = rng.uniform_int(-delta, delta - 1);
                const int dy = rng.uniform_int(-delta, delta - 1);
                const int h2 = hh + dy, w2 = ww + dx;
                for (int c = 0; c < 3; ++c) std::swap(out.at(hh, ww, c), out.at(h2, w2, c));
            }
    return gaussian_blur(out, sigma);
}

FImage apply_motion(const FImage& x, int sev, Rng& rng) {
    const double radius = kMotion[sev - 1][0];
    const double sigma = kMotion[sev - 1][1];
    const double angle = rng.uniform(-45.0, 45.0);
    return motion_blur_image(x, radius, sigma, angle);
}

FImage apply_zoom_blur(const FImage& x, int sev) {
    // mean of the original plus every zoomed copy (zoom factor 1 included)
    FImage acc = x;
    for (int i = 0; i < kZoomCount[sev - 1]; ++i) {
        const double z = 1.0 + i * kZoomStep[sev - 1];
        const FImage zoomed = clipped_zoom(x, z);
        for (size_t k = 0; k < acc.px.size(); ++k) acc.px[k] += zoomed.px[k];
    }
    const double n = double(kZoomCount[sev - 1] + 1);
    for (auto& v : acc.px) v /= n;
    return acc;
}

FImage apply_snow(const FImage& x, int sev, Rng& rng) {
    const double* c = kSnow[sev - 1];
    FImage layer(x.h, x.w);
    for (int y = 0; y < x.h; ++y)
        for (int xx = 0; xx < x.w; ++xx) {
            const double v = rng.normal(c[0], c[1]);
            for (int ch = 0; ch < 3; ++ch) layer.at(y, xx, ch) = v;
        }
    layer = clipped_zoom(layer, c[2]);
    for (auto& v : layer.px) {
        if (v < c[3]) v = 0.0;
        v = std::clamp(v, 0.0, 1.0);
        v = std::round(v * 255.0) / 255.0;  // the reference routes the layer through uint8
    }
    const double angle = rng.uniform(-135.0, -45.0);
    layer = motion_blur_image(layer, c[4], c[5], angle);

    FImage out(x.h, x.w);
    for (int y = 0; y < x.h; ++y)
        for (int xx = 0; xx < x.w; ++xx) {
            const double gray = 0.299 * x.at(y, xx, 0) + 0.587 * x.at(y, xx, 1) +
                                0.114 * x.at(y, xx, 2);
            const double lift = gray * 1.5 + 0.5;
            for (int ch = 0; ch < 3; ++ch) {
                const double base = c[6] * x.at(y, xx, ch) +
                                    (1.0 - c[6]) * std::max(x.at(y, xx, ch), lift);
                const double flake = layer.at(y, xx, ch) +
                                     layer.at(x.h - 1 - y, x.w - 1 - xx, ch);  // rot180 pass
                out.at(y, xx, ch) = base + flake;
            }
        }
    return out;
}

// procedurally generated crystalline overlay in place of the reference's
// photographic frost assets
FImage frost_texture(int h, int w, Rng& rng) {
    std::vector<double> noise(size_t(h) * w);
    for (auto& v : noise) v = rng.uniform();
    const auto smooth = gaussian_blur_field(noise, h, w, 1.5, 4.0);
    const auto coarse = gaussian_blur_field(noise, h, w, 5.0, 4.0);
    double mn = 1e9, mx = -1e9;
    for (const auto& v : smooth) mn = std::min(mn, v), mx = std::max(mx, v);
    FImage tex(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double s = (smooth[size_t(y) * w + x] - mn) / std::max(1e-12, mx - mn);
            const double crystal = s > 0.62 ? 1.0 : 0.0;
            const double base = 0.35 + 0.25 * coarse[size_t(y) * w + x] + 0.45 * crystal;
            tex.at(y, x, 0) = 0.92 * base;
            tex.at(y, x, 1) = 0.97 * base;
            tex.at(y, x, 2) = base;  // icy blue tint
        }
    return gaussian_blur(tex, 0.8);
}

FImage apply_frost(const FImage& x, int sev, Rng& rng) {
    const double cx = kFrost[sev - 1][0], cf = kFrost[sev - 1][1];
    const FImage tex = frost_texture(x.h, x.w, rng);
    FImage out(x.h, x.w);
    for (size_t i = 0; i < out.px.size(); ++i) out.px[i] = cx * x.px[i] + cf * tex.px[i];
    return out;
}

FImage apply_fog(const FImage& x, int sev, Rng& rng) {
    const double c0 = kFog[sev - 1][0], decay = kFog[sev - 1][1];
    const int mapsize = next_pow2(std::max({x.h, x.w, 16}));
    const auto plasma = plasma_fractal(mapsize, decay, rng);
    double max_val = 0.0;
    for (const auto& v : x.px) max_val = std::max(max_val, v);
    FImage out = x;
    for (int y = 0; y < x.h; ++y)
        for (int xx = 0; xx < x.w; ++xx) {
            const double f = c0 * plasma[size_t(y) * mapsize + xx];
            for (int ch = 0; ch < 3; ++ch) out.at(y, xx, ch) += f;
        }
    const double rescale = max_val / (max_val + c0);
    for (auto& v : out.px) v *= rescale;
    return out;
}

FImage apply_brightness(const FImage& x, int sev) {
    const double c = kBrightness[sev - 1];
    FImage out(x.h, x.w);
    for (int y = 0; y < x.h; ++y)
        for (int xx = 0; xx < x.w; ++xx) {
            double h, s, v;
            rgb_to_hsv(x.at(y, xx, 0), x.at(y, xx, 1), x.at(y, xx, 2), h, s, v);
            v = std::clamp(v + c, 0.0, 1.0);
            double r, g, b;
            hsv_to_rgb(h, s, v, r, g, b);
            out.at(y, xx, 0) = r;
            out.at(y, xx, 1) = g;
            out.at(y, xx, 2) = b;
        }
    return out;
}

FImage apply_contrast(const FImage& x, int sev) {
    const double c = kContrast[sev - 1];
    double mean[3] = {0, 0, 0};
    for (int y = 0; y < x.h; ++y)
        for (int xx = 0; xx < x.w; ++xx)
            for (int ch = 0; ch < 3; ++ch) mean[ch] += x.at(y, xx, ch);
    for (int ch = 0; ch < 3; ++ch) mean[ch] /= double(x.h) * x.w;
    FImage out(x.h, x.w);
    for (int y = 0; y < x.h; ++y)
        for (int xx = 0; xx < x.w; ++xx)
            for (int ch = 0; ch < 3; ++ch)
                out.at(y, xx, ch) = (x.at(y, xx, ch) - mean[ch]) * c + mean[ch];
    return out;
}

FImage apply_elastic(const FImage& x, int sev, Rng& rng) {
    const int dim = std::min(x.h, x.w);
    const double alpha = kElastic[sev - 1][0] * dim;
    const double sigma = std::max(kElastic[sev - 1][1] * dim, 0.5);
    const double jitter = kElastic[sev - 1][2] * dim;

    // random affine from three jittered control points around the center square
    const double cy = x.h / 2.0, cx = x.w / 2.0;
    const double sq = dim / 3.0;
    const double pts1[3][2] = {{cy + sq, cx + sq}, {cy - sq, cx + sq}, {cy - sq, cx - sq}};
    double pts2[3][2];
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 2; ++j) pts2[i][j] = pts1[i][j] + rng.uniform(-jitter, jitter);

    // solve the inverse map dst -> src: src = M * (dst_y, dst_x, 1)
    Eigen::Matrix3d P;
    Eigen::Vector3d qy, qx;
    for (int i = 0; i < 3; ++i) {
        P(i, 0) = pts2[i][0];
        P(i, 1) = pts2[i][1];
        P(i, 2) = 1.0;
        qy(i) = pts1[i][0];
        qx(i) = pts1[i][1];
    }
    const Eigen::Vector3d my = P.colPivHouseholderQr().solve(qy);
    const Eigen::Vector3d mx = P.colPivHouseholderQr().solve(qx);

    FImage warped(x.h, x.w);
    for (int y = 0; y < x.h; ++y)
        for (int xx = 0; xx < x.w; ++xx) {
            const double sy = my(0) * y + my(1) * xx + my(2);
            const double sx = mx(0) * y + mx(1) * xx + mx(2);
            for (int c = 0; c < 3; ++c) warped.at(y, xx, c) = bilinear_at(x, sy, sx, c);
        }

    // gaussian-smoothed displacement fields
    std::vector<double> dxf(size_t(x.h) * x.w), dyf(size_t(x.h) * x.w);
    for (auto& v : dxf) v = rng.uniform(-1.0, 1.0);
    for (auto& v : dyf) v = rng.uniform(-1.0, 1.0);
    dxf = gaussian_blur_field(dxf, x.h, x.w, sigma, 3.0);
    dyf = gaussian_blur_field(dyf, x.h, x.w, sigma, 3.0);

    FImage out(x.h, x.w);
    for (int y = 0; y < x.h; ++y)
        for (int xx = 0; xx < x.w; ++xx) {
            const double sy = y + alpha * dyf[size_t(y) * x.w + xx];
            const double sx = xx + alpha * dxf[size_t(y) * x.w + xx];
            for (int c = 0; c < 3; ++c) out.at(y, xx, c) = bilinear_at(warped, sy, sx, c);
        }
    return out;
}

FImage apply_pixelate(const FImage& x, int sev) {
    const double c = kPixelate[sev - 1];
    const int sh = std::max(1, int(x.h * c));
    const int sw = std::max(1, int(x.w * c));
    return resize_box(resize_box(x, sh, sw), x.h, x.w);
}

ImageInput apply_jpeg(const ImageInput& img, int sev) {
    const int quality = kJpegQuality[sev - 1];

    // encode
    jpeg_compress_struct cinfo;
    jpeg_error_mgr jerr;
    cinfo.err = jpeg_std_error(&jerr);
    jpeg_create_compress(&cinfo);
    unsigned char* buf = nullptr;
    unsigned long buf_size = 0;
    jpeg_mem_dest(&cinfo, &buf, &buf_size);
    cinfo.image_width = JDIMENSION(img.width);
    cinfo.image_height = JDIMENSION(img.height);
    cinfo.input_components = 3;
    cinfo.in_color_space = JCS_RGB;
    jpeg_set_defaults(&cinfo);
    jpeg_set_quality(&cinfo, quality, TRUE);
    jpeg_start_compress(&cinfo, TRUE);
    std::vector<uint8_t> row_buf(img.pixels);
    while (cinfo.next_scanline < cinfo.image_height) {
        JSAMPROW row = row_buf.data() + size_t(cinfo.next_scanline) * img.width * 3;
        jpeg_write_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_compress(&cinfo);
    jpeg_destroy_compress(&cinfo);

    // decode
    jpeg_decompress_struct dinfo;
    jpeg_error_mgr derr;
    dinfo.err = jpeg_std_error(&derr);
    jpeg_create_decompress(&dinfo);
    jpeg_mem_src(&dinfo, buf, buf_size);
    jpeg_read_header(&dinfo, TRUE);
    dinfo.out_color_space = JCS_RGB;
    jpeg_start_decompress(&dinfo);
    ImageInput out(img.id, int(dinfo.output_height), int(dinfo.output_width));
    while (dinfo.output_scanline < dinfo.output_height) {
        JSAMPROW row = out.pixels.data() + size_t(dinfo.output_scanline) * out.width * 3;
        jpeg_read_scanlines(&dinfo, &row, 1);
    }
    jpeg_finish_decompress(&dinfo);
    jpeg_destroy_decompress(&dinfo);
    free(buf);
    return out;
}

int min_side_for(CorruptionKind kind, int severity) {
    switch (kind) {
        case CorruptionKind::defocus_blur:
            return 2 * (kDefocus[severity - 1][0] <= 8 ? 8 : int(kDefocus[severity - 1][0])) + 1;
        case CorruptionKind::motion_blur:
            return 2 * int(kMotion[severity - 1][0]) + 1;
        case CorruptionKind::snow:
            return 2 * int(kSnow[severity - 1][4]) + 1;
        case CorruptionKind::glass_blur:
            return 2 * int(kGlass[severity - 1][1]) + 3;
        case CorruptionKind::elastic_transform:
            return 6;  // center square needs a nonzero side
        default:
            return 2;
    }
}

}  // namespace

// ---------------------------------------------------------------------------

const std::array<CorruptionKind, kNumCorruptionKinds> kAllCorruptionKinds = {
    CorruptionKind::gaussian_noise, CorruptionKind::shot_noise,    CorruptionKind::impulse_noise,
    CorruptionKind::defocus_blur,   CorruptionKind::glass_blur,    CorruptionKind::motion_blur,
    CorruptionKind::zoom_blur,      CorruptionKind::snow,          CorruptionKind::frost,
    CorruptionKind::fog,            CorruptionKind::brightness,    CorruptionKind::contrast,
    CorruptionKind::elastic_transform, CorruptionKind::pixelate,   CorruptionKind::jpeg_compression,
};

std::string corruption_name(CorruptionKind kind) {
    switch (kind) {
        case CorruptionKind::gaussian_noise: return "gaussian_noise";
        case CorruptionKind::shot_noise: return "shot_noise";
        case CorruptionKind::impulse_noise: return "impulse_noise";
        case CorruptionKind::defocus_blur: return "defocus_blur";
        case CorruptionKind::glass_blur: return "glass_blur";
        case CorruptionKind::motion_blur: return "motion_blur";
        case CorruptionKind::zoom_blur: return "zoom_blur";
        case CorruptionKind::snow: return "snow";
        case CorruptionKind::frost: return "frost";
        case CorruptionKind::fog: return "fog";
        case CorruptionKind::brightness: return "brightness";
        case CorruptionKind::contrast: return "contrast";
        case CorruptionKind::elastic_transform: return "elastic_transform";
        case CorruptionKind::pixelate: return "pixelate";
        case CorruptionKind::jpeg_compression: return "jpeg_compression";
    }
    throw ConfigError("bad corruption kind");
}

CorruptionKind corruption_from_name(const std::string& name) {
    for (const auto k : kAllCorruptionKinds)
        if (corruption_name(k) == name) return k;
    throw ConfigError("unknown corruption kind: " + name);
}

std::string corruption_abbrev(CorruptionKind kind) {
    switch (kind) {
        case CorruptionKind::brightness: return "brigh";
        case CorruptionKind::contrast: return "cont";
        case CorruptionKind::defocus_blur: return "defoc";
        case CorruptionKind::elastic_transform: return "elast";
        case CorruptionKind::fog: return "fog";
        case CorruptionKind::frost: return "frost";
        case CorruptionKind::gaussian_noise: return "gauss";
        case CorruptionKind::glass_blur: return "glass";
        case CorruptionKind::impulse_noise: return "impul";
        case CorruptionKind::jpeg_compression: return "jpeg";
        case CorruptionKind::motion_blur: return "motn";
        case CorruptionKind::pixelate: return "pixel";
        case CorruptionKind::shot_noise: return "shot";
        case CorruptionKind::snow: return "snow";
        case CorruptionKind::zoom_blur: return "zoom";
    }
    throw ConfigError("bad corruption kind");
}

bool corruption_is_stochastic(CorruptionKind kind) {
    switch (kind) {
        case CorruptionKind::gaussian_noise:
        case CorruptionKind::shot_noise:
        case CorruptionKind::impulse_noise:
        case CorruptionKind::glass_blur:
        case CorruptionKind::motion_blur:
        case CorruptionKind::snow:
        case CorruptionKind::frost:
        case CorruptionKind::fog:
        case CorruptionKind::elastic_transform:
            return true;
        default:
            return false;
    }
}

void CorruptionSpec::validate() const {
    // 0 is the internal identity convenience; the public range is [1,5]
    if (severity < 0 || severity > 5) throw ConfigError("severity out of range [1,5]");
}

std::string CorruptionSpec::tag() const {
    return corruption_name(kind) + "_s" + std::to_string(severity);
}

ImageInput corrupt(const ImageInput& image, const CorruptionSpec& spec) {
    spec.validate();
    if (image.height < 1 || image.width < 1 || image.pixels.empty())
        throw ConfigError("corrupt: empty image");
    if (spec.severity == 0) {  // internal identity convenience
        ImageInput out = image;
        return out;
    }
    const int need = min_side_for(spec.kind, spec.severity);
    if (std::min(image.height, image.width) < need)
        throw ConfigError("image " + image.id + " smaller than minimum support (" +
                          std::to_string(need) + ") for " + corruption_name(spec.kind));

    Rng rng(mix_seed(uint64_t(spec.seed), fnv1a64(corruption_name(spec.kind)),
                     uint64_t(spec.severity)));

    if (spec.kind == CorruptionKind::jpeg_compression) return apply_jpeg(image, spec.severity);

    const FImage x = to_float(image);
    FImage y;
    switch (spec.kind) {
        case CorruptionKind::gaussian_noise: y = apply_gaussian_noise(x, spec.severity, rng); break;
        case CorruptionKind::shot_noise: y = apply_shot_noise(x, spec.severity, rng); break;
        case CorruptionKind::impulse_noise: y = apply_impulse_noise(x, spec.severity, rng); break;
        case CorruptionKind::defocus_blur: y = apply_defocus(x, spec.severity); break;
        case CorruptionKind::glass_blur: y = apply_glass(x, spec.severity, rng); break;
        case CorruptionKind::motion_blur: y = apply_motion(x, spec.severity, rng); break;
        case CorruptionKind::zoom_blur: y = apply_zoom_blur(x, spec.severity); break;
        case CorruptionKind::snow: y = apply_snow(x, spec.severity, rng); break;
        case CorruptionKind::frost: y = apply_frost(x, spec.severity, rng); break;
        case CorruptionKind::fog: y = apply_fog(x, spec.severity, rng); break;
        case CorruptionKind::brightness: y = apply_brightness(x, spec.severity); break;
        case CorruptionKind::contrast: y = apply_contrast(x, spec.severity); break;
        case CorruptionKind::elastic_transform: y = apply_elastic(x, spec.severity, rng); break;
        case CorruptionKind::pixelate: y = apply_pixelate(x, spec.severity); break;
        case CorruptionKind::jpeg_compression: break;  // handled above
    }
    return from_float(y, image.id);
}

std::vector<CorruptionManifestEntry> corrupt_dataset(const std::vector<ImageInput>& images,
                                                     const std::vector<CorruptionKind>& kinds,
                                                     const std::vector<int>& severities, long seed,
                                                     const std::string& out_dir) {
    ensure_dir(out_dir);
    std::vector<CorruptionManifestEntry> manifest;
    std::ostringstream jsonl;
    for (const auto& img : images)
        for (const auto kind : kinds)
            for (const int sev : severities) {
                CorruptionSpec spec;
                spec.kind = kind;
                spec.severity = sev;
                spec.seed = long(mix_seed(uint64_t(seed), fnv1a64(img.id)));
                const ImageInput out = corrupt(img, spec);
                CorruptionManifestEntry e;
                e.source_id = img.id;
                e.kind = corruption_name(kind);
                e.severity = sev;
                e.seed = spec.seed;
                e.abbrev = corruption_abbrev(kind);
                e.file = img.id + "__" + spec.tag() + ".ppm";
                const std::string path = out_dir + "/" + e.file;
                write_ppm(out, path);
                e.sha256 = sha256_file(path);
                manifest.push_back(e);

                nlohmann::json j;
                j["source_id"] = e.source_id;
                j["kind"] = e.kind;
                j["severity"] = e.severity;
                j["seed"] = e.seed;
                j["file"] = e.file;
                j["sha256"] = e.sha256;
                j["abbrev"] = e.abbrev;
                jsonl << j.dump() << "\n";
            }
    atomic_write_file(out_dir + "/manifest.jsonl", jsonl.str());
    return manifest;
}

}  // namespace ttcap
