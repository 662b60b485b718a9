#pragma once

#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>
#include <vector>

#include "ctml/projector.hpp"
#include "ctml/rng.hpp"
#include "ctml/tensor.hpp"

namespace ctml::testing {

inline Tensor<double> random_tensor(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0)
{
    Tensor<double> t(s);
    for (auto& x : t.v) x = rng.uniform(lo, hi);
    return t;
}

inline ImageGrid random_image(int n, Rng& rng, double pixel_size = 1.0)
{
    ImageGrid img = ImageGrid::zeros(n, pixel_size);
    for (auto& v : img.v) v = rng.uniform(-1.0, 1.0);
    return img;
}

inline Sinogram random_sinogram(const ScanGeometry& g, Rng& rng)
{
    Sinogram p = Sinogram::zeros(g);
    for (auto& v : p.v) v = rng.uniform(-1.0, 1.0);
    return p;
}

// bilinear sample of the image treated as a continuous function of physical
// coordinates, zero outside the pixel-center hull
inline double bilinear(const ImageGrid& img, double x, double y)
{
    const double c = 0.5 * (img.n - 1);
    const double gx = x / img.pixel_size + c;
    const double gy = y / img.pixel_size + c;
    if (gx < 0.0 || gx > img.n - 1 || gy < 0.0 || gy > img.n - 1) return 0.0;
    int ix = static_cast<int>(gx), iy = static_cast<int>(gy);
    if (ix >= img.n - 1) ix = img.n - 2;
    if (iy >= img.n - 1) iy = img.n - 2;
    const double u = gx - ix, v = gy - iy;
    return (1 - v) * ((1 - u) * img.at(iy, ix) + u * img.at(iy, ix + 1)) +
           v * ((1 - u) * img.at(iy + 1, ix) + u * img.at(iy + 1, ix + 1));
}

struct OracleRay {
    double px, py, dx, dy;
};

// mirrors the documented acquisition convention: parallel rays along
// (-sin, cos) through t * (cos, sin); fan rays from the source on the scan
// circle through the rotated central direction
inline OracleRay oracle_ray(const ScanGeometry& g, int view, int det)
{
    const double kPi = std::numbers::pi;
    if (g.beam_mode == BeamMode::parallel) {
        const double th = g.view_angle_rad(view);
        const double t = (det - 0.5 * (g.n_detectors - 1)) * g.detector_spacing;
        return {t * std::cos(th), t * std::sin(th), -std::sin(th), std::cos(th)};
    }
    const double beta = g.view_angle_rad(view);
    const double gamma = (det - 0.5 * (g.n_detectors - 1)) * g.fan_increment_deg * kPi / 180.0;
    return {g.source_to_center * std::cos(beta), g.source_to_center * std::sin(beta),
            -std::cos(beta + gamma), -std::sin(beta + gamma)};
}

// brute-force line integral: march the bilinear-interpolated image along the
// ray at sub-pixel steps
inline double ray_integral_oracle(const ImageGrid& img, const OracleRay& ray,
                                  double step_fraction = 0.01)
{
    const double extent = img.n * img.pixel_size * 1.5;
    const double step = step_fraction * img.pixel_size;
    double acc = 0.0;
    for (double s = -extent; s <= extent; s += step)
        acc += bilinear(img, ray.px + s * ray.dx, ray.py + s * ray.dy);
    return acc * step;
}

// bilinear rotation about the grid center, CCW by angle_rad
inline ImageGrid rotate_image(const ImageGrid& img, double angle_rad)
{
    ImageGrid out = ImageGrid::zeros(img.n, img.pixel_size);
    const double c = 0.5 * (img.n - 1);
    const double ca = std::cos(angle_rad), sa = std::sin(angle_rad);
    for (int iy = 0; iy < img.n; ++iy)
        for (int ix = 0; ix < img.n; ++ix) {
            const double x = (ix - c) * img.pixel_size;
            const double y = (iy - c) * img.pixel_size;
            // inverse map: sample the source image at R(-angle) * (x, y)
            const double sx = ca * x + sa * y;
            const double sy = -sa * x + ca * y;
            out.at(iy, ix) = bilinear(img, sx, sy);
        }
    return out;
}

inline double rel_rms(const std::vector<double>& a, const std::vector<double>& b)
{
    double num = 0.0, den = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        num += (a[i] - b[i]) * (a[i] - b[i]);
        den += b[i] * b[i];
    }
    return std::sqrt(num / std::max(den, 1e-300));
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b)
{
    double acc = 0.0;
    for (size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

inline double norm2(const std::vector<double>& a)
{
    return std::sqrt(dot(a, a));
}

// scratch directory per test binary, wiped on construction
struct TempDir {
    std::filesystem::path path;
    explicit TempDir(const std::string& name)
        : path(std::filesystem::temp_directory_path() / name)
    {
        std::filesystem::remove_all(path);
        std::filesystem::create_directories(path);
    }
};

} // namespace ctml::testing
