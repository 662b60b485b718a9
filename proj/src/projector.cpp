#include "ctml/projector.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

#include "ctml/errors.hpp"
#include "ctml/fft.hpp"
#include "ctml/parallel.hpp"

namespace ctml {

std::string to_string(Window w)
{
    return w == Window::ram_lak ? "ram-lak" : "hann";
}

Window window_from_string(const std::string& s)
{
    if (s == "ram-lak") return Window::ram_lak;
    if (s == "hann") return Window::hann;
    throw config_error("unknown filter window \"" + s + "\"");
}

namespace {

constexpr double kPi = std::numbers::pi;

// Views per reduction block in back_project. Fixed so that the per-pixel
// accumulation order (blocks in order, views within a block in order) does
// not depend on the thread count.
constexpr int kViewBlock = 16;

struct Ray {
    double px, py; // a point on the ray
    double dx, dy; // unit direction
};

Ray make_ray(const ScanGeometry& g, int view, int det)
{
    if (g.beam_mode == BeamMode::parallel) {
        const double th = g.view_angle_rad(view);
        const double c = std::cos(th), s = std::sin(th);
        const double t = (det - 0.5 * (g.n_detectors - 1)) * g.detector_spacing;
        return Ray{t * c, t * s, -s, c};
    }
    const double beta = g.view_angle_rad(view);
    const double gamma =
        (det - 0.5 * (g.n_detectors - 1)) * g.fan_increment_deg * kPi / 180.0;
    // source on the scan circle; central ray direction -(cos b, sin b) rotated
    // by the fan angle gamma
    return Ray{g.source_to_center * std::cos(beta), g.source_to_center * std::sin(beta),
               -std::cos(beta + gamma), -std::sin(beta + gamma)};
}

// Optional per-pixel backprojection weight coeff / |pixel - source|, used by
// the fan-beam FBP and its transpose. Must be evaluated identically on the
// gather and scatter sides so the two stay exact transposes of each other.
struct PixelWeight {
    bool enabled = false;
    double coeff = 1.0;
    double sx = 0.0, sy = 0.0;
};

// Joseph traversal: visit the two interpolation pixels of every major-axis
// step. f(ix, iy, w) with w = interpolation weight times step length.
template <typename F>
inline void for_each_sample(int n, double pix, const Ray& ray, F&& f)
{
    const double c = 0.5 * (n - 1);
    if (std::abs(ray.dy) >= std::abs(ray.dx)) {
        const double wstep = pix / std::abs(ray.dy);
        const double inv_dy = 1.0 / ray.dy;
        for (int iy = 0; iy < n; ++iy) {
            const double s = ((iy - c) * pix - ray.py) * inv_dy;
            const double gx = (ray.px + s * ray.dx) / pix + c;
            if (!(gx >= 0.0 && gx <= n - 1.0)) continue;
            int ix0 = static_cast<int>(gx);
            double u = gx - ix0;
            if (ix0 >= n - 1) {
                if (n == 1) {
                    f(0, iy, wstep);
                    continue;
                }
                ix0 = n - 2;
                u = 1.0;
            }
            f(ix0, iy, (1.0 - u) * wstep);
            f(ix0 + 1, iy, u * wstep);
        }
    } else {
        const double wstep = pix / std::abs(ray.dx);
        const double inv_dx = 1.0 / ray.dx;
        for (int ix = 0; ix < n; ++ix) {
            const double s = ((ix - c) * pix - ray.px) * inv_dx;
            const double gy = (ray.py + s * ray.dy) / pix + c;
            if (!(gy >= 0.0 && gy <= n - 1.0)) continue;
            int iy0 = static_cast<int>(gy);
            double v = gy - iy0;
            if (iy0 >= n - 1) {
                if (n == 1) {
                    f(ix, 0, wstep);
                    continue;
                }
                iy0 = n - 2;
                v = 1.0;
            }
            f(ix, iy0, (1.0 - v) * wstep);
            f(ix, iy0 + 1, v * wstep);
        }
    }
}

inline double pixel_weight(const PixelWeight& pw, int ix, int iy, int n, double pix)
{
    if (!pw.enabled) return 1.0;
    const double c = 0.5 * (n - 1);
    const double x = (ix - c) * pix - pw.sx;
    const double y = (iy - c) * pix - pw.sy;
    return pw.coeff / std::sqrt(x * x + y * y);
}

void check_image(const ImageGrid& img, const ScanGeometry& geom)
{
    if (img.n != geom.grid_size || img.pixel_size != geom.pixel_size)
        throw dimension_error("image grid " + std::to_string(img.n) + " px @ " +
                              std::to_string(img.pixel_size) +
                              " does not match geometry grid " +
                              std::to_string(geom.grid_size) + " px @ " +
                              std::to_string(geom.pixel_size));
}

void check_sinogram(const Sinogram& p, const ScanGeometry& geom)
{
    if (!(p.geom == geom))
        throw dimension_error("sinogram geometry differs from operator geometry");
    if (p.v.size() != static_cast<size_t>(geom.n_views) * geom.n_detectors)
        throw dimension_error("sinogram payload size does not match its geometry");
}

double project_one_ray(const double* img, int n, double pix, const Ray& ray,
                       const PixelWeight& pw)
{
    double sum = 0.0;
    for_each_sample(n, pix, ray, [&](int ix, int iy, double w) {
        sum += w * pixel_weight(pw, ix, iy, n, pix) * img[static_cast<size_t>(iy) * n + ix];
    });
    return sum;
}

void scatter_one_ray(double* img, int n, double pix, const Ray& ray, double value,
                     const PixelWeight& pw)
{
    for_each_sample(n, pix, ray, [&](int ix, int iy, double w) {
        img[static_cast<size_t>(iy) * n + ix] += w * pixel_weight(pw, ix, iy, n, pix) * value;
    });
}

PixelWeight weight_for_view(const ScanGeometry& g, int view, bool enabled)
{
    if (!enabled) return PixelWeight{};
    const double beta = g.view_angle_rad(view);
    const double dgamma = g.fan_increment_deg * kPi / 180.0;
    return PixelWeight{true, dgamma / (g.pixel_size * g.pixel_size),
                       g.source_to_center * std::cos(beta),
                       g.source_to_center * std::sin(beta)};
}

Sinogram project_impl(const ImageGrid& img, const ScanGeometry& geom, bool fan_weights,
                      bool threaded)
{
    geom.validate();
    check_image(img, geom);
    Sinogram out = Sinogram::zeros(geom);
    const int nv = geom.n_views, nd = geom.n_detectors, n = geom.grid_size;
    const double pix = geom.pixel_size;
    const double* src = img.v.data();

#pragma omp parallel for num_threads(max_threads()) schedule(static) if (threaded)
    for (int view = 0; view < nv; ++view) {
        const PixelWeight pw = weight_for_view(geom, view, fan_weights);
        double* row = out.v.data() + static_cast<size_t>(view) * nd;
        for (int det = 0; det < nd; ++det)
            row[det] = project_one_ray(src, n, pix, make_ray(geom, view, det), pw);
    }
    return out;
}

// Scatter adjoint. Each view accumulates into its own buffer and the buffers
// are folded into the result in view order, so serial and threaded runs agree
// bitwise.
ImageGrid backproject_impl(const Sinogram& p, const ScanGeometry& geom, bool fan_weights,
                           bool threaded)
{
    geom.validate();
    check_sinogram(p, geom);
    const int nv = geom.n_views, nd = geom.n_detectors, n = geom.grid_size;
    const double pix = geom.pixel_size;
    const size_t npix = static_cast<size_t>(n) * n;

    ImageGrid img = ImageGrid::zeros(n, pix);
    std::vector<std::vector<double>> partial(kViewBlock, std::vector<double>(npix, 0.0));

    for (int base = 0; base < nv; base += kViewBlock) {
        const int bc = std::min(kViewBlock, nv - base);

#pragma omp parallel for num_threads(max_threads()) schedule(static) if (threaded)
        for (int b = 0; b < bc; ++b) {
            auto& buf = partial[b];
            std::fill(buf.begin(), buf.end(), 0.0);
            const int view = base + b;
            const PixelWeight pw = weight_for_view(geom, view, fan_weights);
            const double* row = p.v.data() + static_cast<size_t>(view) * nd;
            for (int det = 0; det < nd; ++det) {
                if (row[det] == 0.0) continue;
                scatter_one_ray(buf.data(), n, pix, make_ray(geom, view, det), row[det], pw);
            }
        }

#pragma omp parallel for num_threads(max_threads()) schedule(static) if (threaded)
        for (long long q = 0; q < static_cast<long long>(npix); ++q) {
            double acc = img.v[q];
            for (int b = 0; b < bc; ++b) acc += partial[b][q];
            img.v[q] = acc;
        }
    }
    return img;
}

// Sample spacing seen by the ramp filter: detector pitch for parallel rays,
// the angular detector increment (radians) for the equiangular fan, matching
// the fan FBP weighting below.
double filter_spacing(const ScanGeometry& g)
{
    return g.beam_mode == BeamMode::parallel ? g.detector_spacing
                                             : g.fan_increment_deg * kPi / 180.0;
}

std::vector<double> ramp_multiplier(int m, double ds, Window window)
{
    std::vector<double> mult(m);
    for (int j = 0; j < m; ++j) {
        const double fj = (j <= m / 2 ? j : m - j) / static_cast<double>(m); // cycles/sample
        double v = fj / ds;
        if (window == Window::hann) v *= 0.5 * (1.0 + std::cos(2.0 * kPi * fj));
        mult[j] = v;
    }
    return mult;
}

Sinogram ramp_impl(const Sinogram& p, Window window, bool threaded)
{
    p.geom.validate();
    const int nd = p.geom.n_detectors, nv = p.geom.n_views;
    if (nd < 2) throw config_error("ramp_filter needs at least 2 detectors");

    const int m = next_pow2(2 * nd);
    const std::vector<double> mult = ramp_multiplier(m, filter_spacing(p.geom), window);

    Sinogram out = Sinogram::zeros(p.geom);
#pragma omp parallel for num_threads(max_threads()) schedule(static) if (threaded)
    for (int view = 0; view < nv; ++view) {
        std::vector<std::complex<double>> buf(m, {0.0, 0.0});
        const double* src = p.v.data() + static_cast<size_t>(view) * nd;
        for (int k = 0; k < nd; ++k) buf[k] = src[k];
        fft_inplace(buf, false);
        for (int j = 0; j < m; ++j) buf[j] *= mult[j];
        fft_inplace(buf, true);
        double* dst = out.v.data() + static_cast<size_t>(view) * nd;
        for (int k = 0; k < nd; ++k) dst[k] = buf[k].real();
    }
    return out;
}

// Double-coverage correction for the view-integration scale: 1/2 for a full
// circle, 1 for arcs up to 180 degrees, interpolated in between.
double coverage_factor(double extent_deg)
{
    return std::min(1.0, 180.0 / std::min(std::abs(extent_deg), 360.0));
}

Sinogram fan_preweighted(const Sinogram& p)
{
    const auto& g = p.geom;
    Sinogram out = p;
    std::vector<double> w(g.n_detectors);
    for (int k = 0; k < g.n_detectors; ++k) {
        const double gamma = (k - 0.5 * (g.n_detectors - 1)) * g.fan_increment_deg * kPi / 180.0;
        w[k] = g.source_to_center * std::cos(gamma);
    }
    for (int view = 0; view < g.n_views; ++view)
        for (int k = 0; k < g.n_detectors; ++k) out.at(view, k) *= w[k];
    return out;
}

double fbp_scale(const ScanGeometry& g)
{
    const double dview = g.angle_extent_deg / g.n_views * kPi / 180.0;
    double s = std::abs(dview) * coverage_factor(g.angle_extent_deg);
    if (g.beam_mode == BeamMode::parallel)
        s *= g.detector_spacing / (g.pixel_size * g.pixel_size);
    return s;
}

ImageGrid fbp_impl(const Sinogram& p, const ScanGeometry& geom, Window window, bool threaded)
{
    geom.validate();
    check_sinogram(p, geom);
    const bool fan = geom.beam_mode == BeamMode::fan_equiangular;
    const Sinogram filtered = ramp_impl(fan ? fan_preweighted(p) : p, window, threaded);
    ImageGrid img = backproject_impl(filtered, geom, fan, threaded);
    const double s = fbp_scale(geom);
    for (auto& x : img.v) x *= s;
    return img;
}

} // namespace

Sinogram forward_project(const ImageGrid& img, const ScanGeometry& geom)
{
    return project_impl(img, geom, false, true);
}

ImageGrid back_project(const Sinogram& p, const ScanGeometry& geom)
{
    return backproject_impl(p, geom, false, true);
}

Sinogram ramp_filter(const Sinogram& p, Window window)
{
    return ramp_impl(p, window, true);
}

ImageGrid fbp(const Sinogram& p, const ScanGeometry& geom, Window window)
{
    return fbp_impl(p, geom, window, true);
}

Sinogram fbp_adjoint(const ImageGrid& g, const ScanGeometry& geom, Window window)
{
    geom.validate();
    check_image(g, geom);
    const bool fan = geom.beam_mode == BeamMode::fan_equiangular;
    const double s = fbp_scale(geom);

    ImageGrid scaled = g;
    for (auto& x : scaled.v) x *= s;

    // Transpose of (scale * back_project_w * ramp * preweight): the weighted
    // forward projection, the (symmetric) ramp, then the diagonal pre-weight.
    Sinogram q = project_impl(scaled, geom, fan, true);
    q = ramp_impl(q, window, true);
    if (fan) q = fan_preweighted(q);
    return q;
}

namespace reference {

Sinogram forward_project(const ImageGrid& img, const ScanGeometry& geom)
{
    return project_impl(img, geom, false, false);
}

ImageGrid back_project(const Sinogram& p, const ScanGeometry& geom)
{
    return backproject_impl(p, geom, false, false);
}

Sinogram ramp_filter(const Sinogram& p, Window window)
{
    return ramp_impl(p, window, false);
}

ImageGrid fbp(const Sinogram& p, const ScanGeometry& geom, Window window)
{
    return fbp_impl(p, geom, window, false);
}

} // namespace reference

} // namespace ctml
