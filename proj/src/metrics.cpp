#include "ctml/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "ctml/errors.hpp"
#include "ctml/parallel.hpp"

namespace ctml {

namespace {

void check_pair(const ImageGrid& x, const ImageGrid& ref)
{
    if (x.n != ref.n)
        throw dimension_error("image sizes differ: " + std::to_string(x.n) + " vs " +
                              std::to_string(ref.n));
}

} // namespace

double psnr(const ImageGrid& x, const ImageGrid& ref, double data_range)
{
    check_pair(x, ref);
    if (data_range <= 0.0) throw config_error("data_range must be > 0");
    double se = 0.0;
    for (size_t i = 0; i < x.v.size(); ++i) {
        const double d = x.v[i] - ref.v[i];
        se += d * d;
    }
    const double mse = se / static_cast<double>(x.v.size());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 20.0 * std::log10(data_range) - 10.0 * std::log10(mse);
}

double nmse(const ImageGrid& x, const ImageGrid& ref)
{
    check_pair(x, ref);
    double se = 0.0, re = 0.0;
    for (size_t i = 0; i < x.v.size(); ++i) {
        const double d = x.v[i] - ref.v[i];
        se += d * d;
        re += ref.v[i] * ref.v[i];
    }
    if (re == 0.0) throw numeric_error("nmse undefined for an all-zero reference");
    return se / re;
}

double ssim(const ImageGrid& x, const ImageGrid& ref, double data_range, const SsimConfig& cfg)
{
    check_pair(x, ref);
    if (data_range <= 0.0) throw config_error("data_range must be > 0");
    if (cfg.window_size < 1 || cfg.window_size % 2 == 0)
        throw config_error("ssim window size must be odd and positive");
    const int n = x.n, w = cfg.window_size, half = w / 2;
    if (n < w) throw dimension_error("image smaller than the ssim window");

    std::vector<double> kernel(w);
    double ksum = 0.0;
    for (int i = 0; i < w; ++i) {
        const double d = i - half;
        kernel[i] = std::exp(-0.5 * d * d / (cfg.sigma * cfg.sigma));
        ksum += kernel[i];
    }
    for (auto& k : kernel) k /= ksum;

    // separable Gaussian filtering of the five moment images, valid region only
    const int m = n - w + 1;
    auto filter = [&](const std::vector<double>& src) {
        std::vector<double> tmp(static_cast<size_t>(m) * n); // horizontal pass
#pragma omp parallel for num_threads(max_threads()) schedule(static)
        for (int iy = 0; iy < n; ++iy)
            for (int ox = 0; ox < m; ++ox) {
                double s = 0.0;
                for (int k = 0; k < w; ++k) s += kernel[k] * src[static_cast<size_t>(iy) * n + ox + k];
                tmp[static_cast<size_t>(iy) * m + ox] = s;
            }
        std::vector<double> out(static_cast<size_t>(m) * m); // vertical pass
#pragma omp parallel for num_threads(max_threads()) schedule(static)
        for (int oy = 0; oy < m; ++oy)
            for (int ox = 0; ox < m; ++ox) {
                double s = 0.0;
                for (int k = 0; k < w; ++k) s += kernel[k] * tmp[static_cast<size_t>(oy + k) * m + ox];
                out[static_cast<size_t>(oy) * m + ox] = s;
            }
        return out;
    };

    const size_t np = x.v.size();
    std::vector<double> xx(np), rr(np), xr(np);
    for (size_t i = 0; i < np; ++i) {
        xx[i] = x.v[i] * x.v[i];
        rr[i] = ref.v[i] * ref.v[i];
        xr[i] = x.v[i] * ref.v[i];
    }
    const auto mu_x = filter(x.v);
    const auto mu_r = filter(ref.v);
    const auto s_xx = filter(xx);
    const auto s_rr = filter(rr);
    const auto s_xr = filter(xr);

    const double c1 = (cfg.k1 * data_range) * (cfg.k1 * data_range);
    const double c2 = (cfg.k2 * data_range) * (cfg.k2 * data_range);

    double total = 0.0;
    for (size_t i = 0; i < mu_x.size(); ++i) {
        const double vx = s_xx[i] - mu_x[i] * mu_x[i];
        const double vr = s_rr[i] - mu_r[i] * mu_r[i];
        const double cov = s_xr[i] - mu_x[i] * mu_r[i];
        const double num = (2.0 * mu_x[i] * mu_r[i] + c1) * (2.0 * cov + c2);
        const double den = (mu_x[i] * mu_x[i] + mu_r[i] * mu_r[i] + c1) * (vx + vr + c2);
        total += num / den;
    }
    return total / static_cast<double>(mu_x.size());
}

double data_range_of(const ImageGrid& ref)
{
    const auto [lo, hi] = std::minmax_element(ref.v.begin(), ref.v.end());
    return std::max(*hi - *lo, 1e-12);
}

} // namespace ctml
