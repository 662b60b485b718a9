#include "ctml/phantoms.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "ctml/errors.hpp"
#include "ctml/parallel.hpp"
#include "ctml/rng.hpp"

namespace ctml {

ImageGrid rasterize_ellipses(int n, const std::vector<Ellipse>& ellipses, double pixel_size)
{
    if (n < 1) throw config_error("phantom size must be >= 1");
    ImageGrid img = ImageGrid::zeros(n, pixel_size);
    const double c = 0.5 * (n - 1);

    struct Prepared {
        double cx, cy, cosph, sinph, inv_a2, inv_b2, val;
    };
    std::vector<Prepared> prep;
    prep.reserve(ellipses.size());
    for (const auto& e : ellipses) {
        const double ph = e.angle_deg * std::numbers::pi / 180.0;
        prep.push_back({e.cx, e.cy, std::cos(ph), std::sin(ph), 1.0 / (e.a * e.a),
                        1.0 / (e.b * e.b), e.intensity});
    }

#pragma omp parallel for num_threads(max_threads()) schedule(static)
    for (int iy = 0; iy < n; ++iy) {
        // unit coordinates: pixel centers span (-1, 1) symmetrically
        const double y = (iy - c) / (0.5 * n);
        for (int ix = 0; ix < n; ++ix) {
            const double x = (ix - c) / (0.5 * n);
            double v = 0.0;
            for (const auto& e : prep) {
                const double dx = x - e.cx, dy = y - e.cy;
                const double u = dx * e.cosph + dy * e.sinph;
                const double w = -dx * e.sinph + dy * e.cosph;
                if (u * u * e.inv_a2 + w * w * e.inv_b2 <= 1.0) v += e.val;
            }
            img.at(iy, ix) = v;
        }
    }
    return img;
}

const std::vector<Ellipse>& shepp_logan_ellipses()
{
    // modified-contrast variant of the classic head phantom
    static const std::vector<Ellipse> table = {
        {0.0, 0.0, 0.69, 0.92, 0.0, 1.0},
        {0.0, -0.0184, 0.6624, 0.874, 0.0, -0.8},
        {0.22, 0.0, 0.11, 0.31, -18.0, -0.2},
        {-0.22, 0.0, 0.16, 0.41, 18.0, -0.2},
        {0.0, 0.35, 0.21, 0.25, 0.0, 0.1},
        {0.0, 0.1, 0.046, 0.046, 0.0, 0.1},
        {0.0, -0.1, 0.046, 0.046, 0.0, 0.1},
        {-0.08, -0.605, 0.046, 0.023, 0.0, 0.1},
        {0.0, -0.605, 0.023, 0.023, 0.0, 0.1},
        {0.06, -0.605, 0.023, 0.046, 0.0, 0.1},
    };
    return table;
}

ImageGrid shepp_logan(int n, double pixel_size)
{
    return rasterize_ellipses(n, shepp_logan_ellipses(), pixel_size);
}

ImageGrid random_ellipse_phantom(int n, int ellipse_count, std::uint64_t seed,
                                 double pixel_size)
{
    if (ellipse_count < 1) throw config_error("ellipse_count must be >= 1");
    Rng rng(mix_seed(seed, hash_name("phantom")));

    std::vector<Ellipse> es;
    es.reserve(ellipse_count);
    // body
    {
        const double a = rng.uniform(0.55, 0.78);
        const double b = rng.uniform(0.55, 0.78);
        es.push_back({rng.uniform(-0.06, 0.06), rng.uniform(-0.06, 0.06), a, b,
                      rng.uniform(0.0, 180.0), rng.uniform(0.18, 0.32)});
    }
    for (int i = 1; i < ellipse_count; ++i) {
        const double a = rng.uniform(0.04, 0.26);
        const double b = rng.uniform(0.04, 0.26);
        const double rmax = 0.9 - std::max(a, b); // keep inside the inscribed disk
        const double r = rng.uniform(0.0, std::min(0.45, rmax));
        const double th = rng.uniform(0.0, 2.0 * std::numbers::pi);
        const bool dark = rng.uniform() < 0.35;
        const double amp = dark ? -rng.uniform(0.03, 0.14) : rng.uniform(0.05, 0.5);
        es.push_back({r * std::cos(th), r * std::sin(th), a, b, rng.uniform(0.0, 180.0), amp});
    }

    ImageGrid img = rasterize_ellipses(n, es, pixel_size);
    for (auto& v : img.v) v = std::max(v, 0.0);
    return img;
}

} // namespace ctml
