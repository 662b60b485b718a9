#pragma once

#include <cstdint>
#include <vector>

#include "ctml/sinogram.hpp"

namespace ctml {

// Ellipse in unit coordinates: the image support is the square [-1, 1]^2.
struct Ellipse {
    double cx, cy;      // center
    double a, b;        // half axes along the (rotated) x and y directions
    double angle_deg;   // CCW rotation
    double intensity;   // additive attenuation contribution
};

// Pixel-center membership rasterization; intensities add where ellipses
// overlap.
ImageGrid rasterize_ellipses(int n, const std::vector<Ellipse>& ellipses,
                             double pixel_size = 1.0);

// The canonical ten-ellipse head phantom (modified contrast variant) with
// background exactly zero.
const std::vector<Ellipse>& shepp_logan_ellipses();
ImageGrid shepp_logan(int n, double pixel_size = 1.0);

// Seeded anatomy substitute: one large body ellipse plus ellipse_count - 1
// interior structures, all inside the inscribed disk. Values are floored at
// zero so line integrals stay non-negative.
ImageGrid random_ellipse_phantom(int n, int ellipse_count, std::uint64_t seed,
                                 double pixel_size = 1.0);

} // namespace ctml
