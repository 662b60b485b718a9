#pragma once

#include "ctml/sinogram.hpp"

namespace ctml {

enum class Window { ram_lak, hann };

std::string to_string(Window w);
Window window_from_string(const std::string& s);

// Discrete Radon transform A: ray-driven traversal with linear interpolation
// between pixel centers (Joseph). Strictly linear in the image.
Sinogram forward_project(const ImageGrid& img, const ScanGeometry& geom);

// Exact matrix adjoint of forward_project: the same traversal with gather and
// scatter swapped, so <A x, y> == <x, At y> up to rounding. Per-view partial
// images are reduced in view order, which makes the result bitwise identical
// for any thread count.
ImageGrid back_project(const Sinogram& p, const ScanGeometry& geom);

// Per-view frequency-domain ramp filtering, |f| multiplier (Hann-apodized on
// request), rows zero-padded to a power of two >= 2 * n_detectors. The
// effective sample spacing is detector_spacing (parallel) or the isocenter
// arc length source_to_center * fan_increment (fan). Symmetric as a linear
// operator on each row.
Sinogram ramp_filter(const Sinogram& p, Window window);

// Filtered backprojection. Parallel beam: back_project(ramp_filter(p)) with
// the view-integration scale; fan beam adds the cos(gamma) pre-weight and the
// source-distance backprojection weight.
ImageGrid fbp(const Sinogram& p, const ScanGeometry& geom, Window window = Window::hann);

// Transpose of fbp as a linear map, used as the gradient of the FBP layer.
Sinogram fbp_adjoint(const ImageGrid& g, const ScanGeometry& geom, Window window = Window::hann);

// Serial reference implementations with identical accumulation semantics;
// outputs are bitwise equal to the OpenMP kernels. Kept for tests and the
// benchmark tool.
namespace reference {
Sinogram forward_project(const ImageGrid& img, const ScanGeometry& geom);
ImageGrid back_project(const Sinogram& p, const ScanGeometry& geom);
Sinogram ramp_filter(const Sinogram& p, Window window);
ImageGrid fbp(const Sinogram& p, const ScanGeometry& geom, Window window = Window::hann);
} // namespace reference

} // namespace ctml
