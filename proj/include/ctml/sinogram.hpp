#pragma once

#include <utility>
#include <vector>

#include "ctml/geometry.hpp"

namespace ctml {

// Square attenuation image. v[iy * n + ix] with pixel (ix, iy) centered at
// ((ix - (n-1)/2) * pixel_size, (iy - (n-1)/2) * pixel_size), y axis up.
struct ImageGrid {
    int n = 0;
    double pixel_size = 1.0;
    std::vector<double> v;

    static ImageGrid zeros(int n, double pixel_size = 1.0)
    {
        return ImageGrid{n, pixel_size, std::vector<double>(static_cast<size_t>(n) * n, 0.0)};
    }
    double& at(int iy, int ix) { return v[static_cast<size_t>(iy) * n + ix]; }
    double at(int iy, int ix) const { return v[static_cast<size_t>(iy) * n + ix]; }
    size_t size() const { return v.size(); }
};

// Line-integral measurements, v[view * n_detectors + det].
struct Sinogram {
    ScanGeometry geom;
    std::vector<double> v;

    static Sinogram zeros(const ScanGeometry& g)
    {
        return Sinogram{g, std::vector<double>(
                               static_cast<size_t>(g.n_views) * g.n_detectors, 0.0)};
    }
    double& at(int view, int det) { return v[static_cast<size_t>(view) * geom.n_detectors + det]; }
    double at(int view, int det) const
    {
        return v[static_cast<size_t>(view) * geom.n_detectors + det];
    }
    size_t size() const { return v.size(); }
};

// Keeps only the measured rows of p and derives the standalone geometry of
// the degraded scan (reduced n_views, matching per-view angles). Requires the
// mask pattern to be either periodic (sparse) or contiguous (limited) so the
// derived angles stay uniformly sampled.
std::pair<Sinogram, ScanGeometry> extract_compact(const Sinogram& p, const ViewMask& mask);

// Inverse of extract_compact on the full grid: measured rows at kept indices,
// zeros elsewhere. full_geom supplies the full-scan row layout.
Sinogram embed_full(const Sinogram& p_compact, const ViewMask& mask,
                    const ScanGeometry& full_geom);

} // namespace ctml
