#include "ctml/sinogram.hpp"

#include <algorithm>
#include <cstring>

#include "ctml/errors.hpp"

namespace ctml {

namespace {

// Derived geometry is only well defined when the kept views are themselves
// uniformly sampled: a periodic pattern or one contiguous run.
ScanGeometry derive_geometry(const ScanGeometry& full, const std::vector<int>& idx)
{
    const int count = static_cast<int>(idx.size());
    ScanGeometry g = full;
    g.n_views = count;
    if (count == full.n_views) return g;

    int stride = count > 1 ? idx[1] - idx[0] : 1;
    for (int i = 1; i < count; ++i) {
        if (idx[i] - idx[i - 1] != stride)
            throw config_error("mask kept views are neither periodic nor contiguous; "
                               "cannot derive a uniform scan geometry");
    }
    const double step = full.view_increment_deg();
    g.angle_start_deg = full.angle_start_deg + idx[0] * step;
    g.angle_extent_deg = count * stride * step;
    return g;
}

} // namespace

std::pair<Sinogram, ScanGeometry> extract_compact(const Sinogram& p, const ViewMask& mask)
{
    if (mask.n_views() != p.geom.n_views)
        throw dimension_error("mask has " + std::to_string(mask.n_views()) +
                              " views, sinogram has " + std::to_string(p.geom.n_views));
    const auto idx = mask.kept_indices();
    if (idx.empty()) throw config_error("mask keeps no views");

    const ScanGeometry out_geom = derive_geometry(p.geom, idx);
    Sinogram out = Sinogram::zeros(out_geom);
    const int nd = p.geom.n_detectors;
    for (size_t r = 0; r < idx.size(); ++r)
        std::copy_n(p.v.begin() + static_cast<size_t>(idx[r]) * nd, nd,
                    out.v.begin() + r * nd);
    return {std::move(out), out_geom};
}

Sinogram embed_full(const Sinogram& p_compact, const ViewMask& mask,
                    const ScanGeometry& full_geom)
{
    if (mask.n_views() != full_geom.n_views)
        throw dimension_error("mask has " + std::to_string(mask.n_views()) +
                              " views, full geometry has " + std::to_string(full_geom.n_views));
    const auto idx = mask.kept_indices();
    if (static_cast<int>(idx.size()) != p_compact.geom.n_views)
        throw dimension_error("compact sinogram has " + std::to_string(p_compact.geom.n_views) +
                              " rows, mask keeps " + std::to_string(idx.size()));
    if (p_compact.geom.n_detectors != full_geom.n_detectors)
        throw dimension_error("detector count mismatch between compact sinogram and full geometry");

    Sinogram out = Sinogram::zeros(full_geom);
    const int nd = full_geom.n_detectors;
    for (size_t r = 0; r < idx.size(); ++r)
        std::copy_n(p_compact.v.begin() + r * nd, nd,
                    out.v.begin() + static_cast<size_t>(idx[r]) * nd);
    return out;
}

} // namespace ctml
