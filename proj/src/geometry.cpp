#include "ctml/geometry.hpp"

#include <cmath>
#include <numbers>

#include "ctml/errors.hpp"

namespace ctml {

std::string to_string(BeamMode mode)
{
    return mode == BeamMode::parallel ? "parallel" : "fan-equiangular";
}

BeamMode beam_mode_from_string(const std::string& s)
{
    if (s == "parallel") return BeamMode::parallel;
    if (s == "fan-equiangular") return BeamMode::fan_equiangular;
    throw config_error("unknown beam_mode \"" + s + "\"");
}

double ScanGeometry::view_angle_rad(int view) const
{
    const double deg = angle_start_deg + view * angle_extent_deg / n_views;
    return deg * std::numbers::pi / 180.0;
}

void ScanGeometry::validate() const
{
    if (n_views < 1) throw config_error("n_views must be >= 1, got " + std::to_string(n_views));
    if (n_detectors < 1)
        throw config_error("n_detectors must be >= 1, got " + std::to_string(n_detectors));
    if (grid_size < 1)
        throw config_error("grid_size must be >= 1, got " + std::to_string(grid_size));
    if (pixel_size <= 0.0) throw config_error("pixel_size must be > 0");
    if (beam_mode == BeamMode::parallel) {
        if (detector_spacing <= 0.0) throw config_error("detector_spacing must be > 0");
    } else {
        if (fan_increment_deg <= 0.0) throw config_error("fan_increment must be > 0");
        const double support = grid_size * pixel_size / std::numbers::sqrt2;
        if (source_to_center <= support)
            throw config_error("source_to_center " + std::to_string(source_to_center) +
                               " must exceed image support radius " + std::to_string(support));
    }
}

void to_json(nlohmann::json& j, const ScanGeometry& g)
{
    j = nlohmann::json{
        {"beam_mode", to_string(g.beam_mode)},
        {"n_views", g.n_views},
        {"angular_range", {{"start", g.angle_start_deg}, {"extent", g.angle_extent_deg}}},
        {"n_detectors", g.n_detectors},
        {"grid_size", g.grid_size},
        {"pixel_size", g.pixel_size},
    };
    if (g.beam_mode == BeamMode::parallel) {
        j["detector_spacing"] = g.detector_spacing;
    } else {
        j["fan_increment"] = g.fan_increment_deg;
        j["source_to_center"] = g.source_to_center;
    }
}

void from_json(const nlohmann::json& j, ScanGeometry& g)
{
    g = ScanGeometry{};
    g.beam_mode = beam_mode_from_string(j.at("beam_mode").get<std::string>());
    g.n_views = j.at("n_views").get<int>();
    g.angle_start_deg = j.at("angular_range").at("start").get<double>();
    g.angle_extent_deg = j.at("angular_range").at("extent").get<double>();
    g.n_detectors = j.at("n_detectors").get<int>();
    g.grid_size = j.at("grid_size").get<int>();
    g.pixel_size = j.at("pixel_size").get<double>();
    if (g.beam_mode == BeamMode::parallel) {
        g.detector_spacing = j.at("detector_spacing").get<double>();
    } else {
        g.fan_increment_deg = j.at("fan_increment").get<double>();
        g.source_to_center = j.at("source_to_center").get<double>();
    }
    g.validate();
}

int ViewMask::keep_count() const
{
    int n = 0;
    for (auto k : kept) n += k ? 1 : 0;
    return n;
}

std::vector<int> ViewMask::kept_indices() const
{
    std::vector<int> idx;
    idx.reserve(kept.size());
    for (int i = 0; i < n_views(); ++i)
        if (kept[i]) idx.push_back(i);
    return idx;
}

ViewMask ViewMask::from_indices(int n_views, const std::vector<int>& indices)
{
    ViewMask m;
    m.kept.assign(n_views, 0);
    for (int i : indices) {
        if (i < 0 || i >= n_views)
            throw config_error("kept index " + std::to_string(i) + " outside [0, " +
                               std::to_string(n_views) + ")");
        m.kept[i] = 1;
    }
    return m;
}

nlohmann::json mask_to_json(const ViewMask& m)
{
    return nlohmann::json(m.kept_indices());
}

ViewMask mask_from_json(const nlohmann::json& j, int n_views)
{
    return ViewMask::from_indices(n_views, j.get<std::vector<int>>());
}

ViewMask make_sparse_mask(const ScanGeometry& geom, int keep_count)
{
    geom.validate();
    if (keep_count < 1 || keep_count > geom.n_views)
        throw config_error("sparse keep_count " + std::to_string(keep_count) +
                           " outside [1, " + std::to_string(geom.n_views) + "]");
    if (geom.n_views % keep_count != 0)
        throw config_error("sparse keep_count " + std::to_string(keep_count) +
                           " does not divide n_views " + std::to_string(geom.n_views));
    const int stride = geom.n_views / keep_count;
    ViewMask m;
    m.kept.assign(geom.n_views, 0);
    for (int i = 0; i < keep_count; ++i) m.kept[i * stride] = 1;
    return m;
}

ScanGeometry default_geometry(BeamMode mode, int n_views, int n_detectors, int grid_size,
                              double pixel_size)
{
    ScanGeometry g;
    g.beam_mode = mode;
    g.n_views = n_views;
    g.n_detectors = n_detectors;
    g.grid_size = grid_size;
    g.pixel_size = pixel_size;
    // phantoms live inside the inscribed disk; detectors span that field of view
    const double fov = grid_size * pixel_size;
    const double diagonal = fov * std::numbers::sqrt2;
    if (mode == BeamMode::parallel) {
        g.detector_spacing = n_detectors > 1 ? fov / (n_detectors - 1) : fov;
    } else {
        g.source_to_center = 2.0 * diagonal;
        const double gamma_max = std::asin(0.5 * fov / g.source_to_center);
        g.fan_increment_deg = n_detectors > 1
                                  ? 2.0 * gamma_max * 1.02 / (n_detectors - 1) * 180.0 /
                                        std::numbers::pi
                                  : 1.0;
    }
    g.validate();
    return g;
}

ViewMask make_limited_mask(const ScanGeometry& geom, double range_deg, int start_view)
{
    geom.validate();
    if (range_deg <= 0.0 || range_deg > geom.angle_extent_deg)
        throw config_error("limited range " + std::to_string(range_deg) +
                           " deg outside (0, " + std::to_string(geom.angle_extent_deg) + "]");
    const int count =
        static_cast<int>(std::lround(range_deg / geom.angle_extent_deg * geom.n_views));
    if (count < 1)
        throw config_error("limited range " + std::to_string(range_deg) +
                           " deg keeps no views");
    if (start_view < 0 || start_view + count > geom.n_views)
        throw config_error("limited run [" + std::to_string(start_view) + ", " +
                           std::to_string(start_view + count) + ") does not fit in " +
                           std::to_string(geom.n_views) + " views");
    ViewMask m;
    m.kept.assign(geom.n_views, 0);
    for (int i = start_view; i < start_view + count; ++i) m.kept[i] = 1;
    return m;
}

} // namespace ctml
