#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace ctml {

enum class BeamMode { parallel, fan_equiangular };

std::string to_string(BeamMode mode);
BeamMode beam_mode_from_string(const std::string& s);

// Acquisition description shared by every operator. Angles are stored in
// degrees; view i is sampled at angle_start_deg + i * angle_extent_deg / n_views.
struct ScanGeometry {
    BeamMode beam_mode = BeamMode::parallel;
    int n_views = 0;
    double angle_start_deg = 0.0;
    double angle_extent_deg = 360.0;
    int n_detectors = 0;
    double detector_spacing = 1.0;  // parallel beam, length units
    double fan_increment_deg = 0.0; // fan beam, degrees between detector channels
    double source_to_center = 0.0;  // fan beam, length units
    int grid_size = 0;
    double pixel_size = 1.0;

    double view_angle_rad(int view) const;
    double view_increment_deg() const { return angle_extent_deg / n_views; }

    // Throws config_error when an invariant is violated. For fan mode the
    // source must sit outside the image support circle.
    void validate() const;

    bool operator==(const ScanGeometry&) const = default;
};

void to_json(nlohmann::json& j, const ScanGeometry& g);
void from_json(const nlohmann::json& j, ScanGeometry& g);

// Binary per-view measurement pattern. kept[i] == 1 means view i was
// measured; rendered as the matrix M of the compensation blend, missing
// views carry M = 1 and measured views M = 0.
struct ViewMask {
    std::vector<std::uint8_t> kept;

    int n_views() const { return static_cast<int>(kept.size()); }
    int keep_count() const;
    std::vector<int> kept_indices() const;

    static ViewMask from_indices(int n_views, const std::vector<int>& indices);
};

nlohmann::json mask_to_json(const ViewMask& m);
ViewMask mask_from_json(const nlohmann::json& j, int n_views);

// Periodic sparse-view pattern: keeps views {0, s, 2s, ...} with
// s = n_views / keep_count. keep_count must divide n_views.
ViewMask make_sparse_mask(const ScanGeometry& geom, int keep_count);

// Contiguous limited-view pattern covering range_deg starting at start_view.
// The kept count is round(range_deg / extent * n_views) and the run must fit
// without wrapping.
ViewMask make_limited_mask(const ScanGeometry& geom, double range_deg, int start_view = 0);

// Simulation defaults: detectors spanning the image diagonal for parallel
// rays; fan source at twice the image diagonal with the fan opening covering
// the support circle. The paper states no scanner dimensions, these are ours.
ScanGeometry default_geometry(BeamMode mode, int n_views, int n_detectors, int grid_size,
                              double pixel_size = 1.0);

} // namespace ctml
