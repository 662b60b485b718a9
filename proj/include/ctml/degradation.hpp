#pragma once

#include <cstdint>
#include <string>

#include "ctml/projector.hpp"

namespace ctml {

// One training record: the three task views of the same noisy scan. The
// sparse and limited sinograms are extracted rows of p_ld (same noise
// realization), never re-simulated.
struct TaskTriplet {
    Sinogram p_ld;
    ImageGrid mu_ld;
    Sinogram p_sv; // compact, derived geometry
    ImageGrid mu_sv;
    Sinogram p_lv; // compact, derived geometry
    ImageGrid mu_lv;
    ViewMask mask_sv;
    ViewMask mask_lv;
    std::string slice_id;
};

struct LowDoseResult {
    Sinogram noisy;
    long long floored_bins = 0; // bins clamped to one photon before the log
};

// Poisson transmission noise: N ~ Poisson(dose_fraction * i0 * exp(-p)),
// p_hat = -ln(max(N, 1) / (dose_fraction * i0)). Deterministic given seed.
LowDoseResult inject_low_dose(const Sinogram& p_clean, double i0, double dose_fraction,
                              std::uint64_t seed);

struct TripletConfig {
    double i0 = 1e5;
    double dose_fraction = 1.0;
    int sv_keep = 0;
    double lv_range_deg = 0.0;
    int lv_start_view = 0;
    Window window = Window::hann;
};

TaskTriplet build_triplet(const Sinogram& p_clean, const ScanGeometry& geom,
                          const TripletConfig& cfg, std::uint64_t seed,
                          const std::string& slice_id);

} // namespace ctml
