#include "ctml/degradation.hpp"

#include <cmath>

#include "ctml/errors.hpp"
#include "ctml/rng.hpp"

namespace ctml {

LowDoseResult inject_low_dose(const Sinogram& p_clean, double i0, double dose_fraction,
                              std::uint64_t seed)
{
    if (i0 <= 0.0) throw config_error("incident photon count must be > 0");
    if (!(dose_fraction > 0.0 && dose_fraction <= 1.0))
        throw config_error("dose_fraction must lie in (0, 1]");

    const double n0 = dose_fraction * i0;
    LowDoseResult out{p_clean, 0};
    Rng rng(mix_seed(seed, hash_name("lowdose")));
    for (size_t i = 0; i < out.noisy.v.size(); ++i) {
        const double p = p_clean.v[i];
        if (p < 0.0)
            throw numeric_error("negative line integral " + std::to_string(p) +
                                " at bin " + std::to_string(i));
        std::poisson_distribution<long long> poisson(n0 * std::exp(-p));
        long long counts = poisson(rng.gen);
        if (counts < 1) {
            counts = 1;
            ++out.floored_bins;
        }
        out.noisy.v[i] = -std::log(static_cast<double>(counts) / n0);
    }
    return out;
}

TaskTriplet build_triplet(const Sinogram& p_clean, const ScanGeometry& geom,
                          const TripletConfig& cfg, std::uint64_t seed,
                          const std::string& slice_id)
{
    if (!(p_clean.geom == geom))
        throw dimension_error("clean sinogram geometry differs from requested geometry");
    const ViewMask mask_sv = make_sparse_mask(geom, cfg.sv_keep);
    const ViewMask mask_lv = make_limited_mask(geom, cfg.lv_range_deg, cfg.lv_start_view);

    TaskTriplet t;
    t.slice_id = slice_id;
    t.mask_sv = mask_sv;
    t.mask_lv = mask_lv;
    // noise enters once, the task sinograms are row subsets of the same
    // realization
    t.p_ld = inject_low_dose(p_clean, cfg.i0, cfg.dose_fraction, seed).noisy;
    auto [p_sv, geom_sv] = extract_compact(t.p_ld, mask_sv);
    auto [p_lv, geom_lv] = extract_compact(t.p_ld, mask_lv);
    t.p_sv = std::move(p_sv);
    t.p_lv = std::move(p_lv);
    t.mu_ld = fbp(t.p_ld, geom, cfg.window);
    t.mu_sv = fbp(t.p_sv, geom_sv, cfg.window);
    t.mu_lv = fbp(t.p_lv, geom_lv, cfg.window);
    return t;
}

} // namespace ctml
