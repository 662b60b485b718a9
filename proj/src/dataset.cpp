#include "ctml/dataset.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>

#include <json.hpp>

#include "ctml/errors.hpp"
#include "ctml/io.hpp"
#include "ctml/parallel.hpp"
#include "ctml/phantoms.hpp"
#include "ctml/rng.hpp"

namespace ctml {

namespace {

using nlohmann::json;

std::string slice_name(int i)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "slice_%04d", i);
    return buf;
}

void write_json(const std::filesystem::path& path, const json& j)
{
    std::ofstream f(path);
    if (!f) throw io_error("cannot open " + path.string() + " for writing");
    f << j.dump(2) << "\n";
    if (!f) throw io_error("write failure on " + path.string());
}

json load_json(const std::filesystem::path& path)
{
    std::ifstream f(path);
    if (!f) throw io_error("cannot open " + path.string());
    try {
        return json::parse(f);
    } catch (const json::exception& e) {
        throw io_error(path.string() + ": " + e.what());
    }
}

} // namespace

void build_dataset(const std::filesystem::path& dir, const DatasetConfig& cfg)
{
    cfg.geom.validate();
    if (cfg.n_slices < 1) throw config_error("dataset needs at least one slice");
    if (cfg.n_val < 0 || cfg.n_val >= cfg.n_slices)
        throw config_error("validation count must lie in [0, n_slices)");
    // mask construction doubles as configuration validation before any output
    const ViewMask mask_sv = make_sparse_mask(cfg.geom, cfg.sv_keep);
    const ViewMask mask_lv = make_limited_mask(cfg.geom, cfg.lv_range_deg, cfg.lv_start_view);

    std::filesystem::create_directories(dir);

    const TripletConfig tcfg{cfg.i0, cfg.dose_fraction, cfg.sv_keep,
                             cfg.lv_range_deg, cfg.lv_start_view, cfg.window};

    std::vector<double> img_lo(cfg.n_slices), img_hi(cfg.n_slices);
    std::vector<double> sino_lo(cfg.n_slices), sino_hi(cfg.n_slices);

#pragma omp parallel for num_threads(max_threads()) schedule(dynamic)
    for (int i = 0; i < cfg.n_slices; ++i) {
        const std::uint64_t slice_seed = mix_seed(cfg.seed, static_cast<std::uint64_t>(i));
        const ImageGrid ref = random_ellipse_phantom(cfg.geom.grid_size, cfg.ellipse_count,
                                                     slice_seed, cfg.geom.pixel_size);
        const Sinogram p_clean = forward_project(ref, cfg.geom);
        const TaskTriplet t = build_triplet(p_clean, cfg.geom, tcfg, slice_seed, slice_name(i));

        const auto dirname = dir / slice_name(i);
        std::filesystem::create_directories(dirname);
        write_sinogram(dirname / "ld.ctsg", t.p_ld);
        write_sinogram(dirname / "sv.ctsg", t.p_sv);
        write_sinogram(dirname / "lv.ctsg", t.p_lv);
        write_image(dirname / "ld.ctim", t.mu_ld);
        write_image(dirname / "sv.ctim", t.mu_sv);
        write_image(dirname / "lv.ctim", t.mu_lv);
        write_image(dirname / "ref.ctim", ref);

        json meta{{"slice_id", t.slice_id},
                  {"seed", slice_seed},
                  {"dose_fraction", cfg.dose_fraction},
                  {"i0", cfg.i0},
                  {"mask_sv", mask_to_json(t.mask_sv)},
                  {"mask_lv", mask_to_json(t.mask_lv)}};
        write_json(dirname / "meta.json", meta);

        const auto [ilo, ihi] = std::minmax_element(t.mu_ld.v.begin(), t.mu_ld.v.end());
        img_lo[i] = *ilo;
        img_hi[i] = *ihi;
        const auto [slo, shi] = std::minmax_element(t.p_ld.v.begin(), t.p_ld.v.end());
        sino_lo[i] = *slo;
        sino_hi[i] = *shi;
    }

    // normalization constants are fixed from the training split
    const int n_train = cfg.n_slices - cfg.n_val;
    NormStats norm;
    double ilo = img_lo[0], ihi = img_hi[0], slo = sino_lo[0], shi = sino_hi[0];
    for (int i = 0; i < n_train; ++i) {
        ilo = std::min(ilo, img_lo[i]);
        ihi = std::max(ihi, img_hi[i]);
        slo = std::min(slo, sino_lo[i]);
        shi = std::max(shi, sino_hi[i]);
    }
    norm.img_center = 0.5 * (ihi + ilo);
    norm.img_half = std::max(0.5 * (ihi - ilo), 1e-12);
    norm.sino_center = 0.5 * (shi + slo);
    norm.sino_half = std::max(0.5 * (shi - slo), 1e-12);

    json manifest{{"version", 1},
                  {"geometry", cfg.geom},
                  {"sv_keep", cfg.sv_keep},
                  {"lv_range_deg", cfg.lv_range_deg},
                  {"lv_start_view", cfg.lv_start_view},
                  {"dose_fraction", cfg.dose_fraction},
                  {"i0", cfg.i0},
                  {"ellipse_count", cfg.ellipse_count},
                  {"seed", cfg.seed},
                  {"window", to_string(cfg.window)},
                  {"n_slices", cfg.n_slices},
                  {"n_val", cfg.n_val},
                  {"mask_sv", mask_to_json(mask_sv)},
                  {"mask_lv", mask_to_json(mask_lv)},
                  {"norm",
                   {{"img_center", norm.img_center},
                    {"img_half", norm.img_half},
                    {"sino_center", norm.sino_center},
                    {"sino_half", norm.sino_half}}}};
    json names = json::array();
    for (int i = 0; i < cfg.n_slices; ++i) names.push_back(slice_name(i));
    manifest["slices"] = names;
    write_json(dir / "manifest.json", manifest);
}

Dataset::Dataset(const std::filesystem::path& dir) : dir_(dir)
{
    const json m = load_json(dir / "manifest.json");
    try {
        cfg_.geom = m.at("geometry").get<ScanGeometry>();
        cfg_.sv_keep = m.at("sv_keep").get<int>();
        cfg_.lv_range_deg = m.at("lv_range_deg").get<double>();
        cfg_.lv_start_view = m.at("lv_start_view").get<int>();
        cfg_.dose_fraction = m.at("dose_fraction").get<double>();
        cfg_.i0 = m.at("i0").get<double>();
        cfg_.ellipse_count = m.at("ellipse_count").get<int>();
        cfg_.seed = m.at("seed").get<std::uint64_t>();
        cfg_.window = window_from_string(m.at("window").get<std::string>());
        cfg_.n_slices = m.at("n_slices").get<int>();
        cfg_.n_val = m.at("n_val").get<int>();
        mask_sv_ = mask_from_json(m.at("mask_sv"), cfg_.geom.n_views);
        mask_lv_ = mask_from_json(m.at("mask_lv"), cfg_.geom.n_views);
        norm_.img_center = m.at("norm").at("img_center").get<double>();
        norm_.img_half = m.at("norm").at("img_half").get<double>();
        norm_.sino_center = m.at("norm").at("sino_center").get<double>();
        norm_.sino_half = m.at("norm").at("sino_half").get<double>();
        slice_names_ = m.at("slices").get<std::vector<std::string>>();
    } catch (const json::exception& e) {
        throw io_error(dir.string() + "/manifest.json: " + e.what());
    }
    if (static_cast<int>(slice_names_.size()) != cfg_.n_slices)
        throw io_error(dir.string() + ": manifest slice list does not match n_slices");
}

SliceData Dataset::load_index(int index) const
{
    if (index < 0 || index >= cfg_.n_slices)
        throw config_error("slice index " + std::to_string(index) + " out of range");
    const auto d = dir_ / slice_names_[index];
    SliceData s;
    s.triplet.slice_id = slice_names_[index];
    s.triplet.p_ld = read_sinogram(d / "ld.ctsg");
    s.triplet.p_sv = read_sinogram(d / "sv.ctsg");
    s.triplet.p_lv = read_sinogram(d / "lv.ctsg");
    s.triplet.mu_ld = read_image(d / "ld.ctim");
    s.triplet.mu_sv = read_image(d / "sv.ctim");
    s.triplet.mu_lv = read_image(d / "lv.ctim");
    s.triplet.mask_sv = mask_sv_;
    s.triplet.mask_lv = mask_lv_;
    s.reference = read_image(d / "ref.ctim");
    return s;
}

SliceData Dataset::load_train(int i) const
{
    if (i < 0 || i >= n_train()) throw config_error("train index out of range");
    return load_index(i);
}

SliceData Dataset::load_val(int i) const
{
    if (i < 0 || i >= n_val()) throw config_error("val index out of range");
    return load_index(n_train() + i);
}

} // namespace ctml
