#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include "ctml/degradation.hpp"

namespace ctml {

// On-disk dataset: one subdirectory per slice with ld/sv/lv sinograms and FBP
// images, the clean reference image, and meta.json; manifest.json at the root
// carries the shared configuration, the train/validation split, and the fixed
// normalization statistics.
struct NormStats {
    double img_center = 0.0, img_half = 1.0;
    double sino_center = 0.0, sino_half = 1.0;
};

struct DatasetConfig {
    int n_slices = 0; // total; the last n_val are held out for validation
    int n_val = 0;
    ScanGeometry geom;
    int sv_keep = 0;
    double lv_range_deg = 0.0;
    int lv_start_view = 0;
    double dose_fraction = 1.0;
    double i0 = 1e5;
    int ellipse_count = 8;
    std::uint64_t seed = 0;
    Window window = Window::hann;
};

void build_dataset(const std::filesystem::path& dir, const DatasetConfig& cfg);

struct SliceData {
    TaskTriplet triplet;
    ImageGrid reference; // clean phantom
};

class Dataset {
  public:
    explicit Dataset(const std::filesystem::path& dir);

    const DatasetConfig& config() const { return cfg_; }
    const NormStats& norm() const { return norm_; }
    const ViewMask& mask_sv() const { return mask_sv_; }
    const ViewMask& mask_lv() const { return mask_lv_; }

    int n_slices() const { return cfg_.n_slices; }
    int n_train() const { return cfg_.n_slices - cfg_.n_val; }
    int n_val() const { return cfg_.n_val; }

    SliceData load_train(int i) const;
    SliceData load_val(int i) const;

  private:
    SliceData load_index(int index) const;

    std::filesystem::path dir_;
    DatasetConfig cfg_;
    NormStats norm_;
    ViewMask mask_sv_, mask_lv_;
    std::vector<std::string> slice_names_;
};

} // namespace ctml
