#pragma once

#include "ctml/sinogram.hpp"

namespace ctml {

// 20 log10(data_range) - 10 log10(MSE); identical images report +infinity.
double psnr(const ImageGrid& x, const ImageGrid& ref, double data_range);

// ||x - ref||^2 / ||ref||^2
double nmse(const ImageGrid& x, const ImageGrid& ref);

struct SsimConfig {
    int window_size = 11;
    double sigma = 1.5;
    double k1 = 0.01;
    double k2 = 0.03;
};

// Mean local SSIM over all positions where the full Gaussian window fits
// inside the image (no padding).
double ssim(const ImageGrid& x, const ImageGrid& ref, double data_range,
            const SsimConfig& cfg = {});

// data_range convention used by the evaluation reports: max - min of the
// reference image.
double data_range_of(const ImageGrid& ref);

} // namespace ctml
