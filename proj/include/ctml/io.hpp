#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ctml/sinogram.hpp"

namespace ctml {

// Little-endian binary containers, magic + u32 version + u32 metadata length
// + JSON metadata + float32 row-major payload. Readers reject wrong magic,
// wrong version, and truncated payloads without producing partial objects.
void write_sinogram(const std::filesystem::path& path, const Sinogram& p);
Sinogram read_sinogram(const std::filesystem::path& path);

void write_image(const std::filesystem::path& path, const ImageGrid& img);
ImageGrid read_image(const std::filesystem::path& path);

// Parameter checkpoint: magic "CTPK", version, JSON manifest with parameter
// names and shapes, then contiguous float32 data per parameter in manifest
// order.
struct CheckpointEntry {
    std::string name;
    std::vector<int> shape;
    std::vector<float> data;
};

// extra keys are merged into the JSON manifest next to "params"; readers can
// retrieve them through the optional out-parameter.
void write_checkpoint(const std::filesystem::path& path,
                      const std::vector<CheckpointEntry>& entries,
                      const nlohmann::json& extra = nlohmann::json::object());
std::vector<CheckpointEntry> read_checkpoint(const std::filesystem::path& path,
                                             nlohmann::json* extra = nullptr);

// Windowed 8-bit grayscale PNG. Values in [center - width/2, center + width/2]
// map linearly to 0..255 and clamp outside.
struct DisplayWindow {
    double center = 0.5;
    double width = 1.0;
};

std::uint8_t window_to_byte(double v, const DisplayWindow& w);
void export_png(const std::filesystem::path& path, const ImageGrid& img,
                const DisplayWindow& window);

// Simple line plot on a white background, one polyline per series; used for
// the training loss curves.
void write_curve_png(const std::filesystem::path& path,
                     const std::vector<std::vector<double>>& series, int width = 640,
                     int height = 400);

} // namespace ctml
