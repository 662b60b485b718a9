// Timing comparison between the OpenMP kernels and the serial reference
// implementations. The two must agree bitwise; this tool reports the speedup.
#include <chrono>
#include <cstdio>
#include <functional>
#include <string>

#include <CLI11.hpp>

#include "ctml/parallel.hpp"
#include "ctml/phantoms.hpp"
#include "ctml/projector.hpp"

namespace {

using namespace ctml;
using clock_type = std::chrono::steady_clock;

double time_once(const std::function<void()>& fn, int repeat)
{
    fn(); // warm up
    const auto t0 = clock_type::now();
    for (int i = 0; i < repeat; ++i) fn();
    const auto t1 = clock_type::now();
    return std::chrono::duration<double, std::milli>(t1 - t0).count() / repeat;
}

bool same_bits(const std::vector<double>& a, const std::vector<double>& b)
{
    if (a.size() != b.size()) return false;
    for (size_t i = 0; i < a.size(); ++i)
        if (a[i] != b[i]) return false;
    return true;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"serial vs OpenMP kernel benchmark"};
    int size = 128, views = 360, detectors = 192, repeat = 3;
    std::string beam = "parallel";
    app.add_option("--size", size, "image grid size");
    app.add_option("--views", views, "view count");
    app.add_option("--detectors", detectors, "detector count");
    app.add_option("--beam", beam, "parallel or fan-equiangular");
    app.add_option("--repeat", repeat, "timed repetitions");
    CLI11_PARSE(app, argc, argv);

    const ScanGeometry geom =
        default_geometry(beam_mode_from_string(beam), views, detectors, size);
    const ImageGrid phantom = shepp_logan(size);
    const Sinogram sino = forward_project(phantom, geom);

    std::printf("grid %dx%d, %d views x %d detectors, %s beam, %d threads\n", size, size, views,
                detectors, beam.c_str(), max_threads());
    std::printf("%-14s %12s %12s %9s %9s\n", "kernel", "serial[ms]", "openmp[ms]", "speedup",
                "bitwise");

    struct Row {
        const char* name;
        std::function<std::vector<double>()> serial;
        std::function<std::vector<double>()> parallel;
    };
    const Row rows[] = {
        {"forward",
         [&] { return reference::forward_project(phantom, geom).v; },
         [&] { return forward_project(phantom, geom).v; }},
        {"backproject",
         [&] { return reference::back_project(sino, geom).v; },
         [&] { return back_project(sino, geom).v; }},
        {"ramp_filter",
         [&] { return reference::ramp_filter(sino, Window::hann).v; },
         [&] { return ramp_filter(sino, Window::hann).v; }},
        {"fbp",
         [&] { return reference::fbp(sino, geom).v; },
         [&] { return fbp(sino, geom).v; }},
    };

    for (const auto& row : rows) {
        const auto a = row.serial();
        const auto b = row.parallel();
        const double ts = time_once([&] { row.serial(); }, repeat);
        const double tp = time_once([&] { row.parallel(); }, repeat);
        std::printf("%-14s %12.2f %12.2f %8.2fx %9s\n", row.name, ts, tp, ts / tp,
                    same_bits(a, b) ? "yes" : "NO");
    }
    return 0;
}
