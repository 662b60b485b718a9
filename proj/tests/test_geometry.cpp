#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "ctml/errors.hpp"
#include "ctml/geometry.hpp"
#include "ctml/sinogram.hpp"
#include "helpers.hpp"

using namespace ctml;
using namespace ctml::testing;

namespace {

ScanGeometry full_scan(int n_views, int n_det = 16, int grid = 16)
{
    return default_geometry(BeamMode::parallel, n_views, n_det, grid);
}

} // namespace

TEST_CASE("sparse mask keeps the paper geometry: 1152 views, 144 kept, stride 8")
{
    const ViewMask m = make_sparse_mask(full_scan(1152), 144);
    CHECK(m.keep_count() == 144);
    const auto idx = m.kept_indices();
    REQUIRE(idx.size() == 144);
    for (int i = 0; i < 144; ++i) CHECK(idx[i] == 8 * i);
    CHECK(idx.back() == 1144);
}

TEST_CASE("sparse mask keep-all is the identity pattern")
{
    const ViewMask m = make_sparse_mask(full_scan(96), 96);
    CHECK(m.keep_count() == 96);
    for (int i = 0; i < 96; ++i) CHECK(m.kept[i] == 1);
}

TEST_CASE("sparse mask 96/12 keeps {0,8,...,88}")
{
    const ViewMask m = make_sparse_mask(full_scan(96), 12);
    std::vector<int> want;
    for (int i = 0; i < 96; i += 8) want.push_back(i);
    CHECK(m.kept_indices() == want);
}

TEST_CASE("sparse mask rejects non-divisor keep counts naming both values")
{
    try {
        make_sparse_mask(full_scan(96), 7);
        FAIL("expected config_error");
    } catch (const config_error& e) {
        const std::string msg = e.what();
        CHECK(msg.find("7") != std::string::npos);
        CHECK(msg.find("96") != std::string::npos);
    }
}

TEST_CASE("sparse mask kept count equals keep_count for every divisor")
{
    for (int keep : {1, 2, 3, 4, 6, 8, 12, 16, 24, 48}) {
        const ViewMask m = make_sparse_mask(full_scan(48), keep);
        CHECK(m.keep_count() == keep);
    }
}

TEST_CASE("limited mask reproduces the paper 120-degree arc: 384 contiguous views")
{
    const ViewMask m = make_limited_mask(full_scan(1152), 120.0);
    CHECK(m.keep_count() == 384);
    const auto idx = m.kept_indices();
    for (size_t i = 0; i < idx.size(); ++i) CHECK(idx[i] == static_cast<int>(i));
}

TEST_CASE("limited mask with full range keeps everything")
{
    const ViewMask m = make_limited_mask(full_scan(96), 360.0);
    CHECK(m.keep_count() == 96);
}

TEST_CASE("limited mask 96 views / 120 degrees keeps {0..31}")
{
    const ViewMask m = make_limited_mask(full_scan(96), 120.0, 0);
    const auto idx = m.kept_indices();
    REQUIRE(idx.size() == 32);
    CHECK(idx.front() == 0);
    CHECK(idx.back() == 31);
}

TEST_CASE("limited mask start offset shifts the run")
{
    const ViewMask m = make_limited_mask(full_scan(96), 90.0, 10);
    const auto idx = m.kept_indices();
    REQUIRE(idx.size() == 24);
    CHECK(idx.front() == 10);
    CHECK(idx.back() == 33);
}

TEST_CASE("limited mask rejects out-of-range configurations")
{
    CHECK_THROWS_AS(make_limited_mask(full_scan(96), 400.0), config_error);
    CHECK_THROWS_AS(make_limited_mask(full_scan(96), -10.0), config_error);
    CHECK_THROWS_AS(make_limited_mask(full_scan(96), 120.0, 80), config_error);
}

TEST_CASE("limited mask arc length matches the requested range within one view spacing")
{
    Rng rng(3);
    const ScanGeometry g = full_scan(240);
    const double spacing = g.view_increment_deg();
    for (int trial = 0; trial < 50; ++trial) {
        const double range = rng.uniform(spacing, 360.0);
        const ViewMask m = make_limited_mask(g, range);
        CHECK(std::abs(m.keep_count() * spacing - range) <= spacing * (1.0 + 1e-12));
    }
}

TEST_CASE("extract_compact with keep-all mask returns the input unchanged")
{
    Rng rng(5);
    const ScanGeometry g = full_scan(24);
    const Sinogram p = random_sinogram(g, rng);
    const auto [compact, geom] = extract_compact(p, make_sparse_mask(g, 24));
    CHECK(geom == g);
    CHECK(compact.v == p.v);
}

TEST_CASE("extract_compact derives the sparse geometry: 1152 -> 144 at 2.5 degrees")
{
    const ScanGeometry g = full_scan(1152, 8, 8);
    const Sinogram p = Sinogram::zeros(g);
    const auto [compact, geom] = extract_compact(p, make_sparse_mask(g, 144));
    CHECK(geom.n_views == 144);
    CHECK(geom.view_increment_deg() == doctest::Approx(2.5).epsilon(1e-12));
    CHECK(geom.angle_extent_deg == doctest::Approx(360.0));
}

TEST_CASE("extract_compact derives the limited geometry: 384 rows spanning 120 degrees")
{
    Rng rng(6);
    const ScanGeometry g = full_scan(1152, 4, 8);
    const Sinogram p = random_sinogram(g, rng);
    const auto [compact, geom] = extract_compact(p, make_limited_mask(g, 120.0, 96));
    CHECK(geom.n_views == 384);
    CHECK(geom.angle_extent_deg == doctest::Approx(120.0).epsilon(1e-12));
    CHECK(geom.angle_start_deg == doctest::Approx(96 * g.view_increment_deg()).epsilon(1e-12));
    // row payload is a bitwise subset
    for (int r = 0; r < 384; ++r)
        for (int d = 0; d < g.n_detectors; ++d) CHECK(compact.at(r, d) == p.at(96 + r, d));
}

TEST_CASE("extract_compact rejects mismatched mask lengths")
{
    const ScanGeometry g = full_scan(24);
    const Sinogram p = Sinogram::zeros(g);
    ViewMask short_mask;
    short_mask.kept.assign(12, 1);
    CHECK_THROWS_AS(extract_compact(p, short_mask), dimension_error);
}

TEST_CASE("embed_full round-trips and zero-fills the missing rows")
{
    Rng rng(7);
    const ScanGeometry g = full_scan(48);
    const ViewMask m = make_sparse_mask(g, 12);
    const Sinogram p = random_sinogram(g, rng);
    const auto [compact, cgeom] = extract_compact(p, m);

    const Sinogram full = embed_full(compact, m, g);
    const auto [again, geom2] = extract_compact(full, m);
    CHECK(again.v == compact.v);
    for (int view = 0; view < g.n_views; ++view)
        for (int d = 0; d < g.n_detectors; ++d) {
            if (m.kept[view])
                CHECK(full.at(view, d) == p.at(view, d));
            else
                CHECK(full.at(view, d) == 0.0);
        }
}

TEST_CASE("embed_full keep-all is the identity and zero input gives zero output")
{
    Rng rng(8);
    const ScanGeometry g = full_scan(16);
    const ViewMask all = make_sparse_mask(g, 16);
    const Sinogram p = random_sinogram(g, rng);
    CHECK(embed_full(p, all, g).v == p.v);

    const ViewMask part = make_sparse_mask(g, 4);
    const auto [compact, cg] = extract_compact(Sinogram::zeros(g), part);
    const Sinogram full = embed_full(compact, part, g);
    for (double v : full.v) CHECK(v == 0.0);
}

TEST_CASE("embed_full rejects row-count mismatches")
{
    const ScanGeometry g = full_scan(16);
    const ViewMask m = make_sparse_mask(g, 4);
    const ScanGeometry wrong = full_scan(8);
    CHECK_THROWS_AS(embed_full(Sinogram::zeros(wrong), m, g), dimension_error);
}

TEST_CASE("geometry serializes with the documented field names")
{
    const ScanGeometry g = default_geometry(BeamMode::parallel, 288, 96, 64);
    nlohmann::json j = g;
    CHECK(j.at("beam_mode") == "parallel");
    CHECK(j.at("n_views") == 288);
    CHECK(j.at("angular_range").at("start") == 0.0);
    CHECK(j.at("angular_range").at("extent") == 360.0);
    CHECK(j.at("n_detectors") == 96);
    CHECK(j.contains("detector_spacing"));
    CHECK(j.at("grid_size") == 64);
    CHECK(j.contains("pixel_size"));
    CHECK(!j.contains("fan_increment"));
    CHECK(j.get<ScanGeometry>() == g);

    const ScanGeometry f = default_geometry(BeamMode::fan_equiangular, 32, 24, 16);
    nlohmann::json jf = f;
    CHECK(jf.at("beam_mode") == "fan-equiangular");
    CHECK(jf.contains("fan_increment"));
    CHECK(jf.contains("source_to_center"));
    CHECK(jf.get<ScanGeometry>() == f);
}

TEST_CASE("masks serialize as arrays of kept indices")
{
    const ScanGeometry g = full_scan(24);
    const ViewMask m = make_sparse_mask(g, 6);
    const nlohmann::json j = mask_to_json(m);
    CHECK(j.is_array());
    CHECK(j.size() == 6);
    const ViewMask back = mask_from_json(j, 24);
    CHECK(back.kept == m.kept);
}

TEST_CASE("geometry invariants are enforced")
{
    ScanGeometry g = full_scan(16);
    g.n_views = 0;
    CHECK_THROWS_AS(g.validate(), config_error);

    ScanGeometry fan = default_geometry(BeamMode::fan_equiangular, 16, 16, 16);
    fan.source_to_center = 5.0; // inside the support circle of a 16px grid
    CHECK_THROWS_AS(fan.validate(), config_error);
}

TEST_CASE("view angles sample the range uniformly")
{
    ScanGeometry g = full_scan(8);
    g.angle_start_deg = 10.0;
    g.angle_extent_deg = 180.0;
    for (int i = 0; i < 8; ++i)
        CHECK(g.view_angle_rad(i) ==
              doctest::Approx((10.0 + i * 22.5) * std::numbers::pi / 180.0).epsilon(1e-14));
}
