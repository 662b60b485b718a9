#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "ctml/errors.hpp"
#include "ctml/network.hpp"
#include "ctml/trainer.hpp"
#include "helpers.hpp"

using namespace ctml;
using namespace ctml::testing;

namespace {

const ScanGeometry kGeom = default_geometry(BeamMode::parallel, 32, 32, 32);
const ModelConfig kModel{3, 4, Window::hann};
const NormStats kNorm{0.1, 0.5, 0.2, 2.0};

Tensor<double> image_tensor(Rng& rng, int n = 32)
{
    return random_tensor(Shape{1, 1, n, n}, rng, -0.4, 0.6);
}

} // namespace

TEST_CASE("pnm is the identity at initialization (zero-initialized final conv)")
{
    Rng rng(1);
    const SubnetConfig cfg = subnet_config(kModel, TaskKind::svct);
    ParamMap<double> params = init_subnetwork_params<double>(cfg, 3, "svct/");

    Tape<double> t;
    const NodeMap<double> nodes = register_params(t, params, false);
    const Tensor<double> mu = image_tensor(rng);
    const int out = pnm_forward(t, t.leaf(mu, false), nodes, "svct/pnm/", cfg.pnm, kNorm);
    CHECK(t.value(out).v == mu.v);
    CHECK(t.value(out).shape == mu.shape);
}

TEST_CASE("pnm output preserves the input shape at 64x64")
{
    Rng rng(2);
    const SubnetConfig cfg = subnet_config(kModel, TaskKind::fvct);
    ParamMap<double> params = init_subnetwork_params<double>(cfg, 5, "fvct/");
    Tape<double> t;
    const NodeMap<double> nodes = register_params(t, params, false);
    const Tensor<double> mu = image_tensor(rng, 64);
    const int out = pnm_forward(t, t.leaf(mu, false), nodes, "fvct/pnm/", cfg.pnm, kNorm);
    CHECK(t.value(out).shape == Shape{1, 1, 64, 64});
}

TEST_CASE("unet rejects spatial sizes not divisible by 2^(stages-1)")
{
    const ModelConfig five{5, 2, Window::hann};
    const SubnetConfig cfg = subnet_config(five, TaskKind::fvct);
    ParamMap<double> params = init_subnetwork_params<double>(cfg, 1, "fvct/");
    Tape<double> t;
    const NodeMap<double> nodes = register_params(t, params, false);
    Rng rng(3);
    const int mu = t.leaf(random_tensor(Shape{1, 1, 24, 24}, rng), false);
    CHECK_THROWS_AS(pnm_forward(t, mu, nodes, "fvct/pnm/", cfg.pnm, kNorm), config_error);
}

TEST_CASE("compensate leaves nothing to fill when the mask keeps everything")
{
    Rng rng(4);
    const ViewMask all = make_sparse_mask(kGeom, kGeom.n_views);
    Tape<double> t;
    const Tensor<double> p = random_tensor(Shape{1, 1, kGeom.n_views, kGeom.n_detectors}, rng);
    const int p_node = t.leaf(p, false);
    const int prior = t.leaf(image_tensor(rng), false);
    const int blended = compensate(t, p_node, prior, &all, TaskKind::svct, kGeom);
    CHECK(t.value(blended).v == p.v);
}

TEST_CASE("compensate uses only the projected prior when everything is missing")
{
    Rng rng(5);
    ViewMask none;
    none.kept.assign(kGeom.n_views, 0);
    Tape<double> t;
    const Tensor<double> p = random_tensor(Shape{1, 1, kGeom.n_views, kGeom.n_detectors}, rng);
    const Tensor<double> mu = image_tensor(rng);
    const int blended =
        compensate(t, t.leaf(p, false), t.leaf(mu, false), &none, TaskKind::lvct, kGeom);

    ImageGrid img = ImageGrid::zeros(kGeom.grid_size, kGeom.pixel_size);
    img.v = mu.v;
    const Sinogram proj = forward_project(img, kGeom);
    CHECK(t.value(blended).v == proj.v);
}

TEST_CASE("compensate for FVCT concatenates and preserves the measured channel bitwise")
{
    Rng rng(6);
    Tape<double> t;
    const Tensor<double> p = random_tensor(Shape{1, 1, kGeom.n_views, kGeom.n_detectors}, rng);
    const int out = compensate(t, t.leaf(p, false), t.leaf(image_tensor(rng), false), nullptr,
                               TaskKind::fvct, kGeom);
    const Tensor<double>& v = t.value(out);
    CHECK(v.shape.c == 2);
    for (int row = 0; row < kGeom.n_views; ++row)
        for (int d = 0; d < kGeom.n_detectors; ++d)
            CHECK(v.at(0, 1, row, d) == p.at(0, 0, row, d));
}

TEST_CASE("compensate never alters measured rows for SV/LV")
{
    Rng rng(7);
    const ViewMask mask = make_sparse_mask(kGeom, 8);
    Tape<double> t;
    const Tensor<double> p = random_tensor(Shape{1, 1, kGeom.n_views, kGeom.n_detectors}, rng);
    const int blended = compensate(t, t.leaf(p, false), t.leaf(image_tensor(rng), false), &mask,
                                   TaskKind::svct, kGeom);
    const Tensor<double>& v = t.value(blended);
    for (int row = 0; row < kGeom.n_views; ++row) {
        if (!mask.kept[row]) continue;
        for (int d = 0; d < kGeom.n_detectors; ++d)
            CHECK(v.at(0, 0, row, d) == p.at(0, 0, row, d));
    }
}

TEST_CASE("ddnm at initialization reproduces fbp of the measured content")
{
    Rng rng(8);
    const ViewMask mask = make_limited_mask(kGeom, 120.0);

    SUBCASE("svct: fbp of the blended sinogram")
    {
        const SubnetConfig cfg = subnet_config(kModel, TaskKind::svct);
        ParamMap<double> params = init_subnetwork_params<double>(cfg, 11, "svct/");
        Tape<double> t;
        const NodeMap<double> nodes = register_params(t, params, false);
        const Tensor<double> p = random_tensor(Shape{1, 1, kGeom.n_views, kGeom.n_detectors}, rng);
        const int p_node = t.leaf(p, false);
        const int out = ddnm_forward(t, p_node, nodes, "svct/", cfg, TaskKind::svct, kGeom,
                                     Window::hann, kNorm);
        Sinogram ps = Sinogram::zeros(kGeom);
        ps.v = p.v;
        CHECK(t.value(out).v == fbp(ps, kGeom, Window::hann).v);
    }

    SUBCASE("fvct: fbp of the measured data channel")
    {
        const SubnetConfig cfg = subnet_config(kModel, TaskKind::fvct);
        ParamMap<double> params = init_subnetwork_params<double>(cfg, 13, "fvct/");
        Tape<double> t;
        const NodeMap<double> nodes = register_params(t, params, false);
        const Tensor<double> prior_proj =
            random_tensor(Shape{1, 1, kGeom.n_views, kGeom.n_detectors}, rng);
        const Tensor<double> measured =
            random_tensor(Shape{1, 1, kGeom.n_views, kGeom.n_detectors}, rng);
        const int two = t.concat_channels(t.leaf(prior_proj, false), t.leaf(measured, false));
        const int out =
            ddnm_forward(t, two, nodes, "fvct/", cfg, TaskKind::fvct, kGeom, Window::hann, kNorm);
        Sinogram pm = Sinogram::zeros(kGeom);
        pm.v = measured.v;
        CHECK(t.value(out).v == fbp(pm, kGeom, Window::hann).v);
    }
}

TEST_CASE("subnetwork forward keeps the shape contract for all three tasks")
{
    Rng rng(9);
    const ViewMask mask_sv = make_sparse_mask(kGeom, 8);
    const ViewMask mask_lv = make_limited_mask(kGeom, 120.0);
    for (const TaskKind task : {TaskKind::fvct, TaskKind::svct, TaskKind::lvct}) {
        const SubnetConfig cfg = subnet_config(kModel, task);
        ParamMap<double> params = init_subnetwork_params<double>(cfg, 17, to_string(task) + "/");
        Tape<double> t;
        const NodeMap<double> nodes = register_params(t, params, false);
        const int p = t.leaf(random_tensor(Shape{1, 1, kGeom.n_views, kGeom.n_detectors}, rng),
                             false);
        const int mu = t.leaf(image_tensor(rng), false);
        const ViewMask* mask = task == TaskKind::svct
                                   ? &mask_sv
                                   : (task == TaskKind::lvct ? &mask_lv : nullptr);
        const SubnetNodes s = subnetwork_forward(t, p, mu, nodes, to_string(task) + "/", cfg, task,
                                                 mask, kGeom, Window::hann, kNorm);
        CHECK(t.value(s.mu_prior).shape == Shape{1, 1, 32, 32});
        CHECK(t.value(s.mu_out).shape == Shape{1, 1, 32, 32});
        CHECK(t.value(s.p_tilde).shape.h == kGeom.n_views);
        CHECK(t.value(s.restored).shape.c == 1);
    }
}

TEST_CASE("fvct subnetwork at initialization reproduces the fbp of the measured data")
{
    Rng rng(10);
    const SubnetConfig cfg = subnet_config(kModel, TaskKind::fvct);
    ParamMap<double> params = init_subnetwork_params<double>(cfg, 19, "fvct/");
    Tape<double> t;
    const NodeMap<double> nodes = register_params(t, params, false);
    const Tensor<double> p = random_tensor(Shape{1, 1, kGeom.n_views, kGeom.n_detectors}, rng,
                                           0.0, 2.0);
    const int p_node = t.leaf(p, false);
    const int mu = t.leaf(image_tensor(rng), false);
    const SubnetNodes s = subnetwork_forward(t, p_node, mu, nodes, "fvct/", cfg, TaskKind::fvct,
                                             nullptr, kGeom, Window::hann, kNorm);
    Sinogram ps = Sinogram::zeros(kGeom);
    ps.v = p.v;
    CHECK(t.value(s.mu_out).v == fbp(ps, kGeom, Window::hann).v);
}

TEST_CASE("gradients reach every subnetwork parameter after one optimization step")
{
    // the zero-initialized final convolutions block upstream flow at step
    // one; after a single Adam step they are nonzero and every parameter
    // receives gradient
    Rng rng(11);
    const ViewMask mask = make_sparse_mask(kGeom, 8);
    const SubnetConfig cfg = subnet_config(kModel, TaskKind::svct);
    ParamMap<double> params = init_subnetwork_params<double>(cfg, 23, "svct/");

    TrainConfig tcfg;
    tcfg.lr = 1e-3;
    AdamState<double> adam;

    const Tensor<double> p = random_tensor(Shape{1, 1, kGeom.n_views, kGeom.n_detectors}, rng);
    const Tensor<double> mu = image_tensor(rng);
    const Tensor<double> target = image_tensor(rng);

    auto run_pass = [&](bool update) {
        Tape<double> t;
        const NodeMap<double> nodes = register_params(t, params, true);
        const SubnetNodes s = subnetwork_forward(t, t.leaf(p, false), t.leaf(mu, false), nodes,
                                                 "svct/", cfg, TaskKind::svct, &mask, kGeom,
                                                 Window::hann, kNorm);
        const int loss =
            t.add(t.mse(s.mu_out, t.leaf(target, false)), t.mse(s.mu_prior, t.leaf(target, false)));
        t.backward(loss);
        std::map<std::string, Tensor<double>> grads;
        for (const auto& [name, node] : nodes) grads.emplace(name, t.grad(node));
        if (update) adam_step(params, grads, adam, tcfg);
        return grads;
    };

    run_pass(true);
    const auto grads = run_pass(false);
    for (const auto& [name, g] : grads) {
        double norm = 0.0;
        for (double v : g.v) norm += v * v;
        INFO("parameter ", name);
        CHECK(norm > 0.0);
    }
}

TEST_CASE("parameter counts: sv and lv identical, fvct larger by the extra input channel")
{
    const SubnetConfig sv = subnet_config(kModel, TaskKind::svct);
    const SubnetConfig lv = subnet_config(kModel, TaskKind::lvct);
    const SubnetConfig fv = subnet_config(kModel, TaskKind::fvct);

    auto total = [](const SubnetConfig& c) {
        return unet_param_count(c.pnm) + unet_param_count(c.sino) + unet_param_count(c.img);
    };
    CHECK(total(sv) == total(lv));
    // first sinogram conv sees 2 channels instead of 1
    const long long delta = static_cast<long long>(kModel.base_channels) * 3 * 3;
    CHECK(total(fv) == total(sv) + delta);

    const ParamMap<double> ps = init_subnetwork_params<double>(sv, 1, "svct/");
    long long counted = 0;
    for (const auto& [name, t] : ps) counted += t.count();
    CHECK(counted == total(sv));
}

TEST_CASE("independent tasks draw independent weights, same shapes")
{
    const SubnetConfig cfg = subnet_config(kModel, TaskKind::svct);
    const ParamMap<double> a = init_subnetwork_params<double>(cfg, 7, "svct/");
    const ParamMap<double> b = init_subnetwork_params<double>(cfg, 7, "lvct/");
    REQUIRE(a.size() == b.size());
    auto ita = a.begin();
    auto itb = b.begin();
    bool any_diff = false;
    for (; ita != a.end(); ++ita, ++itb) {
        CHECK(ita->second.shape == itb->second.shape);
        if (ita->second.v != itb->second.v) any_diff = true;
    }
    CHECK(any_diff); // name-seeded init differs across task prefixes
}
