#include "ctml/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "ctml/network.hpp"
#include "ctml/rng.hpp"

namespace ctml {

namespace {

Tensor<double> random_tensor(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0)
{
    Tensor<double> t(s);
    for (auto& x : t.v) x = rng.uniform(lo, hi);
    return t;
}

// uniform magnitudes bounded away from zero, for kink-free relu inputs
Tensor<double> random_tensor_offzero(Shape s, Rng& rng)
{
    Tensor<double> t(s);
    for (auto& x : t.v) {
        const double m = rng.uniform(0.1, 1.0);
        x = rng.uniform() < 0.5 ? -m : m;
    }
    return t;
}

using GraphBuilder = std::function<int(Tape<double>&, const std::vector<int>&)>;

double check_graph(const GraphBuilder& build, std::vector<Tensor<double>> leaves,
                   int samples_per_leaf = 24, std::uint64_t seed = 42,
                   int* valid_samples = nullptr, double suspect_tol = 1e-6)
{
    Tape<double> tape;
    std::vector<int> ids;
    ids.reserve(leaves.size());
    for (const auto& t : leaves) ids.push_back(tape.leaf(t, true));
    const int loss = build(tape, ids);
    tape.backward(loss);
    std::vector<Tensor<double>> grads;
    grads.reserve(ids.size());
    for (int id : ids) grads.push_back(tape.grad(id));

    const auto forward = [&](const std::vector<Tensor<double>>& vals) {
        Tape<double> t2;
        std::vector<int> ids2;
        ids2.reserve(vals.size());
        for (const auto& v : vals) ids2.push_back(t2.leaf(v, false));
        return static_cast<double>(t2.value(build(t2, ids2)).scalar());
    };
    return FdCheck::max_rel_err(forward, std::move(leaves), grads, samples_per_leaf, 1e-5, seed,
                                valid_samples, suspect_tol);
}

double adjoint_identity_err(const ScanGeometry& geom, int pairs, std::uint64_t seed)
{
    Rng rng(mix_seed(seed, hash_name("adjoint")));
    double worst = 0.0;
    for (int k = 0; k < pairs; ++k) {
        ImageGrid x = ImageGrid::zeros(geom.grid_size, geom.pixel_size);
        for (auto& v : x.v) v = rng.uniform(-1.0, 1.0);
        Sinogram y = Sinogram::zeros(geom);
        for (auto& v : y.v) v = rng.uniform(-1.0, 1.0);

        const Sinogram ax = forward_project(x, geom);
        const ImageGrid aty = back_project(y, geom);

        double lhs = 0.0, rhs = 0.0, nax = 0.0, ny = 0.0;
        for (size_t i = 0; i < ax.v.size(); ++i) {
            lhs += ax.v[i] * y.v[i];
            nax += ax.v[i] * ax.v[i];
            ny += y.v[i] * y.v[i];
        }
        for (size_t i = 0; i < x.v.size(); ++i) rhs += x.v[i] * aty.v[i];
        const double denom = std::max(std::sqrt(nax) * std::sqrt(ny), 1e-300);
        worst = std::max(worst, std::abs(lhs - rhs) / denom);
    }
    return worst;
}

GradCheckCategory primitives_category()
{
    Rng rng(7);
    double worst = 0.0;

    // conv2d, reflect padding
    worst = std::max(worst, check_graph(
                                [](Tape<double>& t, const std::vector<int>& ids) {
                                    const int y =
                                        t.conv2d(ids[0], ids[1], ids[2], 1, PadMode::reflect);
                                    return t.mse(y, ids[3]);
                                },
                                {random_tensor(Shape{1, 2, 8, 8}, rng),
                                 random_tensor(Shape{3, 2, 3, 3}, rng),
                                 random_tensor(Shape{1, 3, 1, 1}, rng),
                                 random_tensor(Shape{1, 3, 8, 8}, rng)}));

    // conv2d, zero padding, stride 2
    worst = std::max(worst, check_graph(
                                [](Tape<double>& t, const std::vector<int>& ids) {
                                    const int y =
                                        t.conv2d(ids[0], ids[1], ids[2], 2, PadMode::zero);
                                    return t.mse(y, ids[3]);
                                },
                                {random_tensor(Shape{2, 1, 9, 9}, rng),
                                 random_tensor(Shape{2, 1, 3, 3}, rng),
                                 random_tensor(Shape{1, 2, 1, 1}, rng),
                                 random_tensor(Shape{2, 2, 5, 5}, rng)}));

    // relu (inputs bounded away from the kink)
    worst = std::max(worst, check_graph(
                                [](Tape<double>& t, const std::vector<int>& ids) {
                                    return t.mse(t.relu(ids[0]), ids[1]);
                                },
                                {random_tensor_offzero(Shape{1, 3, 6, 7}, rng),
                                 random_tensor(Shape{1, 3, 6, 7}, rng)}));

    // add + scale_shift
    worst = std::max(worst, check_graph(
                                [](Tape<double>& t, const std::vector<int>& ids) {
                                    const int y =
                                        t.add(t.scale_shift(ids[0], 1.7, -0.3), ids[1]);
                                    return t.mse(y, ids[2]);
                                },
                                {random_tensor(Shape{1, 2, 5, 6}, rng),
                                 random_tensor(Shape{1, 2, 5, 6}, rng),
                                 random_tensor(Shape{1, 2, 5, 6}, rng)}));

    // concat + slice
    worst = std::max(worst, check_graph(
                                [](Tape<double>& t, const std::vector<int>& ids) {
                                    const int y = t.concat_channels(ids[0], ids[1]);
                                    return t.mse(t.slice_channels(y, 1, 2), ids[2]);
                                },
                                {random_tensor(Shape{1, 2, 4, 5}, rng),
                                 random_tensor(Shape{1, 1, 4, 5}, rng),
                                 random_tensor(Shape{1, 2, 4, 5}, rng)}));

    // downsample2 / upsample2
    worst = std::max(worst, check_graph(
                                [](Tape<double>& t, const std::vector<int>& ids) {
                                    return t.mse(t.upsample2(t.downsample2(ids[0])), ids[1]);
                                },
                                {random_tensor(Shape{1, 2, 8, 8}, rng),
                                 random_tensor(Shape{1, 2, 8, 8}, rng)}));

    // row blend
    {
        ViewMask mask;
        mask.kept = {1, 0, 0, 1, 0, 1};
        worst = std::max(worst, check_graph(
                                    [mask](Tape<double>& t, const std::vector<int>& ids) {
                                        return t.mse(t.row_blend(ids[0], ids[1], mask), ids[2]);
                                    },
                                    {random_tensor(Shape{1, 1, 6, 5}, rng),
                                     random_tensor(Shape{1, 1, 6, 5}, rng),
                                     random_tensor(Shape{1, 1, 6, 5}, rng)}));
    }

    return {"primitives", worst, 1e-6, worst < 1e-6};
}

GradCheckCategory adjoint_category(bool include_fan)
{
    double worst = adjoint_identity_err(
        default_geometry(BeamMode::parallel, 40, 48, 32), 20, 11);
    if (include_fan)
        worst = std::max(worst, adjoint_identity_err(default_geometry(BeamMode::fan_equiangular,
                                                                      40, 48, 32),
                                                     20, 12));
    return {"projector-adjoint", worst, 1e-10, worst < 1e-10};
}

GradCheckCategory layers_category(bool include_fan)
{
    Rng rng(13);
    double worst = 0.0;
    std::vector<ScanGeometry> geoms{default_geometry(BeamMode::parallel, 24, 24, 16)};
    if (include_fan) geoms.push_back(default_geometry(BeamMode::fan_equiangular, 24, 24, 16));

    for (const auto& geom : geoms) {
        // fp layer
        worst = std::max(
            worst, check_graph(
                       [geom](Tape<double>& t, const std::vector<int>& ids) {
                           return t.mse(t.fp_layer(ids[0], geom), ids[1]);
                       },
                       {random_tensor(Shape{1, 1, geom.grid_size, geom.grid_size}, rng),
                        random_tensor(Shape{1, 1, geom.n_views, geom.n_detectors}, rng)}));
        // fbp layer
        worst = std::max(
            worst, check_graph(
                       [geom](Tape<double>& t, const std::vector<int>& ids) {
                           return t.mse(t.fbp_layer(ids[0], geom, Window::hann), ids[1]);
                       },
                       {random_tensor(Shape{1, 1, geom.n_views, geom.n_detectors}, rng),
                        random_tensor(Shape{1, 1, geom.grid_size, geom.grid_size}, rng)}));
        // conv2d -> fp composite
        worst = std::max(
            worst, check_graph(
                       [geom](Tape<double>& t, const std::vector<int>& ids) {
                           const int y = t.conv2d(ids[0], ids[1], ids[2], 1, PadMode::reflect);
                           return t.mse(t.fp_layer(y, geom), ids[3]);
                       },
                       {random_tensor(Shape{1, 1, geom.grid_size, geom.grid_size}, rng),
                        random_tensor(Shape{1, 1, 3, 3}, rng),
                        random_tensor(Shape{1, 1, 1, 1}, rng),
                        random_tensor(Shape{1, 1, geom.n_views, geom.n_detectors}, rng)}));
    }
    return {"fp-fbp-layers", worst, 1e-5, worst < 1e-5};
}

GradCheckCategory subnetwork_category()
{
    // tiny SVCT subnetwork: PNM, masked compensation through the FP layer,
    // dual-domain module through the FBP layer
    const ScanGeometry geom = default_geometry(BeamMode::parallel, 16, 16, 16);
    const ModelConfig model{2, 2, Window::hann};
    const SubnetConfig cfg = subnet_config(model, TaskKind::svct);
    const ViewMask mask = make_sparse_mask(geom, 4);
    NormStats norm; // identity normalization keeps values O(1)

    ParamMap<double> params = init_subnetwork_params<double>(cfg, 5, "svct/");
    // Zero-init finals would zero most parameter gradients here, and zero
    // biases put exact-zero preactivations on the relu kink (relu-off patches
    // and rays that miss the grid propagate exact zeros), where central
    // differences measure the average of the two one-sided slopes instead of
    // the subgradient. Verify at a differentiable point: every final weight
    // and every bias gets a small nonzero value.
    Rng finals(99);
    for (auto& [name, t] : params) {
        if (name.find("final") != std::string::npos)
            for (auto& x : t.v) x = finals.uniform(-0.2, 0.2);
        if (name.ends_with("/b"))
            for (auto& x : t.v) {
                const double m = finals.uniform(0.05, 0.25);
                x = finals.uniform() < 0.5 ? -m : m;
            }
    }

    Rng rng(21);
    std::vector<std::string> names;
    std::vector<Tensor<double>> leaves;
    for (const auto& [name, t] : params) {
        names.push_back(name);
        leaves.push_back(t);
    }
    const Tensor<double> p_full = random_tensor(Shape{1, 1, geom.n_views, geom.n_detectors}, rng);
    const Tensor<double> mu = random_tensor(Shape{1, 1, geom.grid_size, geom.grid_size}, rng);
    const Tensor<double> target = random_tensor(Shape{1, 1, geom.grid_size, geom.grid_size}, rng);

    const auto build = [&, names](Tape<double>& t, const std::vector<int>& ids) {
        NodeMap<double> nodes;
        for (size_t i = 0; i < names.size(); ++i) nodes.emplace(names[i], ids[i]);
        const int p_node = t.leaf(p_full, false);
        const int mu_node = t.leaf(mu, false);
        const SubnetNodes s =
            subnetwork_forward(t, p_node, mu_node, nodes, "svct/", cfg, TaskKind::svct, &mask,
                               geom, Window::hann, norm);
        const int target_node = t.leaf(target, false);
        return t.add(t.mse(s.mu_out, target_node), t.mse(s.mu_prior, target_node));
    };

    // >= 50 sampled parameters in total across the leaves
    int valid = 0;
    const double worst = check_graph(build, leaves, 4, 33, &valid, 1e-4);
    return {"subnetwork", worst, 1e-4, worst < 1e-4 && valid >= 50, valid};
}

} // namespace

double FdCheck::max_rel_err(const Builder& forward, std::vector<Tensor<double>> leaves,
                            const std::vector<Tensor<double>>& analytic_grads,
                            int samples_per_leaf, double h, std::uint64_t seed,
                            int* valid_samples, double suspect_tol)
{
    Rng rng(seed);
    double worst = 0.0;
    int valid = 0;
    for (size_t li = 0; li < leaves.size(); ++li) {
        const auto& g = analytic_grads[li];
        double gscale = 0.0;
        for (double x : g.v) gscale = std::max(gscale, std::abs(x));

        const size_t count = leaves[li].v.size();
        const int samples = std::min<long long>(samples_per_leaf, static_cast<long long>(count));
        for (int s = 0; s < samples; ++s) {
            const size_t idx = count == 1 ? 0 : rng.bits() % count;
            const double orig = leaves[li].v[idx];
            auto central = [&](double step) {
                leaves[li].v[idx] = orig + step;
                const double fp = forward(leaves);
                leaves[li].v[idx] = orig - step;
                const double fm = forward(leaves);
                leaves[li].v[idx] = orig;
                return (fp - fm) / (2.0 * step);
            };
            const double fd = central(h);
            const double an = g.v[idx];
            const double denom = std::max({std::abs(fd), std::abs(an), 1e-3 * gscale, 1e-12});
            const double err = std::abs(fd - an) / denom;
            if (err > suspect_tol) {
                const double fd_quarter = central(0.25 * h);
                if (std::abs(fd - fd_quarter) >= 0.25 * std::abs(fd - an)) continue; // kink
            }
            ++valid;
            worst = std::max(worst, err);
        }
    }
    if (valid_samples) *valid_samples = valid;
    return worst;
}

GradCheckReport run_gradcheck(bool include_fan)
{
    GradCheckReport report;
    report.categories.push_back(primitives_category());
    report.categories.push_back(adjoint_category(include_fan));
    report.categories.push_back(layers_category(include_fan));
    report.categories.push_back(subnetwork_category());
    return report;
}

} // namespace ctml
