#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>

#include "ctml/dataset.hpp"
#include "ctml/errors.hpp"
#include "ctml/trainer.hpp"
#include "helpers.hpp"

using namespace ctml;
using namespace ctml::testing;

namespace {

Tensor<double> random_img(Rng& rng, int n = 16)
{
    return random_tensor(Shape{1, 1, n, n}, rng);
}

// tiny on-disk dataset shared by the training smoke tests
std::filesystem::path tiny_dataset()
{
    static TempDir dir("ctml_trainer_ds");
    static bool built = false;
    if (!built) {
        DatasetConfig cfg;
        cfg.n_slices = 6;
        cfg.n_val = 2;
        cfg.geom = default_geometry(BeamMode::parallel, 64, 32, 32);
        cfg.sv_keep = 16;
        cfg.lv_range_deg = 120.0;
        cfg.dose_fraction = 0.5;
        cfg.i0 = 1e5;
        cfg.ellipse_count = 5;
        cfg.seed = 77;
        build_dataset(dir.path, cfg);
        built = true;
    }
    return dir.path;
}

TrainConfig tiny_config()
{
    TrainConfig cfg;
    cfg.lr = 1e-3;
    cfg.steps = 3;
    cfg.batch = 1;
    cfg.seed = 5;
    cfg.model = ModelConfig{2, 2, Window::hann};
    cfg.precision = "float32";
    cfg.val_interval = 2;
    return cfg;
}

std::vector<char> file_bytes(const std::filesystem::path& p)
{
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

} // namespace

TEST_CASE("mutual-learning losses vanish on identical inputs and are symmetric")
{
    Rng rng(1);
    const Tensor<double> a = random_img(rng);
    const Tensor<double> b = random_img(rng);
    const Tensor<double> c = random_img(rng);

    {
        Tape<double> t;
        const int n = t.leaf(a, false);
        CHECK(t.value(loss_ml_prior(t, n, n, n)).scalar() == 0.0);
        CHECK(t.value(loss_ml_out(t, n, n, n)).scalar() == 0.0);
    }

    // exact permutation symmetry
    double first = 0.0;
    bool have_first = false;
    const std::array<std::array<const Tensor<double>*, 3>, 6> perms{{
        {&a, &b, &c}, {&a, &c, &b}, {&b, &a, &c}, {&b, &c, &a}, {&c, &a, &b}, {&c, &b, &a}}};
    for (const auto& perm : perms) {
        Tape<double> t;
        const int loss = loss_ml_prior(t, t.leaf(*perm[0], false), t.leaf(*perm[1], false),
                                       t.leaf(*perm[2], false));
        const double v = t.value(loss).scalar();
        if (!have_first) {
            first = v;
            have_first = true;
        }
        CHECK(v == first);
    }
}

TEST_CASE("mutual-learning loss closed form: two equal inputs plus one offset by c")
{
    Rng rng(2);
    const Tensor<double> a = random_img(rng);
    const double c = 0.6;
    Tensor<double> shifted = a;
    for (auto& v : shifted.v) v += c;

    Tape<double> t;
    const int loss =
        loss_ml_prior(t, t.leaf(a, false), t.leaf(a, false), t.leaf(shifted, false));
    CHECK(t.value(loss).scalar() == doctest::Approx(2.0 * c * c).epsilon(1e-12));
}

TEST_CASE("reconstruction consistency loss closed forms")
{
    Rng rng(3);
    const Tensor<double> mu = random_img(rng);
    {
        Tape<double> t;
        const int n = t.leaf(mu, false);
        CHECK(t.value(loss_rc(t, n, n, n)).scalar() == 0.0);
    }
    const double c = -0.35;
    Tensor<double> shifted = mu;
    for (auto& v : shifted.v) v += c;
    Tape<double> t;
    const int loss = loss_rc(t, t.leaf(mu, false), t.leaf(shifted, false), t.leaf(mu, false));
    CHECK(t.value(loss).scalar() == doctest::Approx(c * c).epsilon(1e-12));
}

TEST_CASE("consistency loss has zero gradient with respect to sv/lv outputs")
{
    Rng rng(4);
    Tape<double> t;
    const int prior_ld = t.leaf(random_img(rng), true);
    const int out_ld = t.leaf(random_img(rng), true);
    const int out_sv = t.leaf(random_img(rng), true);
    const int out_lv = t.leaf(random_img(rng), true);
    const int mu_ld = t.leaf(random_img(rng), false);

    t.backward(loss_rc(t, prior_ld, out_ld, mu_ld));
    double g_anchor = 0.0;
    for (double v : t.grad(out_ld).v) g_anchor += std::abs(v);
    CHECK(g_anchor > 0.0);
    for (double v : t.grad(out_sv).v) CHECK(v == 0.0);
    for (double v : t.grad(out_lv).v) CHECK(v == 0.0);
}

TEST_CASE("total loss honors the configured weights and an independent recomputation")
{
    Rng rng(5);
    const Tensor<double> pa = random_img(rng), pb = random_img(rng), pc = random_img(rng);
    const Tensor<double> oa = random_img(rng), ob = random_img(rng), oc = random_img(rng);
    const Tensor<double> mu = random_img(rng);

    auto mse_plain = [](const Tensor<double>& x, const Tensor<double>& y) {
        double acc = 0.0;
        for (size_t i = 0; i < x.v.size(); ++i) acc += (x.v[i] - y.v[i]) * (x.v[i] - y.v[i]);
        return acc / static_cast<double>(x.v.size());
    };
    const double lp = mse_plain(pa, pb) + mse_plain(pa, pc) + mse_plain(pb, pc);
    const double lo = mse_plain(oa, ob) + mse_plain(oa, oc) + mse_plain(ob, oc);
    const double lrc = mse_plain(pa, mu) + mse_plain(oa, mu);

    Tape<double> t;
    const int l1 = loss_ml_prior(t, t.leaf(pa, false), t.leaf(pb, false), t.leaf(pc, false));
    const int l2 = loss_ml_out(t, t.leaf(oa, false), t.leaf(ob, false), t.leaf(oc, false));
    const int l3 = loss_rc(t, t.leaf(pa, false), t.leaf(oa, false), t.leaf(mu, false));

    const int total = loss_total(t, l1, l2, l3, 1.0, 1.0, 1.0);
    CHECK(t.value(total).scalar() == doctest::Approx(lp + lo + lrc).epsilon(1e-10));

    const int rc_only = loss_total(t, l1, l2, l3, 0.0, 0.0, 1.0);
    CHECK(t.value(rc_only).scalar() == doctest::Approx(lrc).epsilon(1e-12));

    const int weighted = loss_total(t, l1, l2, l3, 0.5, 2.0, 3.0);
    CHECK(t.value(weighted).scalar() ==
          doctest::Approx(0.5 * lp + 2.0 * lo + 3.0 * lrc).epsilon(1e-10));
}

TEST_CASE("adam leaves parameters untouched under zero gradients")
{
    ParamMap<double> params;
    Tensor<double> w(Shape{1, 1, 2, 2});
    w.v = {1.0, -2.0, 3.0, 0.5};
    params.emplace("w", w);
    std::map<std::string, Tensor<double>> grads;
    grads.emplace("w", Tensor<double>(Shape{1, 1, 2, 2}));

    AdamState<double> state;
    TrainConfig cfg;
    adam_step(params, grads, state, cfg);
    CHECK(params.at("w").v == w.v);
}

TEST_CASE("adam first step moves each parameter by about the learning rate")
{
    ParamMap<double> params;
    Tensor<double> w(Shape{1, 1, 1, 3});
    w.v = {0.0, 1.0, -1.0};
    params.emplace("w", w);
    Tensor<double> g(Shape{1, 1, 1, 3});
    g.v = {0.7, -0.01, 1200.0};
    std::map<std::string, Tensor<double>> grads;
    grads.emplace("w", g);

    AdamState<double> state;
    TrainConfig cfg;
    cfg.lr = 1e-3;
    adam_step(params, grads, state, cfg);
    for (int i = 0; i < 3; ++i) {
        const double step = params.at("w").v[i] - w.v[i];
        CHECK(std::abs(step) == doctest::Approx(cfg.lr).epsilon(1e-4));
        CHECK(step * g.v[i] < 0.0); // descends against the gradient
    }
}

TEST_CASE("adam matches a hand-rolled scalar reference over two steps")
{
    const double lr = 0.01, b1 = 0.5, b2 = 0.9, eps = 1e-8;
    const std::array<double, 3> g1{0.3, -1.2, 2.0};
    const std::array<double, 3> g2{-0.4, 0.8, 0.1};

    // scalar reference
    std::array<double, 3> p{1.0, 2.0, 3.0}, m{}, v{};
    int step = 0;
    for (const auto& g : {g1, g2}) {
        step += 1;
        for (int i = 0; i < 3; ++i) {
            m[i] = b1 * m[i] + (1 - b1) * g[i];
            v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i];
            const double mhat = m[i] / (1 - std::pow(b1, step));
            const double vhat = v[i] / (1 - std::pow(b2, step));
            p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }

    ParamMap<double> params;
    Tensor<double> w(Shape{1, 1, 1, 3});
    w.v = {1.0, 2.0, 3.0};
    params.emplace("w", w);
    AdamState<double> state;
    TrainConfig cfg;
    cfg.lr = lr;
    cfg.adam_beta1 = b1;
    cfg.adam_beta2 = b2;
    cfg.adam_eps = eps;
    for (const auto& g : {g1, g2}) {
        Tensor<double> gt(Shape{1, 1, 1, 3});
        gt.v = {g[0], g[1], g[2]};
        std::map<std::string, Tensor<double>> grads;
        grads.emplace("w", gt);
        adam_step(params, grads, state, cfg);
    }
    for (int i = 0; i < 3; ++i)
        CHECK(params.at("w").v[i] == doctest::Approx(p[i]).epsilon(1e-12));
}

TEST_CASE("ablation plans modify the graph as Table-5 prescribes")
{
    CHECK(apply_ablation(Ablation::full).use_pnm);
    CHECK(apply_ablation(Ablation::full).use_ddnm);
    CHECK(!apply_ablation(Ablation::no_pnm).use_pnm);
    CHECK(!apply_ablation(Ablation::no_ddnm).use_ddnm);
    const AblationPlan no_sv = apply_ablation(Ablation::no_svct);
    CHECK(no_sv.task_on == std::array<bool, 3>{true, false, true});
    const AblationPlan no_fv = apply_ablation(Ablation::no_fvct);
    CHECK(no_fv.rc_task == TaskKind::svct);

    // two remaining tasks -> exactly one pairwise term
    Rng rng(6);
    const Tensor<double> a = random_img(rng);
    const Tensor<double> b = random_img(rng);
    Tape<double> t;
    const int pair = loss_pairwise(t, {t.leaf(a, false), t.leaf(b, false)});
    const int direct = t.mse(t.leaf(a, false), t.leaf(b, false));
    CHECK(t.value(pair).scalar() == t.value(direct).scalar());
}

TEST_CASE("training for zero steps checkpoints the initialization")
{
    TrainConfig cfg = tiny_config();
    cfg.steps = 0;
    TempDir out("ctml_train_zero");
    const TrainResult r = train(tiny_dataset(), cfg, out.path);
    const CheckpointBundle bundle = load_checkpoint(r.checkpoint);

    const AblationPlan plan = apply_ablation(cfg.ablation);
    // reproduce the initialization exactly
    ParamMap<float> want;
    for (const TaskKind task : {TaskKind::fvct, TaskKind::svct, TaskKind::lvct}) {
        const SubnetConfig sc = subnet_config(cfg.model, task);
        for (auto& [name, tensor] :
             init_subnetwork_params<float>(sc, cfg.seed, to_string(task) + "/"))
            want.emplace(name, tensor);
    }
    (void)plan;
    REQUIRE(bundle.params.size() == want.size());
    for (const auto& [name, tensor] : want) {
        REQUIRE(bundle.params.count(name) == 1);
        CHECK(bundle.params.at(name).v == tensor.v);
    }
}

TEST_CASE("identical seeds give bitwise-identical checkpoints and metrics")
{
    TrainConfig cfg = tiny_config();
    TempDir o1("ctml_train_a");
    TempDir o2("ctml_train_b");
    const TrainResult r1 = train(tiny_dataset(), cfg, o1.path);
    const TrainResult r2 = train(tiny_dataset(), cfg, o2.path);
    CHECK(file_bytes(r1.checkpoint) == file_bytes(r2.checkpoint));
    CHECK(file_bytes(r1.metrics_csv) == file_bytes(r2.metrics_csv));

    cfg.seed += 1;
    TempDir o3("ctml_train_c");
    const TrainResult r3 = train(tiny_dataset(), cfg, o3.path);
    CHECK(file_bytes(r1.checkpoint) != file_bytes(r3.checkpoint));
}

TEST_CASE("metrics csv has the documented schema")
{
    TrainConfig cfg = tiny_config();
    TempDir out("ctml_train_csv");
    const TrainResult r = train(tiny_dataset(), cfg, out.path);
    std::ifstream f(r.metrics_csv);
    std::string header;
    std::getline(f, header);
    CHECK(header == "step,L_ml_prior,L_ml_out,L_rc,L_total,psnr_fvct,psnr_svct,psnr_lvct");
    int rows = 0;
    std::string line;
    while (std::getline(f, line))
        if (!line.empty()) ++rows;
    CHECK(rows == cfg.steps);
    CHECK(std::filesystem::exists(r.curve_png));
}

TEST_CASE("ablated training runs produce the reduced parameter sets")
{
    TrainConfig cfg = tiny_config();
    cfg.steps = 1;

    cfg.ablation = Ablation::no_pnm;
    TempDir o1("ctml_abl_pnm");
    const CheckpointBundle no_pnm = load_checkpoint(train(tiny_dataset(), cfg, o1.path).checkpoint);
    for (const auto& [name, t] : no_pnm.params) CHECK(name.find("/pnm/") == std::string::npos);

    cfg.ablation = Ablation::no_ddnm;
    TempDir o2("ctml_abl_ddnm");
    const CheckpointBundle no_ddnm =
        load_checkpoint(train(tiny_dataset(), cfg, o2.path).checkpoint);
    for (const auto& [name, t] : no_ddnm.params) {
        CHECK(name.find("/sino/") == std::string::npos);
        CHECK(name.find("/img/") == std::string::npos);
    }

    cfg.ablation = Ablation::no_fvct;
    TempDir o3("ctml_abl_fvct");
    const CheckpointBundle no_fvct =
        load_checkpoint(train(tiny_dataset(), cfg, o3.path).checkpoint);
    for (const auto& [name, t] : no_fvct.params) CHECK(name.rfind("fvct/", 0) != 0);
}

TEST_CASE("reconstruct_slice reproduces the fbp input through an untrained checkpoint")
{
    TrainConfig cfg = tiny_config();
    cfg.steps = 0;
    TempDir out("ctml_recon_zero");
    const TrainResult r = train(tiny_dataset(), cfg, out.path);
    const CheckpointBundle ckpt = load_checkpoint(r.checkpoint);

    const Dataset ds(tiny_dataset());
    const SliceData slice = ds.load_val(0);
    const InferenceResult rec = reconstruct_slice(ckpt, ds, slice, TaskKind::fvct);
    // float32 engine reproduces the double fbp to float precision
    CHECK(rel_rms(rec.mu_out.v, slice.triplet.mu_ld.v) < 1e-5);
    CHECK(rel_rms(rec.mu_prior.v, slice.triplet.mu_ld.v) < 1e-6);
}

TEST_CASE("evaluate writes per-slice rows and summary statistics")
{
    TrainConfig cfg = tiny_config();
    cfg.steps = 1;
    TempDir out("ctml_eval");
    const TrainResult r = train(tiny_dataset(), cfg, out.path);
    const CheckpointBundle ckpt = load_checkpoint(r.checkpoint);
    const EvalSummary s = evaluate(tiny_dataset(), ckpt, out.path / "report.csv");

    const Dataset ds(tiny_dataset());
    CHECK(static_cast<int>(s.rows.size()) == ds.n_val() * 3 * 2); // tasks x methods
    CHECK(s.summary.size() == 6);
    CHECK(std::filesystem::exists(out.path / "report.csv"));
    std::ifstream f(out.path / "report.csv");
    std::string header;
    std::getline(f, header);
    CHECK(header == "slice_id,task,method,psnr,nmse,ssim");
}

TEST_CASE("train configuration validation and json round trip")
{
    TrainConfig cfg = tiny_config();
    const nlohmann::json j = cfg;
    const TrainConfig back = j.get<TrainConfig>();
    CHECK(back.lr == cfg.lr);
    CHECK(back.steps == cfg.steps);
    CHECK(back.model.stages == cfg.model.stages);

    TrainConfig bad = cfg;
    bad.lr = -1.0;
    CHECK_THROWS_AS(bad.validate(), config_error);
    bad = cfg;
    bad.adam_beta1 = 1.5;
    CHECK_THROWS_AS(bad.validate(), config_error);
    bad = cfg;
    bad.precision = "half";
    CHECK_THROWS_AS(bad.validate(), config_error);
}
