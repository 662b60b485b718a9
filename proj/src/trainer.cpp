#include "ctml/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "ctml/errors.hpp"
#include "ctml/io.hpp"
#include "ctml/metrics.hpp"
#include "ctml/rng.hpp"

namespace ctml {

std::string to_string(Ablation a)
{
    switch (a) {
    case Ablation::full: return "full";
    case Ablation::no_pnm: return "no-pnm";
    case Ablation::no_ddnm: return "no-ddnm";
    case Ablation::no_fvct: return "no-fvct";
    case Ablation::no_svct: return "no-svct";
    default: return "no-lvct";
    }
}

Ablation ablation_from_string(const std::string& s)
{
    if (s == "full") return Ablation::full;
    if (s == "no-pnm" || s == "no_pnm") return Ablation::no_pnm;
    if (s == "no-ddnm" || s == "no_ddnm") return Ablation::no_ddnm;
    if (s == "no-fvct" || s == "no_fvct") return Ablation::no_fvct;
    if (s == "no-svct" || s == "no_svct") return Ablation::no_svct;
    if (s == "no-lvct" || s == "no_lvct") return Ablation::no_lvct;
    throw config_error("unknown ablation variant \"" + s + "\"");
}

void TrainConfig::validate() const
{
    if (lr <= 0.0) throw config_error("learning rate must be > 0");
    if (!(adam_beta1 > 0.0 && adam_beta1 < 1.0 && adam_beta2 > 0.0 && adam_beta2 < 1.0))
        throw config_error("adam betas must lie in (0, 1)");
    if (adam_eps <= 0.0) throw config_error("adam_eps must be > 0");
    if (steps < 0) throw config_error("steps must be >= 0");
    if (batch < 1) throw config_error("batch must be >= 1");
    if (w_prior < 0.0 || w_out < 0.0 || w_rc < 0.0)
        throw config_error("loss weights must be >= 0");
    if (precision != "float32" && precision != "float64")
        throw config_error("precision must be float32 or float64");
    if (val_interval < 1) throw config_error("val_interval must be >= 1");
}

void to_json(nlohmann::json& j, const TrainConfig& c)
{
    j = nlohmann::json{{"lr", c.lr},
                       {"adam_beta1", c.adam_beta1},
                       {"adam_beta2", c.adam_beta2},
                       {"adam_eps", c.adam_eps},
                       {"steps", c.steps},
                       {"batch", c.batch},
                       {"seed", c.seed},
                       {"ablation", to_string(c.ablation)},
                       {"loss_weights",
                        {{"w_prior", c.w_prior}, {"w_out", c.w_out}, {"w_rc", c.w_rc}}},
                       {"model", c.model},
                       {"precision", c.precision},
                       {"val_interval", c.val_interval}};
}

void from_json(const nlohmann::json& j, TrainConfig& c)
{
    c = TrainConfig{};
    if (j.contains("lr")) c.lr = j.at("lr").get<double>();
    if (j.contains("adam_beta1")) c.adam_beta1 = j.at("adam_beta1").get<double>();
    if (j.contains("adam_beta2")) c.adam_beta2 = j.at("adam_beta2").get<double>();
    if (j.contains("adam_eps")) c.adam_eps = j.at("adam_eps").get<double>();
    if (j.contains("steps")) c.steps = j.at("steps").get<int>();
    if (j.contains("batch")) c.batch = j.at("batch").get<int>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("ablation"))
        c.ablation = ablation_from_string(j.at("ablation").get<std::string>());
    if (j.contains("loss_weights")) {
        const auto& w = j.at("loss_weights");
        if (w.contains("w_prior")) c.w_prior = w.at("w_prior").get<double>();
        if (w.contains("w_out")) c.w_out = w.at("w_out").get<double>();
        if (w.contains("w_rc")) c.w_rc = w.at("w_rc").get<double>();
    }
    if (j.contains("model")) c.model = j.at("model").get<ModelConfig>();
    if (j.contains("precision")) c.precision = j.at("precision").get<std::string>();
    if (j.contains("val_interval")) c.val_interval = j.at("val_interval").get<int>();
    c.validate();
}

AblationPlan apply_ablation(Ablation variant)
{
    AblationPlan p;
    switch (variant) {
    case Ablation::full: break;
    case Ablation::no_pnm: p.use_pnm = false; break;
    case Ablation::no_ddnm: p.use_ddnm = false; break;
    case Ablation::no_fvct:
        p.task_on[0] = false;
        p.rc_task = TaskKind::svct; // Eq. 7 loses its anchor; fall back to the SVCT input
        break;
    case Ablation::no_svct: p.task_on[1] = false; break;
    case Ablation::no_lvct: p.task_on[2] = false; break;
    }
    return p;
}

template <typename T>
int loss_pairwise(Tape<T>& tape, const std::vector<int>& nodes)
{
    if (nodes.size() < 2) throw config_error("pairwise loss needs at least two tensors");
    std::vector<int> terms;
    for (size_t i = 0; i < nodes.size(); ++i)
        for (size_t j = i + 1; j < nodes.size(); ++j) terms.push_back(tape.mse(nodes[i], nodes[j]));
    // summing in value order makes the total exactly invariant under
    // permutations of the inputs
    std::stable_sort(terms.begin(), terms.end(), [&](int a, int b) {
        return tape.value(a).scalar() < tape.value(b).scalar();
    });
    int total = terms[0];
    for (size_t k = 1; k < terms.size(); ++k) total = tape.add(total, terms[k]);
    return total;
}

template <typename T>
int loss_ml_prior(Tape<T>& tape, int prior_ld, int prior_sv, int prior_lv)
{
    return loss_pairwise(tape, {prior_ld, prior_sv, prior_lv});
}

template <typename T>
int loss_ml_out(Tape<T>& tape, int out_ld, int out_sv, int out_lv)
{
    return loss_pairwise(tape, {out_ld, out_sv, out_lv});
}

template <typename T>
int loss_rc(Tape<T>& tape, int mu_prior, int mu_out, int mu_anchor)
{
    return tape.add(tape.mse(mu_prior, mu_anchor), tape.mse(mu_out, mu_anchor));
}

template <typename T>
int loss_total(Tape<T>& tape, int l_prior, int l_out, int l_rc, double w_prior, double w_out,
               double w_rc)
{
    const int a = tape.scale_shift(l_prior, w_prior, 0.0);
    const int b = tape.scale_shift(l_out, w_out, 0.0);
    const int c = tape.scale_shift(l_rc, w_rc, 0.0);
    return tape.add(tape.add(a, b), c);
}

template <typename T>
void adam_step(ParamMap<T>& params, const std::map<std::string, Tensor<T>>& grads,
               AdamState<T>& state, const TrainConfig& cfg)
{
    state.step += 1;
    const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
    for (auto& [name, p] : params) {
        const auto git = grads.find(name);
        if (git == grads.end())
            throw config_error("adam_step: no gradient for parameter \"" + name + "\"");
        const Tensor<T>& g = git->second;
        if (!(g.shape == p.shape))
            throw dimension_error("adam_step: gradient shape mismatch for \"" + name + "\"");
        auto& slot = state.slots[name];
        if (slot.m.empty()) {
            slot.m.assign(p.v.size(), T(0));
            slot.v.assign(p.v.size(), T(0));
        }
        for (size_t i = 0; i < p.v.size(); ++i) {
            const double gi = static_cast<double>(g.v[i]);
            const double m = b1 * static_cast<double>(slot.m[i]) + (1.0 - b1) * gi;
            const double v = b2 * static_cast<double>(slot.v[i]) + (1.0 - b2) * gi * gi;
            slot.m[i] = static_cast<T>(m);
            slot.v[i] = static_cast<T>(v);
            const double mhat = m / bc1;
            const double vhat = v / bc2;
            p.v[i] = static_cast<T>(static_cast<double>(p.v[i]) -
                                    cfg.lr * mhat / (std::sqrt(vhat) + cfg.adam_eps));
        }
    }
}

// ---------------------------------------------------------------------------
// training
// ---------------------------------------------------------------------------

namespace {

constexpr std::array<TaskKind, 3> kTasks{TaskKind::fvct, TaskKind::svct, TaskKind::lvct};

struct LoadedSlice {
    SliceData data;
    Sinogram p_task_full[3]; // measured sinogram embedded on the full grid, per task
};

LoadedSlice load_slice(const Dataset& ds, const SliceData& s)
{
    LoadedSlice ls{s, {}};
    ls.p_task_full[0] = s.triplet.p_ld;
    ls.p_task_full[1] = embed_full(s.triplet.p_sv, ds.mask_sv(), ds.config().geom);
    ls.p_task_full[2] = embed_full(s.triplet.p_lv, ds.mask_lv(), ds.config().geom);
    return ls;
}

const ImageGrid& task_image(const SliceData& s, int task)
{
    switch (task) {
    case 0: return s.triplet.mu_ld;
    case 1: return s.triplet.mu_sv;
    default: return s.triplet.mu_lv;
    }
}

template <typename T>
Tensor<T> stack_sinograms(const std::vector<const LoadedSlice*>& batch, int task)
{
    const auto& first = batch.front()->p_task_full[task];
    Tensor<T> t(Shape{static_cast<int>(batch.size()), 1, first.geom.n_views,
                      first.geom.n_detectors});
    for (size_t b = 0; b < batch.size(); ++b) {
        const auto& v = batch[b]->p_task_full[task].v;
        const size_t base = t.index(static_cast<int>(b), 0, 0, 0);
        for (size_t i = 0; i < v.size(); ++i) t.v[base + i] = static_cast<T>(v[i]);
    }
    return t;
}

template <typename T>
Tensor<T> stack_images(const std::vector<const LoadedSlice*>& batch, int task)
{
    const int n = task_image(batch.front()->data, task).n;
    Tensor<T> t(Shape{static_cast<int>(batch.size()), 1, n, n});
    for (size_t b = 0; b < batch.size(); ++b) {
        const auto& v = task_image(batch[b]->data, task).v;
        const size_t base = t.index(static_cast<int>(b), 0, 0, 0);
        for (size_t i = 0; i < v.size(); ++i) t.v[base + i] = static_cast<T>(v[i]);
    }
    return t;
}

template <typename T>
struct ForwardNodes {
    std::array<SubnetNodes, 3> subnet; // indexed by task; unused tasks keep -1
    std::array<int, 3> mu_leaf{-1, -1, -1};
    int l_prior = -1, l_out = -1, l_rc = -1, l_total = -1;
};

// builds the whole step graph: three subnetworks plus the mutual-learning and
// consistency losses of the active tasks
template <typename T>
ForwardNodes<T> build_step(Tape<T>& tape, const std::vector<const LoadedSlice*>& batch,
                           const NodeMap<T>& pnodes, const AblationPlan& plan,
                           const ModelConfig& model, const Dataset& ds)
{
    const ScanGeometry& geom = ds.config().geom;
    const NormStats& norm = ds.norm();
    const SubnetOptions opt{plan.use_pnm, plan.use_ddnm};

    ForwardNodes<T> out;
    std::vector<int> priors, outs;
    for (int ti = 0; ti < 3; ++ti) {
        if (!plan.task_on[ti]) continue;
        const TaskKind task = kTasks[ti];
        const int p_node = tape.leaf(stack_sinograms<T>(batch, ti), false);
        const int mu_node = tape.leaf(stack_images<T>(batch, ti), false);
        out.mu_leaf[ti] = mu_node;
        const ViewMask* mask =
            task == TaskKind::svct ? &ds.mask_sv()
                                   : (task == TaskKind::lvct ? &ds.mask_lv() : nullptr);
        out.subnet[ti] = subnetwork_forward(tape, p_node, mu_node, pnodes,
                                            to_string(task) + "/", subnet_config(model, task),
                                            task, mask, geom, model.window, norm, opt);
        priors.push_back(out.subnet[ti].mu_prior);
        outs.push_back(out.subnet[ti].mu_out);
    }

    out.l_prior = loss_pairwise(tape, priors);
    out.l_out = loss_pairwise(tape, outs);
    const int anchor_ti = plan.rc_task == TaskKind::fvct ? 0 : 1;
    out.l_rc = loss_rc(tape, out.subnet[anchor_ti].mu_prior, out.subnet[anchor_ti].mu_out,
                       out.mu_leaf[anchor_ti]);
    return out;
}

template <typename T>
ImageGrid node_to_image(const Tape<T>& tape, int node, int b, double pixel_size)
{
    const Tensor<T>& t = tape.value(node);
    ImageGrid img = ImageGrid::zeros(t.shape.h, pixel_size);
    const size_t base = t.index(b, 0, 0, 0);
    for (size_t i = 0; i < img.v.size(); ++i) img.v[i] = static_cast<double>(t.v[base + i]);
    return img;
}

template <typename T>
std::array<double, 3> validation_psnr(const std::vector<LoadedSlice>& val,
                                      const ParamMap<T>& params, const AblationPlan& plan,
                                      const ModelConfig& model, const Dataset& ds)
{
    std::array<double, 3> mean{0.0, 0.0, 0.0};
    std::array<int, 3> count{0, 0, 0};
    for (const auto& slice : val) {
        Tape<T> tape;
        const NodeMap<T> pnodes = register_params(tape, params, false);
        std::vector<const LoadedSlice*> batch{&slice};
        const ForwardNodes<T> f = build_step(tape, batch, pnodes, plan, model, ds);
        const double range = data_range_of(slice.data.reference);
        for (int ti = 0; ti < 3; ++ti) {
            if (!plan.task_on[ti]) continue;
            const ImageGrid rec =
                node_to_image(tape, f.subnet[ti].mu_out, 0, ds.config().geom.pixel_size);
            mean[ti] += psnr(rec, slice.data.reference, range);
            count[ti] += 1;
        }
    }
    for (int ti = 0; ti < 3; ++ti)
        if (count[ti] > 0) mean[ti] /= count[ti];
    return mean;
}

template <typename T>
ParamMap<T> init_params_for_plan(const AblationPlan& plan, const ModelConfig& model,
                                 std::uint64_t seed)
{
    ParamMap<T> params;
    for (int ti = 0; ti < 3; ++ti) {
        if (!plan.task_on[ti]) continue;
        const TaskKind task = kTasks[ti];
        const SubnetConfig cfg = subnet_config(model, task);
        const std::string prefix = to_string(task) + "/";
        if (plan.use_pnm) init_unet_params(params, prefix + "pnm/", cfg.pnm, seed);
        if (plan.use_ddnm) {
            init_unet_params(params, prefix + "sino/", cfg.sino, seed);
            init_unet_params(params, prefix + "img/", cfg.img, seed);
        }
    }
    return params;
}

template <typename T>
ParamMap<float> to_float_params(const ParamMap<T>& params)
{
    ParamMap<float> out;
    for (const auto& [name, t] : params) {
        Tensor<float> ft(t.shape);
        for (size_t i = 0; i < t.v.size(); ++i) ft.v[i] = static_cast<float>(t.v[i]);
        out.emplace(name, std::move(ft));
    }
    return out;
}

template <typename T>
ParamMap<T> from_float_params(const ParamMap<float>& params)
{
    ParamMap<T> out;
    for (const auto& [name, t] : params) {
        Tensor<T> tt(t.shape);
        for (size_t i = 0; i < t.v.size(); ++i) tt.v[i] = static_cast<T>(t.v[i]);
        out.emplace(name, std::move(tt));
    }
    return out;
}

template <typename T>
double grad_norm(const std::map<std::string, Tensor<T>>& grads)
{
    double acc = 0.0;
    for (const auto& [name, g] : grads)
        for (const T x : g.v) acc += static_cast<double>(x) * static_cast<double>(x);
    return std::sqrt(acc);
}

template <typename T>
TrainResult train_impl(const Dataset& ds, const TrainConfig& cfg,
                       const std::filesystem::path& out_dir)
{
    const AblationPlan plan = apply_ablation(cfg.ablation);
    ParamMap<T> params = init_params_for_plan<T>(plan, cfg.model, cfg.seed);
    if (params.empty() && cfg.steps > 0)
        throw config_error("ablation variant leaves nothing to train");

    std::vector<LoadedSlice> train_slices, val_slices;
    for (int i = 0; i < ds.n_train(); ++i) train_slices.push_back(load_slice(ds, ds.load_train(i)));
    for (int i = 0; i < ds.n_val(); ++i) val_slices.push_back(load_slice(ds, ds.load_val(i)));
    if (train_slices.empty()) throw config_error("dataset has no training slices");

    std::filesystem::create_directories(out_dir);
    TrainResult result;
    result.checkpoint = out_dir / "checkpoint.ctpk";
    result.metrics_csv = out_dir / "metrics.csv";
    result.curve_png = out_dir / "loss_curve.png";

    std::ofstream csv(result.metrics_csv);
    if (!csv) throw io_error("cannot open " + result.metrics_csv.string());
    csv << "step,L_ml_prior,L_ml_out,L_rc,L_total,psnr_fvct,psnr_svct,psnr_lvct\n";

    Rng batch_rng(mix_seed(cfg.seed, hash_name("batch")));
    AdamState<T> adam;
    std::vector<double> curve;
    curve.reserve(cfg.steps);

    auto write_val = [&](std::ostream& os, const std::array<double, 3>& v) {
        for (int ti = 0; ti < 3; ++ti) {
            os << ",";
            if (plan.task_on[ti]) os << v[ti];
        }
    };

    for (int step = 1; step <= cfg.steps; ++step) {
        std::vector<const LoadedSlice*> batch;
        for (int b = 0; b < cfg.batch; ++b)
            batch.push_back(
                &train_slices[batch_rng.bits() % static_cast<std::uint64_t>(train_slices.size())]);

        Tape<T> tape;
        const NodeMap<T> pnodes = register_params(tape, params, true);
        const ForwardNodes<T> f = build_step(tape, batch, pnodes, plan, cfg.model, ds);
        const int total =
            loss_total(tape, f.l_prior, f.l_out, f.l_rc, cfg.w_prior, cfg.w_out, cfg.w_rc);

        const double lp = static_cast<double>(tape.value(f.l_prior).scalar());
        const double lo = static_cast<double>(tape.value(f.l_out).scalar());
        const double lrc = static_cast<double>(tape.value(f.l_rc).scalar());
        const double lt = static_cast<double>(tape.value(total).scalar());

        tape.backward(total);
        std::map<std::string, Tensor<T>> grads;
        for (const auto& [name, node] : pnodes) grads.emplace(name, tape.grad(node));

        if (!std::isfinite(lt)) {
            std::ostringstream msg;
            msg << "non-finite loss at step " << step << ": L_ml_prior=" << lp
                << " L_ml_out=" << lo << " L_rc=" << lrc << " L_total=" << lt
                << " grad_norm=" << grad_norm(grads);
            throw numeric_error(msg.str());
        }

        adam_step(params, grads, adam, cfg);

        if (step == 1) result.loss_first = lt;
        result.loss_last = lt;
        curve.push_back(lt);

        csv << step << "," << lp << "," << lo << "," << lrc << "," << lt;
        if (step % cfg.val_interval == 0 || step == cfg.steps) {
            const auto v = validation_psnr(val_slices, params, plan, cfg.model, ds);
            write_val(csv, v);
        } else {
            csv << ",,,";
        }
        csv << "\n";
    }
    csv.flush();
    result.steps_run = cfg.steps;

    CheckpointBundle bundle;
    bundle.params = to_float_params(params);
    bundle.model = cfg.model;
    bundle.ablation = cfg.ablation;
    bundle.norm = ds.norm();
    save_checkpoint(result.checkpoint, bundle);

    {
        std::ofstream cfgout(out_dir / "train_config.json");
        cfgout << nlohmann::json(cfg).dump(2) << "\n";
    }
    write_curve_png(result.curve_png, {curve});
    return result;
}

} // namespace

TrainResult train(const std::filesystem::path& dataset_dir, const TrainConfig& cfg,
                  const std::filesystem::path& out_dir)
{
    cfg.validate();
    const Dataset ds(dataset_dir);
    if (cfg.precision == "float64") return train_impl<double>(ds, cfg, out_dir);
    return train_impl<float>(ds, cfg, out_dir);
}

void save_checkpoint(const std::filesystem::path& path, const CheckpointBundle& bundle)
{
    std::vector<CheckpointEntry> entries;
    for (const auto& [name, t] : bundle.params) {
        CheckpointEntry e;
        e.name = name;
        e.shape = {t.shape.n, t.shape.c, t.shape.h, t.shape.w};
        e.data = t.v;
        entries.push_back(std::move(e));
    }
    // the CTPK manifest carries the model/ablation/norm context needed to
    // rebuild the graph at inference time
    write_checkpoint(path, entries,
                     nlohmann::json{{"model", bundle.model},
                                    {"ablation", to_string(bundle.ablation)},
                                    {"norm",
                                     {{"img_center", bundle.norm.img_center},
                                      {"img_half", bundle.norm.img_half},
                                      {"sino_center", bundle.norm.sino_center},
                                      {"sino_half", bundle.norm.sino_half}}}});
}

CheckpointBundle load_checkpoint(const std::filesystem::path& path)
{
    CheckpointBundle b;
    nlohmann::json extra;
    const auto entries = read_checkpoint(path, &extra);
    for (const auto& e : entries) {
        if (e.shape.size() != 4)
            throw io_error("checkpoint entry " + e.name + " is not rank-4");
        Tensor<float> t(Shape{e.shape[0], e.shape[1], e.shape[2], e.shape[3]});
        t.v = e.data;
        b.params.emplace(e.name, std::move(t));
    }
    try {
        b.model = extra.at("model").get<ModelConfig>();
        b.ablation = ablation_from_string(extra.at("ablation").get<std::string>());
        b.norm.img_center = extra.at("norm").at("img_center").get<double>();
        b.norm.img_half = extra.at("norm").at("img_half").get<double>();
        b.norm.sino_center = extra.at("norm").at("sino_center").get<double>();
        b.norm.sino_half = extra.at("norm").at("sino_half").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw io_error(path.string() + ": bad checkpoint context: " + e.what());
    }
    return b;
}

InferenceResult reconstruct_slice(const CheckpointBundle& ckpt, const Dataset& dataset,
                                  const SliceData& slice, TaskKind task)
{
    const AblationPlan plan = apply_ablation(ckpt.ablation);
    const int ti = task == TaskKind::fvct ? 0 : (task == TaskKind::svct ? 1 : 2);
    if (!plan.task_on[ti])
        throw config_error("checkpoint was trained without the " + to_string(task) + " task");

    const LoadedSlice ls = load_slice(dataset, slice);
    Tape<float> tape;
    const NodeMap<float> pnodes = register_params(tape, ckpt.params, false);
    std::vector<const LoadedSlice*> batch{&ls};

    const ScanGeometry& geom = dataset.config().geom;
    const SubnetOptions opt{plan.use_pnm, plan.use_ddnm};
    const int p_node = tape.leaf(stack_sinograms<float>(batch, ti), false);
    const int mu_node = tape.leaf(stack_images<float>(batch, ti), false);
    const ViewMask* mask = task == TaskKind::svct
                               ? &dataset.mask_sv()
                               : (task == TaskKind::lvct ? &dataset.mask_lv() : nullptr);
    const SubnetNodes nodes = subnetwork_forward(
        tape, p_node, mu_node, pnodes, to_string(task) + "/", subnet_config(ckpt.model, task),
        task, mask, geom, ckpt.model.window, ckpt.norm, opt);

    InferenceResult r;
    r.mu_prior = node_to_image(tape, nodes.mu_prior, 0, geom.pixel_size);
    r.mu_out = node_to_image(tape, nodes.mu_out, 0, geom.pixel_size);
    return r;
}

EvalSummary evaluate(const std::filesystem::path& dataset_dir, const CheckpointBundle& ckpt,
                     const std::filesystem::path& report_csv)
{
    const Dataset ds(dataset_dir);
    if (ds.n_val() < 1) throw config_error("dataset has no validation slices to evaluate");
    const AblationPlan plan = apply_ablation(ckpt.ablation);

    // data_range convention: reference max - min over the evaluation set
    double lo = 0.0, hi = 0.0;
    bool first = true;
    std::vector<SliceData> slices;
    for (int i = 0; i < ds.n_val(); ++i) {
        slices.push_back(ds.load_val(i));
        const auto [l, h] =
            std::minmax_element(slices.back().reference.v.begin(), slices.back().reference.v.end());
        if (first) {
            lo = *l;
            hi = *h;
            first = false;
        }
        lo = std::min(lo, *l);
        hi = std::max(hi, *h);
    }
    const double range = std::max(hi - lo, 1e-12);

    EvalSummary out;
    for (const auto& slice : slices) {
        for (int ti = 0; ti < 3; ++ti) {
            if (!plan.task_on[ti]) continue;
            const TaskKind task = kTasks[ti];
            const ImageGrid& baseline = task_image(slice, ti);
            out.rows.push_back({slice.triplet.slice_id, task, "fbp",
                                psnr(baseline, slice.reference, range),
                                nmse(baseline, slice.reference),
                                ssim(baseline, slice.reference, range)});
            const InferenceResult rec = reconstruct_slice(ckpt, ds, slice, task);
            out.rows.push_back({slice.triplet.slice_id, task, "ss-ctml",
                                psnr(rec.mu_out, slice.reference, range),
                                nmse(rec.mu_out, slice.reference),
                                ssim(rec.mu_out, slice.reference, range)});
        }
    }

    // per (task, method) mean and std
    std::map<std::pair<std::string, std::string>, std::vector<const EvalRow*>> groups;
    for (const auto& r : out.rows) groups[{to_string(r.task), r.method}].push_back(&r);
    for (const auto& [key, rows] : groups) {
        auto stat = [&](auto getter) {
            double mean = 0.0;
            for (const auto* r : rows) mean += getter(*r);
            mean /= static_cast<double>(rows.size());
            double var = 0.0;
            for (const auto* r : rows) var += (getter(*r) - mean) * (getter(*r) - mean);
            var /= static_cast<double>(rows.size());
            return std::pair<double, double>{mean, std::sqrt(var)};
        };
        const auto [pm, ps] = stat([](const EvalRow& r) { return r.psnr; });
        const auto [nm, ns] = stat([](const EvalRow& r) { return r.nmse; });
        const auto [sm, ss] = stat([](const EvalRow& r) { return r.ssim; });
        out.summary[key] = {pm, ps, nm, ns, sm, ss};
    }

    std::ofstream csv(report_csv);
    if (!csv) throw io_error("cannot open " + report_csv.string());
    csv << "slice_id,task,method,psnr,nmse,ssim\n";
    for (const auto& r : out.rows)
        csv << r.slice_id << "," << to_string(r.task) << "," << r.method << "," << r.psnr << ","
            << r.nmse << "," << r.ssim << "\n";
    for (const auto& [key, s] : out.summary)
        csv << "summary," << key.first << "," << key.second << "," << s[0] << "±" << s[1] << ","
            << s[2] << "±" << s[3] << "," << s[4] << "±" << s[5] << "\n";
    return out;
}

#define CTML_INSTANTIATE(T)                                                                       \
    template int loss_pairwise<T>(Tape<T>&, const std::vector<int>&);                             \
    template int loss_ml_prior<T>(Tape<T>&, int, int, int);                                       \
    template int loss_ml_out<T>(Tape<T>&, int, int, int);                                         \
    template int loss_rc<T>(Tape<T>&, int, int, int);                                             \
    template int loss_total<T>(Tape<T>&, int, int, int, double, double, double);                  \
    template void adam_step<T>(ParamMap<T>&, const std::map<std::string, Tensor<T>>&,             \
                               AdamState<T>&, const TrainConfig&);

CTML_INSTANTIATE(float)
CTML_INSTANTIATE(double)
#undef CTML_INSTANTIATE

} // namespace ctml
