#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "ctml/dataset.hpp"
#include "ctml/errors.hpp"
#include "ctml/gradcheck.hpp"
#include "ctml/io.hpp"
#include "ctml/metrics.hpp"
#include "ctml/trainer.hpp"

namespace {

namespace fs = std::filesystem;
using namespace ctml;

int cmd_simulate(const fs::path& out, int phantoms, int val_count, int size, int views,
                 int detectors, const std::string& beam, double dose, double i0, int sparse_keep,
                 double limited_deg, int limited_start, int ellipses, std::uint64_t seed,
                 const std::string& window)
{
    DatasetConfig cfg;
    cfg.n_slices = phantoms;
    cfg.n_val = val_count < 0 ? std::max(phantoms / 8, phantoms > 1 ? 1 : 0)
                              : std::min(val_count, phantoms - 1);
    cfg.geom = default_geometry(beam_mode_from_string(beam), views, detectors, size);
    cfg.sv_keep = sparse_keep;
    cfg.lv_range_deg = limited_deg;
    cfg.lv_start_view = limited_start;
    cfg.dose_fraction = dose;
    cfg.i0 = i0;
    cfg.ellipse_count = ellipses;
    cfg.seed = seed;
    cfg.window = window_from_string(window);
    build_dataset(out, cfg);
    std::cout << "wrote " << cfg.n_slices << " slices (" << cfg.n_val << " validation) to "
              << out.string() << "\n";
    return 0;
}

int cmd_train(const fs::path& data, const fs::path& out, const std::string& config_path,
              const std::string& ablation, int steps_override, long long seed_override)
{
    TrainConfig cfg;
    if (!config_path.empty()) {
        std::ifstream f(config_path);
        if (!f) throw io_error("cannot open config " + config_path);
        try {
            cfg = nlohmann::json::parse(f).get<TrainConfig>();
        } catch (const nlohmann::json::exception& e) {
            throw config_error(std::string("bad train config: ") + e.what());
        }
    }
    if (!ablation.empty()) cfg.ablation = ablation_from_string(ablation);
    if (steps_override >= 0) cfg.steps = steps_override;
    if (seed_override >= 0) cfg.seed = static_cast<std::uint64_t>(seed_override);
    cfg.validate();

    const TrainResult r = train(data, cfg, out);
    std::cout << "trained " << r.steps_run << " steps, L_total " << r.loss_first << " -> "
              << r.loss_last << "\n"
              << "checkpoint: " << r.checkpoint.string() << "\n"
              << "metrics:    " << r.metrics_csv.string() << "\n"
              << "loss curve: " << r.curve_png.string() << "\n";
    return 0;
}

int cmd_reconstruct(const fs::path& ckpt_path, const fs::path& input, const std::string& task,
                    const fs::path& out, const std::string& png, double wcenter, double wwidth)
{
    const CheckpointBundle ckpt = load_checkpoint(ckpt_path);
    const fs::path dataset_dir = input.parent_path().empty() ? "." : input.parent_path();
    const Dataset ds(dataset_dir);

    SliceData slice;
    slice.triplet.slice_id = input.filename().string();
    slice.triplet.p_ld = read_sinogram(input / "ld.ctsg");
    slice.triplet.p_sv = read_sinogram(input / "sv.ctsg");
    slice.triplet.p_lv = read_sinogram(input / "lv.ctsg");
    slice.triplet.mu_ld = read_image(input / "ld.ctim");
    slice.triplet.mu_sv = read_image(input / "sv.ctim");
    slice.triplet.mu_lv = read_image(input / "lv.ctim");
    slice.triplet.mask_sv = ds.mask_sv();
    slice.triplet.mask_lv = ds.mask_lv();
    if (fs::exists(input / "ref.ctim")) slice.reference = read_image(input / "ref.ctim");

    const InferenceResult r = reconstruct_slice(ckpt, ds, slice, task_from_string(task));
    write_image(out, r.mu_out);
    std::cout << "wrote " << out.string() << "\n";
    if (!png.empty()) {
        DisplayWindow w{wcenter, wwidth};
        if (wwidth <= 0.0) {
            const auto [lo, hi] = std::minmax_element(r.mu_out.v.begin(), r.mu_out.v.end());
            w.center = 0.5 * (*hi + *lo);
            w.width = std::max(*hi - *lo, 1e-12);
        }
        export_png(png, r.mu_out, w);
        std::cout << "wrote " << png << "\n";
    }
    return 0;
}

int cmd_eval(const fs::path& ckpt_path, const fs::path& data, const fs::path& report)
{
    const CheckpointBundle ckpt = load_checkpoint(ckpt_path);
    const EvalSummary s = evaluate(data, ckpt, report);
    for (const auto& [key, v] : s.summary)
        std::printf("%-5s %-8s psnr %6.2f ± %5.2f  nmse %.5f ± %.5f  ssim %.4f ± %.4f\n",
                    key.first.c_str(), key.second.c_str(), v[0], v[1], v[2], v[3], v[4], v[5]);
    std::cout << "report: " << report.string() << "\n";
    return 0;
}

int cmd_gradcheck(bool full)
{
    const GradCheckReport report = run_gradcheck(full);
    for (const auto& c : report.categories)
        std::printf("%-18s worst rel err %.3e  (tol %.0e)  %s\n", c.name.c_str(),
                    c.worst_rel_err, c.tolerance, c.pass ? "ok" : "FAIL");
    if (!report.all_pass()) throw numeric_error("gradient check failed");
    return 0;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"SS-CTML toolbox: simulate sinogram datasets, train the three-task "
                 "mutual-learning reconstruction networks, evaluate, verify gradients"};
    app.require_subcommand(1);

    // simulate
    auto* sim = app.add_subcommand("simulate", "build a task-triplet dataset from random phantoms");
    int phantoms = 8, val_count = -1, size = 64, views = 288, detectors = 96;
    int sparse_keep = 36, limited_start = 0, ellipses = 8;
    double dose = 0.25, i0 = 1e5, limited_deg = 120.0;
    std::uint64_t sim_seed = 0;
    std::string beam = "parallel", window = "hann", out_dir;
    sim->add_option("--phantoms", phantoms, "number of slices (including validation)");
    sim->add_option("--val", val_count, "held-out validation slices (default: phantoms/8)");
    sim->add_option("--size", size, "image grid size");
    sim->add_option("--views", views, "full-scan view count");
    sim->add_option("--detectors", detectors, "detector bins per view");
    sim->add_option("--beam", beam, "parallel or fan-equiangular");
    sim->add_option("--dose", dose, "dose fraction in (0,1]");
    sim->add_option("--i0", i0, "full-dose incident photons per ray");
    sim->add_option("--sparse-keep", sparse_keep, "views kept by the sparse task");
    sim->add_option("--limited-deg", limited_deg, "angular range of the limited task");
    sim->add_option("--limited-start", limited_start, "first view of the limited arc");
    sim->add_option("--ellipses", ellipses, "ellipses per phantom");
    sim->add_option("--seed", sim_seed, "master seed");
    sim->add_option("--window", window, "fbp filter window: hann or ram-lak");
    sim->add_option("--out", out_dir, "output dataset directory")->required();

    // train
    auto* tr = app.add_subcommand("train", "train the cross-task mutual-learning networks");
    std::string train_data, train_out, train_cfg, train_ablation;
    int steps_override = -1;
    long long seed_override = -1;
    tr->add_option("--data", train_data, "dataset directory")->required();
    tr->add_option("--config", train_cfg, "TrainConfig JSON");
    tr->add_option("--out", train_out, "output directory")->required();
    tr->add_option("--ablation", train_ablation,
                   "full | no-pnm | no-ddnm | no-fvct | no-svct | no-lvct");
    tr->add_option("--steps", steps_override, "override step count");
    tr->add_option("--seed", seed_override, "override seed");

    // reconstruct
    auto* rec = app.add_subcommand("reconstruct", "run one slice through a trained subnetwork");
    std::string rec_ckpt, rec_input, rec_task = "fvct", rec_out, rec_png;
    double rec_wc = 0.0, rec_ww = 0.0;
    rec->add_option("--ckpt", rec_ckpt, "checkpoint file")->required();
    rec->add_option("--input", rec_input, "slice directory inside a dataset")->required();
    rec->add_option("--task", rec_task, "fvct | svct | lvct");
    rec->add_option("--out", rec_out, "output .ctim path")->required();
    rec->add_option("--png", rec_png, "optional windowed PNG path");
    rec->add_option("--window-center", rec_wc, "display window center");
    rec->add_option("--window-width", rec_ww, "display window width (0: auto min/max)");

    // eval
    auto* ev = app.add_subcommand("eval", "PSNR/NMSE/SSIM report over the validation split");
    std::string eval_ckpt, eval_data, eval_report = "report.csv";
    ev->add_option("--ckpt", eval_ckpt, "checkpoint file")->required();
    ev->add_option("--data", eval_data, "dataset directory")->required();
    ev->add_option("--report", eval_report, "output CSV path");

    // gradcheck
    auto* gc = app.add_subcommand("gradcheck", "finite-difference and adjoint verification");
    bool gc_full = false;
    gc->add_flag("--full", gc_full, "also check fan-beam geometry");

    try {
        app.parse(argc, argv);
        if (sim->parsed())
            return cmd_simulate(out_dir, phantoms, val_count, size, views, detectors, beam, dose,
                                i0, sparse_keep, limited_deg, limited_start, ellipses, sim_seed,
                                window);
        if (tr->parsed())
            return cmd_train(train_data, train_out, train_cfg, train_ablation, steps_override,
                             seed_override);
        if (rec->parsed())
            return cmd_reconstruct(rec_ckpt, rec_input, rec_task, rec_out, rec_png, rec_wc,
                                   rec_ww);
        if (ev->parsed()) return cmd_eval(eval_ckpt, eval_data, eval_report);
        if (gc->parsed()) return cmd_gradcheck(gc_full);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const config_error& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return 2;
    } catch (const numeric_error& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 3;
    } catch (const io_error& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
