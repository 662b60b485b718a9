#pragma once

#include <array>
#include <filesystem>
#include <map>

#include "ctml/network.hpp"

namespace ctml {

enum class Ablation { full, no_pnm, no_ddnm, no_fvct, no_svct, no_lvct };

std::string to_string(Ablation a);
Ablation ablation_from_string(const std::string& s);

struct TrainConfig {
    double lr = 1e-5; // paper initial rate; the toy preset overrides
    double adam_beta1 = 0.5;
    double adam_beta2 = 0.9;
    double adam_eps = 1e-8;
    int steps = 500;
    int batch = 1;
    std::uint64_t seed = 0;
    Ablation ablation = Ablation::full;
    double w_prior = 1.0, w_out = 1.0, w_rc = 1.0;
    ModelConfig model{3, 8, Window::hann};
    std::string precision = "float32"; // or "float64"
    int val_interval = 100;

    void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

// Which modules/tasks a Table-5 variant trains and where the consistency loss
// anchors (the SVCT FBP input when FVCT itself is ablated).
struct AblationPlan {
    bool use_pnm = true;
    bool use_ddnm = true;
    std::array<bool, 3> task_on{true, true, true}; // fvct, svct, lvct
    TaskKind rc_task = TaskKind::fvct;
};

AblationPlan apply_ablation(Ablation variant);

// --- losses (Eq.-style, MSE convention) ---

// sum of pairwise mean-squared differences over >= 2 nodes
template <typename T>
int loss_pairwise(Tape<T>& tape, const std::vector<int>& nodes);

template <typename T>
int loss_ml_prior(Tape<T>& tape, int prior_ld, int prior_sv, int prior_lv);

template <typename T>
int loss_ml_out(Tape<T>& tape, int out_ld, int out_sv, int out_lv);

// consistency of the anchor task's prior and output against its FBP input;
// the SV/LV terms are deliberately absent
template <typename T>
int loss_rc(Tape<T>& tape, int mu_prior, int mu_out, int mu_anchor);

template <typename T>
int loss_total(Tape<T>& tape, int l_prior, int l_out, int l_rc, double w_prior, double w_out,
               double w_rc);

// --- optimizer ---

template <typename T>
struct AdamState {
    struct Moments {
        std::vector<T> m, v;
    };
    std::map<std::string, Moments> slots;
    long long step = 0;
};

// standard bias-corrected Adam over every parameter present in grads
template <typename T>
void adam_step(ParamMap<T>& params, const std::map<std::string, Tensor<T>>& grads,
               AdamState<T>& state, const TrainConfig& cfg);

// --- training & evaluation ---

struct TrainResult {
    std::filesystem::path checkpoint;
    std::filesystem::path metrics_csv;
    std::filesystem::path curve_png;
    double loss_first = 0.0, loss_last = 0.0;
    int steps_run = 0;
};

TrainResult train(const std::filesystem::path& dataset_dir, const TrainConfig& cfg,
                  const std::filesystem::path& out_dir);

// checkpoint <-> typed parameters, manifest carries model/ablation/norm
struct CheckpointBundle {
    ParamMap<float> params;
    ModelConfig model;
    Ablation ablation = Ablation::full;
    NormStats norm;
};

void save_checkpoint(const std::filesystem::path& path, const CheckpointBundle& bundle);
CheckpointBundle load_checkpoint(const std::filesystem::path& path);

struct InferenceResult {
    ImageGrid mu_prior;
    ImageGrid mu_out;
};

// single-slice inference with a trained (or fresh) parameter set
InferenceResult reconstruct_slice(const CheckpointBundle& ckpt, const Dataset& dataset,
                                  const SliceData& slice, TaskKind task);

struct EvalRow {
    std::string slice_id;
    TaskKind task;
    std::string method; // "fbp" or "ss-ctml"
    double psnr, nmse, ssim;
};

struct EvalSummary {
    std::vector<EvalRow> rows;
    // key: (task, method) -> mean/std per metric
    std::map<std::pair<std::string, std::string>, std::array<double, 6>> summary;
};

EvalSummary evaluate(const std::filesystem::path& dataset_dir, const CheckpointBundle& ckpt,
                     const std::filesystem::path& report_csv);

} // namespace ctml
