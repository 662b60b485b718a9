#pragma once

#include <map>
#include <string>

#include "ctml/dataset.hpp"
#include "ctml/tape.hpp"

namespace ctml {

enum class TaskKind { fvct, svct, lvct };

std::string to_string(TaskKind t);
TaskKind task_from_string(const std::string& s);

struct UNetConfig {
    int stages = 5;
    int base_channels = 8;
    int in_channels = 1;
    int out_channels = 1;
    bool residual = true;
};

// Shared architecture settings; per-net in/out channel counts are derived
// from the task (the FVCT sinogram net takes the two concatenated channels).
struct ModelConfig {
    int stages = 5;
    int base_channels = 8;
    Window window = Window::hann;
};

void to_json(nlohmann::json& j, const ModelConfig& m);
void from_json(const nlohmann::json& j, ModelConfig& m);

struct SubnetConfig {
    UNetConfig pnm;  // image -> prior image
    UNetConfig sino; // compensated sinogram -> restored sinogram
    UNetConfig img;  // FBP image -> final image
};

SubnetConfig subnet_config(const ModelConfig& m, TaskKind task);

template <typename T>
using ParamMap = std::map<std::string, Tensor<T>>; // ordered: deterministic iteration

template <typename T>
using NodeMap = std::map<std::string, int>;

// He-uniform conv weights seeded per parameter name, zero biases, and a
// zero-initialized final 1x1 conv so the residual nets start as the identity.
template <typename T>
void init_unet_params(ParamMap<T>& params, const std::string& prefix, const UNetConfig& cfg,
                      std::uint64_t seed);

long long unet_param_count(const UNetConfig& cfg);

// All three modules of one task under "pnm/", "sino/", "img/" prefixes.
template <typename T>
ParamMap<T> init_subnetwork_params(const SubnetConfig& cfg, std::uint64_t seed,
                                   const std::string& prefix);

template <typename T>
NodeMap<T> register_params(Tape<T>& tape, const ParamMap<T>& params, bool requires_grad);

// U-net forward on the tape: per-stage channel doubling, two reflect-padded
// 3x3 convs per stage, average-pool down, nearest up, skip concatenation,
// final 1x1 conv. Spatial dims must divide 2^(stages-1).
template <typename T>
int unet_forward(Tape<T>& tape, int input, const NodeMap<T>& nodes, const std::string& prefix,
                 const UNetConfig& cfg);

// mu_prior = mu + img_half * Unet((mu - img_center) / img_half)
template <typename T>
int pnm_forward(Tape<T>& tape, int mu, const NodeMap<T>& nodes, const std::string& prefix,
                const UNetConfig& cfg, const NormStats& norm);

// FVCT: two-channel concatenation (A mu_prior, p). SVCT/LVCT: full-grid blend,
// projected prior on missing rows, measured data on kept rows.
template <typename T>
int compensate(Tape<T>& tape, int p_full, int mu_prior, const ViewMask* mask, TaskKind task,
               const ScanGeometry& full_geom);

// sinogram net (residual on the measured-data channel) -> FBP layer -> image
// net (residual). restored_out receives the restored-sinogram node if non-null.
template <typename T>
int ddnm_forward(Tape<T>& tape, int p_tilde, const NodeMap<T>& nodes, const std::string& prefix,
                 const SubnetConfig& cfg, TaskKind task, const ScanGeometry& geom, Window window,
                 const NormStats& norm, int* restored_out = nullptr);

struct SubnetNodes {
    int mu_prior = -1;
    int p_tilde = -1;
    int restored = -1;
    int mu_out = -1;
};

struct SubnetOptions {
    bool use_pnm = true;  // false: mu_prior := mu (Table-5 "w/o PNM")
    bool use_ddnm = true; // false: mu_out := fbp_layer(p_tilde content)
};

// Full subnetwork of one task. p_full is the embedded full-grid measured
// sinogram node (the native full-view sinogram for FVCT), mu the task FBP
// image node.
template <typename T>
SubnetNodes subnetwork_forward(Tape<T>& tape, int p_full, int mu, const NodeMap<T>& nodes,
                               const std::string& prefix, const SubnetConfig& cfg, TaskKind task,
                               const ViewMask* mask, const ScanGeometry& full_geom, Window window,
                               const NormStats& norm, const SubnetOptions& opt = {});

} // namespace ctml
