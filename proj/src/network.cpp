#include "ctml/network.hpp"

#include <cmath>

#include "ctml/errors.hpp"
#include "ctml/rng.hpp"

namespace ctml {

std::string to_string(TaskKind t)
{
    switch (t) {
    case TaskKind::fvct: return "fvct";
    case TaskKind::svct: return "svct";
    default: return "lvct";
    }
}

TaskKind task_from_string(const std::string& s)
{
    if (s == "fvct") return TaskKind::fvct;
    if (s == "svct") return TaskKind::svct;
    if (s == "lvct") return TaskKind::lvct;
    throw config_error("unknown task \"" + s + "\"");
}

void to_json(nlohmann::json& j, const ModelConfig& m)
{
    j = nlohmann::json{{"stages", m.stages},
                       {"base_channels", m.base_channels},
                       {"window", to_string(m.window)}};
}

void from_json(const nlohmann::json& j, ModelConfig& m)
{
    m.stages = j.at("stages").get<int>();
    m.base_channels = j.at("base_channels").get<int>();
    m.window = window_from_string(j.at("window").get<std::string>());
}

SubnetConfig subnet_config(const ModelConfig& m, TaskKind task)
{
    if (m.stages < 1) throw config_error("unet stages must be >= 1");
    if (m.base_channels < 1) throw config_error("unet base_channels must be >= 1");
    SubnetConfig c;
    c.pnm = UNetConfig{m.stages, m.base_channels, 1, 1, true};
    c.sino = UNetConfig{m.stages, m.base_channels, task == TaskKind::fvct ? 2 : 1, 1, true};
    c.img = UNetConfig{m.stages, m.base_channels, 1, 1, true};
    return c;
}

namespace {

struct ConvSpec {
    std::string name; // relative to the unet prefix
    int in_c, out_c, k;
    bool zero_init;
};

std::vector<ConvSpec> unet_convs(const UNetConfig& cfg)
{
    std::vector<ConvSpec> specs;
    int ch = cfg.base_channels;
    specs.push_back({"enc0/c1", cfg.in_channels, ch, 3, false});
    specs.push_back({"enc0/c2", ch, ch, 3, false});
    for (int s = 1; s < cfg.stages; ++s) {
        const int prev = ch;
        ch = prev * 2;
        specs.push_back({"enc" + std::to_string(s) + "/c1", prev, ch, 3, false});
        specs.push_back({"enc" + std::to_string(s) + "/c2", ch, ch, 3, false});
    }
    for (int s = cfg.stages - 2; s >= 0; --s) {
        const int skip = cfg.base_channels << s;
        const int below = skip * 2;
        specs.push_back({"dec" + std::to_string(s) + "/c1", below + skip, skip, 3, false});
        specs.push_back({"dec" + std::to_string(s) + "/c2", skip, skip, 3, false});
    }
    specs.push_back({"final", cfg.base_channels, cfg.out_channels, 1, true});
    return specs;
}

} // namespace

template <typename T>
void init_unet_params(ParamMap<T>& params, const std::string& prefix, const UNetConfig& cfg,
                      std::uint64_t seed)
{
    for (const auto& s : unet_convs(cfg)) {
        Tensor<T> w(Shape{s.out_c, s.in_c, s.k, s.k});
        if (!s.zero_init) {
            const double bound = std::sqrt(6.0 / (s.in_c * s.k * s.k));
            Rng rng(mix_seed(seed, hash_name(prefix + s.name + "/w")));
            for (auto& x : w.v) x = static_cast<T>(rng.uniform(-bound, bound));
        }
        params.emplace(prefix + s.name + "/w", std::move(w));
        params.emplace(prefix + s.name + "/b", Tensor<T>(Shape{1, s.out_c, 1, 1}));
    }
}

long long unet_param_count(const UNetConfig& cfg)
{
    long long total = 0;
    for (const auto& s : unet_convs(cfg))
        total += static_cast<long long>(s.out_c) * s.in_c * s.k * s.k + s.out_c;
    return total;
}

template <typename T>
ParamMap<T> init_subnetwork_params(const SubnetConfig& cfg, std::uint64_t seed,
                                   const std::string& prefix)
{
    ParamMap<T> p;
    init_unet_params(p, prefix + "pnm/", cfg.pnm, seed);
    init_unet_params(p, prefix + "sino/", cfg.sino, seed);
    init_unet_params(p, prefix + "img/", cfg.img, seed);
    return p;
}

template <typename T>
NodeMap<T> register_params(Tape<T>& tape, const ParamMap<T>& params, bool requires_grad)
{
    NodeMap<T> nodes;
    for (const auto& [name, tensor] : params) nodes.emplace(name, tape.leaf(tensor, requires_grad));
    return nodes;
}

namespace {

int param_node(const std::map<std::string, int>& nodes, const std::string& name)
{
    const auto it = nodes.find(name);
    if (it == nodes.end()) throw config_error("missing parameter \"" + name + "\"");
    return it->second;
}

template <typename T>
int conv_block(Tape<T>& tape, int x, const NodeMap<T>& nodes, const std::string& name,
               bool final_1x1)
{
    const int w = param_node(nodes, name + "/w");
    const int b = param_node(nodes, name + "/b");
    const int y = tape.conv2d(x, w, b, 1, final_1x1 ? PadMode::zero : PadMode::reflect);
    return final_1x1 ? y : tape.relu(y);
}

} // namespace

template <typename T>
int unet_forward(Tape<T>& tape, int input, const NodeMap<T>& nodes, const std::string& prefix,
                 const UNetConfig& cfg)
{
    const Shape s = tape.value(input).shape;
    const int div = 1 << (cfg.stages - 1);
    if (s.h % div != 0 || s.w % div != 0)
        throw config_error("unet with " + std::to_string(cfg.stages) +
                           " stages needs dims divisible by " + std::to_string(div) + ", got " +
                           s.str());
    if (s.c != cfg.in_channels)
        throw dimension_error("unet expects " + std::to_string(cfg.in_channels) +
                              " input channels, got " + s.str());

    std::vector<int> skips;
    int cur = input;
    for (int st = 0; st < cfg.stages; ++st) {
        if (st > 0) cur = tape.downsample2(cur);
        cur = conv_block(tape, cur, nodes, prefix + "enc" + std::to_string(st) + "/c1", false);
        cur = conv_block(tape, cur, nodes, prefix + "enc" + std::to_string(st) + "/c2", false);
        skips.push_back(cur);
    }
    for (int st = cfg.stages - 2; st >= 0; --st) {
        const int up = tape.upsample2(cur);
        cur = tape.concat_channels(up, skips[st]);
        cur = conv_block(tape, cur, nodes, prefix + "dec" + std::to_string(st) + "/c1", false);
        cur = conv_block(tape, cur, nodes, prefix + "dec" + std::to_string(st) + "/c2", false);
    }
    return conv_block(tape, cur, nodes, prefix + "final", true);
}

template <typename T>
int pnm_forward(Tape<T>& tape, int mu, const NodeMap<T>& nodes, const std::string& prefix,
                const UNetConfig& cfg, const NormStats& norm)
{
    const int normed =
        tape.scale_shift(mu, 1.0 / norm.img_half, -norm.img_center / norm.img_half);
    const int resid = unet_forward(tape, normed, nodes, prefix, cfg);
    if (!cfg.residual) return tape.scale_shift(resid, norm.img_half, norm.img_center);
    return tape.add(mu, tape.scale_shift(resid, norm.img_half, 0.0));
}

template <typename T>
int compensate(Tape<T>& tape, int p_full, int mu_prior, const ViewMask* mask, TaskKind task,
               const ScanGeometry& full_geom)
{
    const int projected = tape.fp_layer(mu_prior, full_geom);
    if (task == TaskKind::fvct) return tape.concat_channels(projected, p_full);
    if (mask == nullptr) throw config_error("compensate needs a view mask for SV/LV tasks");
    return tape.row_blend(projected, p_full, *mask);
}

template <typename T>
int ddnm_forward(Tape<T>& tape, int p_tilde, const NodeMap<T>& nodes, const std::string& prefix,
                 const SubnetConfig& cfg, TaskKind task, const ScanGeometry& geom, Window window,
                 const NormStats& norm, int* restored_out)
{
    const Shape s = tape.value(p_tilde).shape;
    if (s.c != cfg.sino.in_channels)
        throw dimension_error("ddnm expects " + std::to_string(cfg.sino.in_channels) +
                              " channels for " + to_string(task) + ", got " + s.str());

    // residual anchor: the measured-data channel (channel 1 of the FVCT
    // concatenation, the blended single channel otherwise)
    const int anchor = task == TaskKind::fvct ? tape.slice_channels(p_tilde, 1, 1) : p_tilde;
    const int normed =
        tape.scale_shift(p_tilde, 1.0 / norm.sino_half, -norm.sino_center / norm.sino_half);
    const int resid = unet_forward(tape, normed, nodes, prefix + "sino/", cfg.sino);
    const int restored = cfg.sino.residual
                             ? tape.add(anchor, tape.scale_shift(resid, norm.sino_half, 0.0))
                             : tape.scale_shift(resid, norm.sino_half, norm.sino_center);
    if (restored_out) *restored_out = restored;

    const int recon = tape.fbp_layer(restored, geom, window);
    const int rnormed =
        tape.scale_shift(recon, 1.0 / norm.img_half, -norm.img_center / norm.img_half);
    const int iresid = unet_forward(tape, rnormed, nodes, prefix + "img/", cfg.img);
    return cfg.img.residual ? tape.add(recon, tape.scale_shift(iresid, norm.img_half, 0.0))
                            : tape.scale_shift(iresid, norm.img_half, norm.img_center);
}

template <typename T>
SubnetNodes subnetwork_forward(Tape<T>& tape, int p_full, int mu, const NodeMap<T>& nodes,
                               const std::string& prefix, const SubnetConfig& cfg, TaskKind task,
                               const ViewMask* mask, const ScanGeometry& full_geom, Window window,
                               const NormStats& norm, const SubnetOptions& opt)
{
    SubnetNodes out;
    out.mu_prior = opt.use_pnm
                       ? pnm_forward(tape, mu, nodes, prefix + "pnm/", cfg.pnm, norm)
                       : mu;
    out.p_tilde = compensate(tape, p_full, out.mu_prior, mask, task, full_geom);
    if (opt.use_ddnm) {
        out.mu_out = ddnm_forward(tape, out.p_tilde, nodes, prefix, cfg, task, full_geom, window,
                                  norm, &out.restored);
    } else {
        // Table-5 "w/o DDNM": plain FBP of the compensated data
        const int content =
            task == TaskKind::fvct ? tape.slice_channels(out.p_tilde, 1, 1) : out.p_tilde;
        out.restored = content;
        out.mu_out = tape.fbp_layer(content, full_geom, window);
    }
    return out;
}

#define CTML_INSTANTIATE(T)                                                                       \
    template void init_unet_params<T>(ParamMap<T>&, const std::string&, const UNetConfig&,        \
                                      std::uint64_t);                                             \
    template ParamMap<T> init_subnetwork_params<T>(const SubnetConfig&, std::uint64_t,            \
                                                   const std::string&);                           \
    template NodeMap<T> register_params<T>(Tape<T>&, const ParamMap<T>&, bool);                   \
    template int unet_forward<T>(Tape<T>&, int, const NodeMap<T>&, const std::string&,            \
                                 const UNetConfig&);                                              \
    template int pnm_forward<T>(Tape<T>&, int, const NodeMap<T>&, const std::string&,             \
                                const UNetConfig&, const NormStats&);                             \
    template int compensate<T>(Tape<T>&, int, int, const ViewMask*, TaskKind,                     \
                               const ScanGeometry&);                                              \
    template int ddnm_forward<T>(Tape<T>&, int, const NodeMap<T>&, const std::string&,            \
                                 const SubnetConfig&, TaskKind, const ScanGeometry&, Window,      \
                                 const NormStats&, int*);                                         \
    template SubnetNodes subnetwork_forward<T>(Tape<T>&, int, int, const NodeMap<T>&,             \
                                               const std::string&, const SubnetConfig&, TaskKind, \
                                               const ViewMask*, const ScanGeometry&, Window,      \
                                               const NormStats&, const SubnetOptions&);

CTML_INSTANTIATE(float)
CTML_INSTANTIATE(double)
#undef CTML_INSTANTIATE

} // namespace ctml
