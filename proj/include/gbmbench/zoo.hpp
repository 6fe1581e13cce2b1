// Copyright (c) 2026 gbmbench contributors
// SPDX-License-Identifier: Apache-2.0
//
// Architecture catalog: eleven model families over a shared layer kit, each
// buildable at full benchmark scale (PAPER) or at a reduced smoke-test scale
// (TOY) that keeps the topology and shrinks the widths. A ModelSpec is a
// plain, JSON-serializable description; `build` turns it into a seeded
// nn::Model. Families whose full-scale backbones are pretrained (VIT2D_LSTM,
// MAMBA2D) require a user-supplied weight file at PAPER scale and refuse to
// fabricate weights silently.
#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gbmbench/common.hpp"
#include "gbmbench/nn.hpp"
#include "gbmbench/ops.hpp"
#include "gbmbench/ops_nn.hpp"
#include "gbmbench/prof.hpp"
#include "gbmbench/rng.hpp"

namespace gbmbench {

// ---------------------------------------------------------------------------
// Family / scale enums and names.

enum class Family {
    CNN3D,
    LSTM,
    VIT3D,
    RESNET3D,
    CNN_LSTM,
    CNN_SE,
    VIT2D_LSTM,
    SWIN3D,
    SWIN_CNN,
    MAMBA2D,
    MAMBA2D_CNN,
};

constexpr int kNumFamilies = 11;

enum class Scale { PAPER, TOY };

struct UnknownFamily : Error {
    explicit UnknownFamily(const std::string& name) : Error("unknown model family: " + name) {}
};

/// Thrown when a family whose full-scale backbone is pretrained is built at
/// PAPER scale without a weight file. TOY builds are always hermetic.
struct PretrainedWeightsUnavailable : Error {
    explicit PretrainedWeightsUnavailable(const std::string& what) : Error(what) {}
};

inline const std::vector<std::string>& family_names() {
    static const std::vector<std::string> names = {
        "CNN3D",      "LSTM",   "VIT3D",    "RESNET3D", "CNN_LSTM",    "CNN_SE",
        "VIT2D_LSTM", "SWIN3D", "SWIN_CNN", "MAMBA2D",  "MAMBA2D_CNN",
    };
    return names;
}

inline std::string to_string(Family f) { return family_names()[static_cast<int>(f)]; }

inline std::string to_string(Scale s) { return s == Scale::PAPER ? "PAPER" : "TOY"; }

inline Family parse_family(const std::string& name) {
    std::string up = name;
    std::transform(up.begin(), up.end(), up.begin(),
                   [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
    const auto& names = family_names();
    for (int i = 0; i < kNumFamilies; ++i)
        if (names[static_cast<size_t>(i)] == up) return static_cast<Family>(i);
    throw UnknownFamily(name);
}

inline Scale parse_scale(const std::string& name) {
    if (name == "PAPER" || name == "paper") return Scale::PAPER;
    if (name == "TOY" || name == "toy") return Scale::TOY;
    throw Error("unknown scale: " + name + " (expected PAPER or TOY)");
}

/// Families that read the volume as a slice sequence along the first spatial
/// axis (they get a shorter stack at TOY scale).
inline bool is_sequence_family(Family f) {
    switch (f) {
        case Family::LSTM:
        case Family::CNN_LSTM:
        case Family::VIT2D_LSTM:
        case Family::MAMBA2D:
        case Family::MAMBA2D_CNN:
            return true;
        default:
            return false;
    }
}

/// Families whose PAPER-scale backbone weights come from a user-supplied file.
inline bool needs_pretrained(Family f) {
    return f == Family::VIT2D_LSTM || f == Family::MAMBA2D;
}

// ---------------------------------------------------------------------------
// ModelSpec.

struct ModelSpec {
    Family family = Family::CNN3D;
    Scale scale = Scale::PAPER;
    int64_t num_classes = 3;
    std::map<std::string, int64_t> params;

    int64_t p(const std::string& key) const {
        auto it = params.find(key);
        if (it == params.end())
            throw Error("ModelSpec(" + to_string(family) + "): missing param " + key);
        return it->second;
    }

    bool has(const std::string& key) const { return params.count(key) != 0; }

    /// Per-sample input dims [C, D, H, W] (batch excluded).
    Shape input_dims() const {
        if (scale == Scale::PAPER) return {1, 128, 128, 128};
        return is_sequence_family(family) ? Shape{1, 16, 32, 32} : Shape{1, 32, 32, 32};
    }

    /// Catalog name plus the variant suffix where one family covers several
    /// benchmark rows (the slice-sequence state-space model runs at two stack
    /// depths).
    std::string display_name() const {
        std::string n = to_string(family);
        if (family == Family::MAMBA2D) n += "-" + std::to_string(p("n_slices"));
        return n;
    }
};

inline ModelSpec default_spec(Family f) {
    ModelSpec s;
    s.family = f;
    s.scale = Scale::PAPER;
    switch (f) {
        case Family::CNN3D:
            s.params = {{"width1", 8}, {"width2", 16}, {"width3", 32}};
            break;
        case Family::LSTM:
            s.params = {{"hidden", 128}};
            break;
        case Family::VIT3D:
            s.params = {{"patch", 16}, {"embed", 512}, {"depth", 8},
                        {"heads", 8},  {"mlp_ratio", 4}, {"proj", 2048}};
            break;
        case Family::RESNET3D:
            s.params = {{"stem", 8}, {"width1", 16}, {"width2", 32}, {"width3", 64}};
            break;
        case Family::CNN_LSTM:
            s.params = {{"width1", 8}, {"width2", 16}, {"width3", 32}, {"hidden", 128}};
            break;
        case Family::CNN_SE:
            s.params = {{"width1", 8}, {"width2", 16}, {"width3", 32}};
            break;
        case Family::VIT2D_LSTM:
            s.params = {{"resize", 224}, {"patch", 16},     {"embed", 768}, {"depth", 12},
                        {"heads", 12},   {"mlp_ratio", 4},  {"hidden", 128}};
            break;
        case Family::SWIN3D:
            s.params = {{"patch", 4}, {"embed", 48}, {"window", 4}, {"heads", 3}, {"proj", 128}};
            break;
        case Family::SWIN_CNN:
            s.params = {{"width1", 32}, {"width2", 64}, {"width3", 128}, {"window", 8},
                        {"shifted_pass", 1}};
            break;
        case Family::MAMBA2D:
            s.params = {{"n_slices", 50}, {"resize", 224}, {"patch", 16}, {"embed", 384},
                        {"depth", 4},     {"d_state", 16}, {"proj", 128}};
            break;
        case Family::MAMBA2D_CNN:
            s.params = {{"n_slices", 50}, {"resize", 224}, {"patch", 16}, {"embed", 384},
                        {"depth", 4},     {"d_state", 16}, {"proj", 128}, {"cnn1", 32},
                        {"cnn2", 64},     {"cnn3", 128}};
            break;
    }
    return s;
}

/// Reduces a spec to smoke-test size: widths, hidden sizes, embeddings,
/// projections, and state sizes shrink by 4x (floor 2); 2D slice resolution
/// drops to 32 and slice stacks to 16; patch/window sizes, depths, and head
/// counts keep the full-scale topology. Idempotent: a TOY spec is returned
/// unchanged.
inline ModelSpec toy_scale(const ModelSpec& spec) {
    if (spec.scale == Scale::TOY) return spec;
    ModelSpec t = spec;
    t.scale = Scale::TOY;
    static const std::vector<std::string> shrink = {
        "width1", "width2", "width3", "hidden", "embed", "proj",
        "stem",   "d_state", "cnn1",  "cnn2",   "cnn3",
    };
    for (const auto& key : shrink) {
        auto it = t.params.find(key);
        if (it != t.params.end()) it->second = std::max<int64_t>(2, it->second / 4);
    }
    if (t.params.count("resize")) t.params["resize"] = 32;
    if (t.params.count("n_slices")) t.params["n_slices"] = 16;
    return t;
}

/// Per-variant training batch sizes (full-scale memory ceilings carry over to
/// the benchmark grid regardless of build scale).
inline std::vector<int64_t> batch_grid(const ModelSpec& spec) {
    if (spec.family == Family::SWIN3D) return {1, 6};
    if (spec.family == Family::MAMBA2D && spec.p("n_slices") == 50) return {1, 6};
    if (spec.family == Family::MAMBA2D_CNN) return {1, 2, 4, 8};
    return {1, 8};
}

/// The benchmark row set: one spec per default family plus the 16-slice
/// state-space variant (12 variants in all).
inline std::vector<ModelSpec> table_variants(Scale scale = Scale::PAPER) {
    std::vector<ModelSpec> out;
    for (int i = 0; i < kNumFamilies; ++i) {
        ModelSpec s = default_spec(static_cast<Family>(i));
        out.push_back(scale == Scale::TOY ? toy_scale(s) : s);
        if (static_cast<Family>(i) == Family::MAMBA2D) {
            ModelSpec v = default_spec(Family::MAMBA2D);
            v.params["n_slices"] = 16;
            out.push_back(scale == Scale::TOY ? toy_scale(v) : v);
        }
    }
    return out;
}

/// Parses a variant name as printed by display_name(): a family name with an
/// optional "-<n_slices>" suffix on the slice-sequence state-space family.
inline ModelSpec spec_for_name(const std::string& name, Scale scale = Scale::PAPER) {
    std::string base = name;
    int64_t n_slices = -1;
    const size_t dash = name.find_last_of('-');
    if (dash != std::string::npos) {
        const std::string suffix = name.substr(dash + 1);
        if (!suffix.empty() && suffix.find_first_not_of("0123456789") == std::string::npos) {
            base = name.substr(0, dash);
            n_slices = std::stoll(suffix);
        }
    }
    ModelSpec s = default_spec(parse_family(base));
    if (n_slices > 0) {
        if (!s.params.count("n_slices"))
            throw UnknownFamily(name + " (family has no slice-count variant)");
        s.params["n_slices"] = n_slices;
    }
    if (scale == Scale::TOY) s = toy_scale(s);
    return s;
}

inline nlohmann::json spec_to_json(const ModelSpec& s) {
    nlohmann::json j;
    j["family"] = to_string(s.family);
    j["scale"] = to_string(s.scale);
    j["num_classes"] = s.num_classes;
    j["params"] = s.params;
    return j;
}

inline ModelSpec spec_from_json(const nlohmann::json& j) {
    ModelSpec s;
    s.family = parse_family(j.at("family").get<std::string>());
    s.scale = parse_scale(j.at("scale").get<std::string>());
    s.num_classes = j.at("num_classes").get<int64_t>();
    s.params = j.at("params").get<std::map<std::string, int64_t>>();
    return s;
}

// ---------------------------------------------------------------------------
// Shared geometry helpers.

namespace zoo_detail {

/// Gather order that regroups a flattened cubic token grid (z, y, x order,
/// x fastest) into contiguous non-overlapping w^3 windows. Requires w | g.
inline std::vector<int64_t> window_order(int64_t g, int64_t w) {
    if (g % w != 0) throw Error("window_order: window must divide grid");
    std::vector<int64_t> idx;
    idx.reserve(g * g * g);
    const int64_t n = g / w;
    for (int64_t wz = 0; wz < n; ++wz)
        for (int64_t wy = 0; wy < n; ++wy)
            for (int64_t wx = 0; wx < n; ++wx)
                for (int64_t iz = 0; iz < w; ++iz)
                    for (int64_t iy = 0; iy < w; ++iy)
                        for (int64_t ix = 0; ix < w; ++ix)
                            idx.push_back(((wz * w + iz) * g + wy * w + iy) * g + wx * w + ix);
    return idx;
}

inline std::vector<int64_t> inverse_order(const std::vector<int64_t>& order) {
    std::vector<int64_t> inv(order.size());
    for (size_t i = 0; i < order.size(); ++i) inv[static_cast<size_t>(order[i])] = static_cast<int64_t>(i);
    return inv;
}

/// Additive attention mask for cyclic-shifted windows: [nw, wL, wL] with 0 for
/// allowed pairs and -100 for pairs of tokens that were not spatial neighbors
/// before the shift. Region ids are assigned in the shifted frame, where along
/// each axis positions [0, g-w) hold an unwrapped run, [g-w, g-s) the run that
/// ends at the old boundary, and [g-s, g) the wrapped-around start.
inline Tensor shift_mask(int64_t g, int64_t w, int64_t s) {
    auto seg = [&](int64_t p) -> int { return p < g - w ? 0 : (p < g - s ? 1 : 2); };
    const int64_t n = g / w, nw = n * n * n, wl = w * w * w;
    Tensor mask({nw, wl, wl});
    std::vector<int> id(static_cast<size_t>(wl));
    int64_t wi = 0;
    for (int64_t wz = 0; wz < n; ++wz)
        for (int64_t wy = 0; wy < n; ++wy)
            for (int64_t wx = 0; wx < n; ++wx) {
                size_t k = 0;
                for (int64_t iz = 0; iz < w; ++iz)
                    for (int64_t iy = 0; iy < w; ++iy)
                        for (int64_t ix = 0; ix < w; ++ix)
                            id[k++] = (seg(wz * w + iz) * 3 + seg(wy * w + iy)) * 3 +
                                      seg(wx * w + ix);
                float* mp = mask.data() + wi * wl * wl;
                for (int64_t a = 0; a < wl; ++a)
                    for (int64_t b = 0; b < wl; ++b)
                        mp[a * wl + b] = id[static_cast<size_t>(a)] == id[static_cast<size_t>(b)]
                                             ? 0.0f
                                             : -100.0f;
                ++wi;
            }
    return mask;
}

/// Eight child gather index sets for 2x2x2 token merging on a g^3 grid.
inline std::array<std::vector<int64_t>, 8> merge_indices(int64_t g) {
    std::array<std::vector<int64_t>, 8> out;
    const int64_t h = g / 2;
    for (int64_t dz = 0; dz < 2; ++dz)
        for (int64_t dy = 0; dy < 2; ++dy)
            for (int64_t dx = 0; dx < 2; ++dx) {
                auto& v = out[static_cast<size_t>((dz * 2 + dy) * 2 + dx)];
                v.reserve(h * h * h);
                for (int64_t z = 0; z < h; ++z)
                    for (int64_t y = 0; y < h; ++y)
                        for (int64_t x = 0; x < h; ++x)
                            v.push_back(((2 * z + dz) * g + 2 * y + dy) * g + 2 * x + dx);
            }
    return out;
}

/// Evenly spaced slice subsample; first and last slices always included.
inline std::vector<int64_t> subsample_indices(int64_t d, int64_t s) {
    std::vector<int64_t> idx(static_cast<size_t>(s));
    if (s == 1) {
        idx[0] = d / 2;
        return idx;
    }
    for (int64_t i = 0; i < s; ++i)
        idx[static_cast<size_t>(i)] =
            std::llround(static_cast<double>(i) * static_cast<double>(d - 1) /
                         static_cast<double>(s - 1));
    return idx;
}

/// [B, G, C] tokens -> [B*nw, wL, C] windows.
inline Var partition_tokens(const Var& t, const std::vector<int64_t>& order, int64_t nw,
                            int64_t wl) {
    const int64_t B = t.shape()[0], C = t.shape()[2];
    Var g = ops::index_select(t, 1, order);
    return ops::reshape(g, {B * nw, wl, C});
}

/// Inverse of partition_tokens.
inline Var unpartition_tokens(const Var& t, const std::vector<int64_t>& inv, int64_t B, int64_t G) {
    const int64_t C = t.shape()[2];
    Var g = ops::reshape(t, {B, G, C});
    return ops::index_select(g, 1, inv);
}

/// Cyclic roll of a flattened cubic token grid along all three axes.
inline Var roll_tokens(const Var& t, int64_t g, int64_t shift) {
    const int64_t B = t.shape()[0], C = t.shape()[2];
    Var r = ops::reshape(t, {B, g, g, g, C});
    r = ops::roll(r, 1, shift);
    r = ops::roll(r, 2, shift);
    r = ops::roll(r, 3, shift);
    return ops::reshape(r, {B, g * g * g, C});
}

/// [B, C, g, g, g] feature map -> [B*nw, C, w, w, w] window stack.
inline Var partition_volume(const Var& x, const std::vector<int64_t>& order, int64_t w) {
    const int64_t B = x.shape()[0], C = x.shape()[1];
    const int64_t L = static_cast<int64_t>(order.size());
    const int64_t wl = w * w * w, nw = L / wl;
    Var r = ops::reshape(x, {B, C, L});
    r = ops::index_select(r, 2, order);
    r = ops::reshape(r, {B, C, nw, wl});
    r = ops::permute(r, {0, 2, 1, 3});
    return ops::reshape(r, {B * nw, C, w, w, w});
}

/// Inverse of partition_volume (channel count may have changed).
inline Var unpartition_volume(const Var& x, const std::vector<int64_t>& inv, int64_t B, int64_t g) {
    const int64_t nw = x.shape()[0] / B, C = x.shape()[1];
    const int64_t wl = x.shape()[2] * x.shape()[3] * x.shape()[4];
    Var r = ops::reshape(x, {B, nw, C, wl});
    r = ops::permute(r, {0, 2, 1, 3});
    r = ops::reshape(r, {B, C, nw * wl});
    r = ops::index_select(r, 2, inv);
    return ops::reshape(r, {B, C, g, g, g});
}

/// Cyclic roll of a [B, C, D, H, W] feature map along all three spatial axes.
inline Var roll_volume(const Var& x, int64_t shift) {
    Var r = ops::roll(x, 2, shift);
    r = ops::roll(r, 3, shift);
    return ops::roll(r, 4, shift);
}

/// [B, 1, D, H, W] volume -> [B*S, 3, R, R] slice image stack: optional even
/// subsample of the stack, bilinear in-plane resize, grayscale replicated to
/// three channels (the contract pretrained 2D backbones expect).
inline Var slices_to_images(const Var& x, const std::vector<int64_t>* subsample, int64_t resize) {
    const int64_t B = x.shape()[0], D = x.shape()[2], H = x.shape()[3], W = x.shape()[4];
    Var s = ops::reshape(x, {B, D, H, W});
    int64_t S = D;
    if (subsample != nullptr) {
        s = ops::index_select(s, 1, *subsample);
        S = static_cast<int64_t>(subsample->size());
    }
    s = ops::reshape(s, {B * S, 1, H, W});
    if (H != resize || W != resize) s = ops::resize_bilinear2d(s, resize, resize);
    return ops::concat({s, s, s}, 1);
}

/// [N, C, t, t] patch-embed output -> [N, T, C] token sequence.
inline Var tokens_from_2d(const Var& f) {
    const int64_t N = f.shape()[0], C = f.shape()[1], T = f.shape()[2] * f.shape()[3];
    return ops::permute(ops::reshape(f, {N, C, T}), {0, 2, 1});
}

/// [N, C, g, g, g] patch-embed output -> [N, G, C] token sequence.
inline Var tokens_from_3d(const Var& f) {
    const int64_t N = f.shape()[0], C = f.shape()[1];
    const int64_t G = f.shape()[2] * f.shape()[3] * f.shape()[4];
    return ops::permute(ops::reshape(f, {N, C, G}), {0, 2, 1});
}

inline void check_input(const Var& x, const Shape& dims, Family f) {
    const Shape& s = x.shape();
    bool ok = s.size() == dims.size() + 1 && s[0] >= 1;
    if (ok)
        for (size_t i = 0; i < dims.size(); ++i) ok = ok && s[i + 1] == dims[i];
    if (!ok) {
        std::string want = "[B";
        for (int64_t d : dims) want += "," + std::to_string(d);
        throw Error(to_string(f) + ": input shape mismatch (expected " + want + "])");
    }
}

/// Classification token trunk shared by the 2D and 3D vision transformers:
/// CLS + learned positions, pre-norm encoder blocks, final LayerNorm, CLS out.
struct VitTrunk {
    Var cls, pos;
    std::vector<nn::TransformerBlock> blocks;
    nn::LayerNorm ln_f;
    int64_t embed = 0;

    /// tokens [N, T, E] -> CLS feature [N, E]
    Var operator()(const Var& tokens) const {
        const int64_t N = tokens.shape()[0];
        Var y = ops::concat({ops::repeat_axis0(cls, N), tokens}, 1);
        y = ops::add(y, pos);
        for (const auto& b : blocks) y = b(y);
        y = ln_f(y);
        return ops::reshape(ops::slice(y, 1, 0, 1), {N, embed});
    }
};

inline VitTrunk make_vit_trunk(nn::Model& m, const std::string& name, int64_t tokens, int64_t embed,
                               int64_t depth, int64_t heads, int64_t mlp_ratio, Rng& rng,
                               bool trainable) {
    VitTrunk t;
    t.embed = embed;
    t.cls = m.add_param(name + ".cls", nn::uniform_tensor({1, 1, embed}, 0.02, rng), trainable);
    t.pos = m.add_param(name + ".pos", nn::uniform_tensor({1, tokens + 1, embed}, 0.02, rng),
                        trainable);
    for (int64_t i = 0; i < depth; ++i)
        t.blocks.push_back(nn::make_transformer_block(m, name + ".block" + std::to_string(i),
                                                      embed, heads, mlp_ratio, rng, trainable));
    t.ln_f = nn::make_layernorm(m, name + ".ln_f", embed, trainable);
    return t;
}

/// Conv-BN-ReLU with a strided 1x1x1 projection skip.
struct ResBlock {
    nn::Conv3d conv1, conv2, down;
    nn::BatchNorm bn1, bn2, bnd;

    Var operator()(const Var& x, bool training) const {
        Var y = ops::relu(bn1(conv1(x), training));
        y = bn2(conv2(y), training);
        Var s = bnd(down(x), training);
        return ops::relu(ops::add(y, s));
    }
};

inline ResBlock make_res_block(nn::Model& m, const std::string& name, int64_t cin, int64_t cout,
                               Rng& rng) {
    ResBlock b;
    b.conv1 = nn::make_conv3d(m, name + ".conv1", cin, cout, 3, rng, {2, 2, 2}, {1, 1, 1});
    b.bn1 = nn::make_batchnorm(m, name + ".bn1", cout, rng);
    b.conv2 = nn::make_conv3d(m, name + ".conv2", cout, cout, 3, rng, {1, 1, 1}, {1, 1, 1});
    b.bn2 = nn::make_batchnorm(m, name + ".bn2", cout, rng);
    b.down = nn::make_conv3d(m, name + ".down", cin, cout, 1, rng, {2, 2, 2}, {0, 0, 0});
    b.bnd = nn::make_batchnorm(m, name + ".bnd", cout, rng);
    return b;
}

}  // namespace zoo_detail

// ---------------------------------------------------------------------------
// Families.

/// Plain volumetric CNN: three conv-BN-ReLU blocks with channel doubling,
/// in-plane/depth downsampling after the first two blocks, fixed-size average
/// pooling into a linear head.
class Cnn3dModel : public nn::Model {
public:
    Cnn3dModel(const ModelSpec& spec, Rng& rng) : dims_(spec.input_dims()) {
        const int64_t w1 = spec.p("width1"), w2 = spec.p("width2"), w3 = spec.p("width3");
        c1_ = nn::make_conv3d(*this, "block1.conv", 1, w1, 3, rng, {1, 1, 1}, {1, 1, 1});
        n1_ = nn::make_batchnorm(*this, "block1.bn", w1, rng);
        c2_ = nn::make_conv3d(*this, "block2.conv", w1, w2, 3, rng, {1, 1, 1}, {1, 1, 1});
        n2_ = nn::make_batchnorm(*this, "block2.bn", w2, rng);
        c3_ = nn::make_conv3d(*this, "block3.conv", w2, w3, 3, rng, {1, 1, 1}, {1, 1, 1});
        n3_ = nn::make_batchnorm(*this, "block3.bn", w3, rng);
        head_ = nn::make_linear(*this, "head", w3 * 64, spec.num_classes, rng);
        structure["widths"] = std::to_string(w1) + "," + std::to_string(w2) + "," +
                              std::to_string(w3);
        structure["flatten"] = std::to_string(w3 * 64);
    }

    Var forward(const Var& x) override {
        zoo_detail::check_input(x, dims_, Family::CNN3D);
        Var y = ops::relu(n1_(c1_(x), training));
        probe("block1.prepool", y);
        y = ops::maxpool3d(y, {2, 2, 2}, {2, 2, 2});
        y = ops::relu(n2_(c2_(y), training));
        probe("block2.prepool", y);
        y = ops::maxpool3d(y, {2, 2, 2}, {2, 2, 2});
        y = ops::relu(n3_(c3_(y), training));
        y = ops::adaptive_avg_pool3d(y, {4, 4, 4});
        return head_(ops::flatten_from(y, 1));
    }

private:
    Shape dims_;
    nn::Conv3d c1_, c2_, c3_;
    nn::BatchNorm n1_, n2_, n3_;
    nn::Linear head_;
};

/// Slice-sequence recurrent baseline: each in-plane slice flattened to a
/// feature vector, one unidirectional LSTM over the stack, final hidden state
/// into the head.
class LstmModel : public nn::Model {
public:
    LstmModel(const ModelSpec& spec, Rng& rng) : dims_(spec.input_dims()) {
        const int64_t feat = dims_[2] * dims_[3];
        lstm_ = nn::make_lstm(*this, "lstm", feat, spec.p("hidden"), rng);
        head_ = nn::make_linear(*this, "head", spec.p("hidden"), spec.num_classes, rng);
        structure["seq_len"] = std::to_string(dims_[1]);
        structure["feat"] = std::to_string(feat);
    }

    Var forward(const Var& x) override {
        zoo_detail::check_input(x, dims_, Family::LSTM);
        const int64_t B = x.shape()[0];
        Var seq = ops::reshape(x, {B, dims_[1], dims_[2] * dims_[3]});
        return head_(lstm_(seq));
    }

private:
    Shape dims_;
    nn::Lstm lstm_;
    nn::Linear head_;
};

/// Volumetric vision transformer: cubic patch embedding, CLS-token encoder,
/// wide projection before the head.
class Vit3dModel : public nn::Model {
public:
    Vit3dModel(const ModelSpec& spec, Rng& rng) : dims_(spec.input_dims()) {
        const int64_t p = spec.p("patch"), e = spec.p("embed");
        grid_ = dims_[1] / p;
        if (grid_ * p != dims_[1]) throw Error("VIT3D: patch must divide input");
        patch_ = nn::make_conv3d(*this, "patch", 1, e, p, rng,
                                 {p, p, p}, {0, 0, 0});
        trunk_ = zoo_detail::make_vit_trunk(*this, "encoder", grid_ * grid_ * grid_, e,
                                            spec.p("depth"), spec.p("heads"),
                                            spec.p("mlp_ratio"), rng, true);
        proj_ = nn::make_linear(*this, "proj", e, spec.p("proj"), rng);
        head_ = nn::make_linear(*this, "head", spec.p("proj"), spec.num_classes, rng);
        structure["tokens"] = std::to_string(grid_ * grid_ * grid_);
        structure["embed"] = std::to_string(e);
    }

    Var forward(const Var& x) override {
        zoo_detail::check_input(x, dims_, Family::VIT3D);
        Var t = zoo_detail::tokens_from_3d(patch_(x));
        Var f = trunk_(t);
        return head_(ops::gelu(proj_(f)));
    }

private:
    Shape dims_;
    int64_t grid_ = 0;
    nn::Conv3d patch_;
    zoo_detail::VitTrunk trunk_;
    nn::Linear proj_, head_;
};

/// Residual volumetric CNN: conv stem, three strided residual stages with
/// projection skips, anisotropic average pooling into the head.
class Resnet3dModel : public nn::Model {
public:
    Resnet3dModel(const ModelSpec& spec, Rng& rng) : dims_(spec.input_dims()) {
        const int64_t s = spec.p("stem");
        const int64_t w1 = spec.p("width1"), w2 = spec.p("width2"), w3 = spec.p("width3");
        stem_ = nn::make_conv3d(*this, "stem.conv", 1, s, 3, rng, {1, 1, 1}, {1, 1, 1});
        stem_bn_ = nn::make_batchnorm(*this, "stem.bn", s, rng);
        b1_ = zoo_detail::make_res_block(*this, "stage1", s, w1, rng);
        b2_ = zoo_detail::make_res_block(*this, "stage2", w1, w2, rng);
        b3_ = zoo_detail::make_res_block(*this, "stage3", w2, w3, rng);
        head_ = nn::make_linear(*this, "head", w3 * 2 * 4 * 4, spec.num_classes, rng);
        structure["widths"] = std::to_string(w1) + "," + std::to_string(w2) + "," +
                              std::to_string(w3);
        structure["flatten"] = std::to_string(w3 * 2 * 4 * 4);
    }

    Var forward(const Var& x) override {
        zoo_detail::check_input(x, dims_, Family::RESNET3D);
        Var y = ops::relu(stem_bn_(stem_(x), training));
        y = b1_(y, training);
        y = b2_(y, training);
        y = b3_(y, training);
        y = ops::adaptive_avg_pool3d(y, {2, 4, 4});
        return head_(ops::flatten_from(y, 1));
    }

private:
    Shape dims_;
    nn::Conv3d stem_;
    nn::BatchNorm stem_bn_;
    zoo_detail::ResBlock b1_, b2_, b3_;
    nn::Linear head_;
};

/// Convolutional encoder over each slice stack with in-plane-only pooling (the
/// slice axis is preserved), spatial averaging into per-slice embeddings, an
/// LSTM over the stack, head on the final hidden state.
class CnnLstmModel : public nn::Model {
public:
    CnnLstmModel(const ModelSpec& spec, Rng& rng) : dims_(spec.input_dims()) {
        const int64_t w1 = spec.p("width1"), w2 = spec.p("width2"), w3 = spec.p("width3");
        c1_ = nn::make_conv3d(*this, "block1.conv", 1, w1, 3, rng, {1, 1, 1}, {1, 1, 1});
        n1_ = nn::make_batchnorm(*this, "block1.bn", w1, rng);
        c2_ = nn::make_conv3d(*this, "block2.conv", w1, w2, 3, rng, {1, 1, 1}, {1, 1, 1});
        n2_ = nn::make_batchnorm(*this, "block2.bn", w2, rng);
        c3_ = nn::make_conv3d(*this, "block3.conv", w2, w3, 3, rng, {1, 1, 1}, {1, 1, 1});
        n3_ = nn::make_batchnorm(*this, "block3.bn", w3, rng);
        lstm_ = nn::make_lstm(*this, "lstm", w3, spec.p("hidden"), rng);
        head_ = nn::make_linear(*this, "head", spec.p("hidden"), spec.num_classes, rng);
        structure["widths"] = std::to_string(w1) + "," + std::to_string(w2) + "," +
                              std::to_string(w3);
        structure["seq_len"] = std::to_string(dims_[1]);
    }

    Var forward(const Var& x) override {
        zoo_detail::check_input(x, dims_, Family::CNN_LSTM);
        Var y = ops::relu(n1_(c1_(x), training));
        y = ops::maxpool3d(y, {1, 2, 2}, {1, 2, 2});
        y = ops::relu(n2_(c2_(y), training));
        y = ops::maxpool3d(y, {1, 2, 2}, {1, 2, 2});
        y = ops::relu(n3_(c3_(y), training));
        y = ops::maxpool3d(y, {1, 2, 2}, {1, 2, 2});
        y = ops::mean_axis(y, 4);          // [B, C, D, H]
        y = ops::mean_axis(y, 3);          // [B, C, D]
        y = ops::permute(y, {0, 2, 1});    // [B, D, C]
        return head_(lstm_(y));
    }

private:
    Shape dims_;
    nn::Conv3d c1_, c2_, c3_;
    nn::BatchNorm n1_, n2_, n3_;
    nn::Lstm lstm_;
    nn::Linear head_;
};

/// Full-resolution convolutional stack with squeeze-and-excitation channel
/// gates after every block (no spatial downsampling before the final pool).
class CnnSeModel : public nn::Model {
public:
    CnnSeModel(const ModelSpec& spec, Rng& rng) : dims_(spec.input_dims()) {
        const int64_t w1 = spec.p("width1"), w2 = spec.p("width2"), w3 = spec.p("width3");
        c1_ = nn::make_conv3d(*this, "block1.conv", 1, w1, 3, rng, {1, 1, 1}, {1, 1, 1});
        n1_ = nn::make_batchnorm(*this, "block1.bn", w1, rng);
        se1_ = nn::make_se_block(*this, "block1.se", w1, rng);
        c2_ = nn::make_conv3d(*this, "block2.conv", w1, w2, 3, rng, {1, 1, 1}, {1, 1, 1});
        n2_ = nn::make_batchnorm(*this, "block2.bn", w2, rng);
        se2_ = nn::make_se_block(*this, "block2.se", w2, rng);
        c3_ = nn::make_conv3d(*this, "block3.conv", w2, w3, 3, rng, {1, 1, 1}, {1, 1, 1});
        n3_ = nn::make_batchnorm(*this, "block3.bn", w3, rng);
        se3_ = nn::make_se_block(*this, "block3.se", w3, rng);
        head_ = nn::make_linear(*this, "head", w3 * 64, spec.num_classes, rng);
        structure["widths"] = std::to_string(w1) + "," + std::to_string(w2) + "," +
                              std::to_string(w3);
    }

    Var forward(const Var& x) override {
        zoo_detail::check_input(x, dims_, Family::CNN_SE);
        Var y = se1_(ops::relu(n1_(c1_(x), training)));
        y = se2_(ops::relu(n2_(c2_(y), training)));
        y = se3_(ops::relu(n3_(c3_(y), training)));
        y = ops::adaptive_avg_pool3d(y, {4, 4, 4});
        return head_(ops::flatten_from(y, 1));
    }

private:
    Shape dims_;
    nn::Conv3d c1_, c2_, c3_;
    nn::BatchNorm n1_, n2_, n3_;
    nn::SEBlock se1_, se2_, se3_;
    nn::Linear head_;
};

/// Per-slice 2D vision transformer feeding an LSTM over the slice stack. At
/// full scale the transformer is a frozen pretrained backbone (weights come
/// from a user-supplied file); the reduced scale trains end to end.
class Vit2dLstmModel : public nn::Model {
public:
    Vit2dLstmModel(const ModelSpec& spec, Rng& rng) : dims_(spec.input_dims()) {
        const int64_t r = spec.p("resize"), p = spec.p("patch"), e = spec.p("embed");
        resize_ = r;
        embed_ = e;
        const int64_t grid = r / p;
        if (grid * p != r) throw Error("VIT2D_LSTM: patch must divide resize");
        const bool backbone_trainable = spec.scale == Scale::TOY;
        patch_ = nn::make_conv2d(*this, "backbone.patch", 3, e, p, rng, {p, p}, {0, 0},
                                 backbone_trainable);
        trunk_ = zoo_detail::make_vit_trunk(*this, "backbone", grid * grid, e, spec.p("depth"),
                                            spec.p("heads"), spec.p("mlp_ratio"), rng,
                                            backbone_trainable);
        lstm_ = nn::make_lstm(*this, "lstm", e, spec.p("hidden"), rng);
        head_ = nn::make_linear(*this, "head", spec.p("hidden"), spec.num_classes, rng);
        structure["slice_tokens"] = std::to_string(grid * grid);
        structure["backbone_trainable"] = backbone_trainable ? "1" : "0";
    }

    Var forward(const Var& x) override {
        zoo_detail::check_input(x, dims_, Family::VIT2D_LSTM);
        const int64_t B = x.shape()[0], S = dims_[1];
        Var imgs = zoo_detail::slices_to_images(x, nullptr, resize_);
        Var feats = trunk_(zoo_detail::tokens_from_2d(patch_(imgs)));  // [B*S, E]
        Var seq = ops::reshape(feats, {B, S, embed_});
        return head_(lstm_(seq));
    }

private:
    Shape dims_;
    int64_t resize_ = 0, embed_ = 0;
    nn::Conv2d patch_;
    zoo_detail::VitTrunk trunk_;
    nn::Lstm lstm_;
    nn::Linear head_;
};

/// Hierarchical shifted-window volumetric transformer: cubic patch embedding,
/// four stages of window attention (one plain and one cyclically shifted block
/// per stage) with 2x token merging and channel doubling between stages, mean
/// token pooling into a projection and the head.
class Swin3dModel : public nn::Model {
public:
    Swin3dModel(const ModelSpec& spec, Rng& rng) : dims_(spec.input_dims()) {
        const int64_t p = spec.p("patch"), c0 = spec.p("embed"), win = spec.p("window");
        const int64_t h0 = spec.p("heads");
        int64_t g = dims_[1] / p;
        if (g * p != dims_[1]) throw Error("SWIN3D: patch must divide input");
        patch_ = nn::make_conv3d(*this, "patch", 1, c0, p, rng, {p, p, p}, {0, 0, 0});
        structure["patch"] = std::to_string(p);
        int64_t c = c0;
        for (int s = 0; s < 4; ++s) {
            Stage st;
            st.g = g;
            st.width = c;
            st.ws = std::min(win, g);
            st.shift = g > st.ws ? st.ws / 2 : 0;
            st.wl = st.ws * st.ws * st.ws;
            st.nw = (g / st.ws) * (g / st.ws) * (g / st.ws);
            st.order = zoo_detail::window_order(g, st.ws);
            st.inv = zoo_detail::inverse_order(st.order);
            if (st.shift > 0) st.mask = zoo_detail::shift_mask(g, st.ws, st.shift);
            const int64_t heads = h0 << s;
            const std::string pre = "stage" + std::to_string(s + 1);
            st.blk1 = nn::make_transformer_block(*this, pre + ".block1", c, heads, 4, rng);
            st.blk2 = nn::make_transformer_block(*this, pre + ".block2", c, heads, 4, rng);
            structure[pre + ".resolution"] = std::to_string(g);
            structure[pre + ".width"] = std::to_string(c);
            structure[pre + ".heads"] = std::to_string(heads);
            structure[pre + ".window"] = std::to_string(st.ws);
            structure[pre + ".shift"] = std::to_string(st.shift);
            stages_.push_back(std::move(st));
            if (s < 3) {
                Merge mg;
                mg.idx = zoo_detail::merge_indices(g);
                mg.ln = nn::make_layernorm(*this, pre + ".merge.ln", 8 * c);
                mg.red = nn::make_linear(*this, pre + ".merge.red", 8 * c, 2 * c, rng);
                merges_.push_back(std::move(mg));
                g /= 2;
                c *= 2;
            }
        }
        proj_ = nn::make_linear(*this, "proj", c, spec.p("proj"), rng);
        head_ = nn::make_linear(*this, "head", spec.p("proj"), spec.num_classes, rng);
    }

    Var forward(const Var& x) override {
        zoo_detail::check_input(x, dims_, Family::SWIN3D);
        const int64_t B = x.shape()[0];
        Var t = zoo_detail::tokens_from_3d(patch_(x));
        for (size_t s = 0; s < stages_.size(); ++s) {
            const Stage& st = stages_[s];
            const int64_t G = st.g * st.g * st.g;
            // Plain window attention.
            Var w = zoo_detail::partition_tokens(t, st.order, st.nw, st.wl);
            w = st.blk1(w);
            t = zoo_detail::unpartition_tokens(w, st.inv, B, G);
            // Shifted window attention (mask blocks wrapped-together tokens).
            if (st.shift > 0) {
                t = zoo_detail::roll_tokens(t, st.g, -st.shift);
                w = zoo_detail::partition_tokens(t, st.order, st.nw, st.wl);
                w = st.blk2(w, &st.mask);
                t = zoo_detail::unpartition_tokens(w, st.inv, B, G);
                t = zoo_detail::roll_tokens(t, st.g, st.shift);
            } else {
                w = zoo_detail::partition_tokens(t, st.order, st.nw, st.wl);
                w = st.blk2(w);
                t = zoo_detail::unpartition_tokens(w, st.inv, B, G);
            }
            prof::mark("swin3d.stage" + std::to_string(s + 1), t.shape());
            if (s < merges_.size()) {
                const Merge& mg = merges_[s];
                std::vector<Var> kids;
                kids.reserve(8);
                for (const auto& idx : mg.idx) kids.push_back(ops::index_select(t, 1, idx));
                t = mg.red(mg.ln(ops::concat(kids, 2)));
            }
        }
        Var f = ops::mean_axis(t, 1);  // [B, C]
        return head_(ops::relu(proj_(f)));
    }

private:
    struct Stage {
        nn::TransformerBlock blk1, blk2;
        std::vector<int64_t> order, inv;
        Tensor mask;
        int64_t g = 0, ws = 0, shift = 0, wl = 0, nw = 0, width = 0;
    };
    struct Merge {
        std::array<std::vector<int64_t>, 8> idx;
        nn::LayerNorm ln;
        nn::Linear red;
    };

    Shape dims_;
    nn::Conv3d patch_;
    std::vector<Stage> stages_;
    std::vector<Merge> merges_;
    nn::Linear proj_, head_;
};

/// Convolutional downsampling followed by window-partitioned convolution: the
/// grid is cut into non-overlapping cubic windows convolved independently,
/// then (optionally) the same under a half-window cyclic shift so information
/// crosses window borders.
class SwinCnnModel : public nn::Model {
public:
    SwinCnnModel(const ModelSpec& spec, Rng& rng) : dims_(spec.input_dims()) {
        const int64_t w1 = spec.p("width1"), w2 = spec.p("width2"), w3 = spec.p("width3");
        shifted_ = spec.p("shifted_pass") != 0;
        grid_ = dims_[1] / 4;  // two stride-2 convolutions
        ws_ = std::min<int64_t>(spec.p("window"), grid_);
        order_ = zoo_detail::window_order(grid_, ws_);
        inv_ = zoo_detail::inverse_order(order_);
        c1_ = nn::make_conv3d(*this, "conv1", 1, w1, 3, rng, {2, 2, 2}, {1, 1, 1});
        n1_ = nn::make_batchnorm(*this, "bn1", w1, rng);
        c2_ = nn::make_conv3d(*this, "conv2", w1, w2, 3, rng, {2, 2, 2}, {1, 1, 1});
        n2_ = nn::make_batchnorm(*this, "bn2", w2, rng);
        cw1_ = nn::make_conv3d(*this, "window1.conv", w2, w3, 3, rng, {1, 1, 1}, {1, 1, 1});
        nw1_ = nn::make_batchnorm(*this, "window1.bn", w3, rng);
        if (shifted_) {
            cw2_ = nn::make_conv3d(*this, "window2.conv", w3, w3, 3, rng, {1, 1, 1}, {1, 1, 1});
            nw2_ = nn::make_batchnorm(*this, "window2.bn", w3, rng);
        }
        head_ = nn::make_linear(*this, "head", w3, spec.num_classes, rng);
        structure["grid"] = std::to_string(grid_);
        structure["window"] = std::to_string(ws_);
        structure["shifted_pass"] = shifted_ ? "1" : "0";
    }

    Var forward(const Var& x) override {
        zoo_detail::check_input(x, dims_, Family::SWIN_CNN);
        const int64_t B = x.shape()[0];
        Var y = ops::relu(n1_(c1_(x), training));
        y = ops::relu(n2_(c2_(y), training));
        Var w = zoo_detail::partition_volume(y, order_, ws_);
        w = ops::relu(nw1_(cw1_(w), training));
        y = zoo_detail::unpartition_volume(w, inv_, B, grid_);
        if (shifted_) {
            y = zoo_detail::roll_volume(y, -ws_ / 2);
            w = zoo_detail::partition_volume(y, order_, ws_);
            w = ops::relu(nw2_(cw2_(w), training));
            y = zoo_detail::unpartition_volume(w, inv_, B, grid_);
            y = zoo_detail::roll_volume(y, ws_ / 2);
        }
        y = ops::adaptive_avg_pool3d(y, {1, 1, 1});
        return head_(ops::flatten_from(y, 1));
    }

private:
    Shape dims_;
    bool shifted_ = true;
    int64_t grid_ = 0, ws_ = 0;
    std::vector<int64_t> order_, inv_;
    nn::Conv3d c1_, c2_, cw1_, cw2_;
    nn::BatchNorm n1_, n2_, nw1_, nw2_;
    nn::Linear head_;
};

/// Slice-sequence selective-state-space model (optionally with a parallel
/// per-slice CNN branch). Slices are evenly subsampled, patch-embedded in 2D,
/// and the token sequences of all slices are concatenated in slice order so
/// the scan crosses slice boundaries; per-slice token means are averaged over
/// the stack and projected into the head. At full scale the state-space
/// backbone is a frozen pretrained one loaded from a user-supplied file; the
/// CNN-branch variant trains end to end at both scales.
class Mamba2dModel : public nn::Model {
public:
    Mamba2dModel(const ModelSpec& spec, Rng& rng)
        : family_(spec.family), dims_(spec.input_dims()) {
        const int64_t r = spec.p("resize"), p = spec.p("patch"), e = spec.p("embed");
        resize_ = r;
        embed_ = e;
        n_slices_ = spec.p("n_slices");
        const int64_t grid = r / p;
        if (grid * p != r) throw Error(to_string(family_) + ": patch must divide resize");
        tokens_per_slice_ = grid * grid;
        if (n_slices_ > dims_[1])
            throw Error(to_string(family_) + ": n_slices exceeds the input stack");
        if (n_slices_ != dims_[1])
            subsample_ = zoo_detail::subsample_indices(dims_[1], n_slices_);
        const bool backbone_trainable =
            spec.scale == Scale::TOY || family_ == Family::MAMBA2D_CNN;
        patch_ = nn::make_conv2d(*this, "backbone.patch", 3, e, p, rng, {p, p}, {0, 0},
                                 backbone_trainable);
        for (int64_t i = 0; i < spec.p("depth"); ++i)
            blocks_.push_back(nn::make_mamba_block(*this, "backbone.block" + std::to_string(i), e,
                                                   spec.p("d_state"), rng, backbone_trainable));
        ln_f_ = nn::make_layernorm(*this, "backbone.ln_f", e, backbone_trainable);
        int64_t fused = e;
        if (family_ == Family::MAMBA2D_CNN) {
            const int64_t k1 = spec.p("cnn1"), k2 = spec.p("cnn2"), k3 = spec.p("cnn3");
            cb1_ = nn::make_conv2d(*this, "cnn.conv1", 3, k1, 3, rng, {2, 2}, {1, 1});
            cn1_ = nn::make_batchnorm(*this, "cnn.bn1", k1, rng);
            cb2_ = nn::make_conv2d(*this, "cnn.conv2", k1, k2, 3, rng, {2, 2}, {1, 1});
            cn2_ = nn::make_batchnorm(*this, "cnn.bn2", k2, rng);
            cb3_ = nn::make_conv2d(*this, "cnn.conv3", k2, k3, 3, rng, {2, 2}, {1, 1});
            cn3_ = nn::make_batchnorm(*this, "cnn.bn3", k3, rng);
            cnn_out_ = k3;
            fused += k3;
        }
        proj_ = nn::make_linear(*this, "proj", fused, spec.p("proj"), rng);
        head_ = nn::make_linear(*this, "head", spec.p("proj"), spec.num_classes, rng);
        structure["n_slices"] = std::to_string(n_slices_);
        structure["tokens_per_slice"] = std::to_string(tokens_per_slice_);
        structure["scan_len"] = std::to_string(n_slices_ * tokens_per_slice_);
        structure["backbone_trainable"] = backbone_trainable ? "1" : "0";
    }

    Var forward(const Var& x) override {
        zoo_detail::check_input(x, dims_, family_);
        const int64_t B = x.shape()[0], S = n_slices_, T = tokens_per_slice_;
        Var imgs = zoo_detail::slices_to_images(
            x, subsample_.empty() ? nullptr : &subsample_, resize_);  // [B*S, 3, R, R]
        Var tok = zoo_detail::tokens_from_2d(patch_(imgs));           // [B*S, T, E]
        Var seq = ops::reshape(tok, {B, S * T, embed_});              // cross-slice scan order
        for (const auto& blk : blocks_) seq = blk(seq);
        seq = ln_f_(seq);
        Var per_slice = ops::mean_axis(ops::reshape(seq, {B, S, T, embed_}), 2);  // [B, S, E]
        if (family_ == Family::MAMBA2D_CNN) {
            Var c = ops::relu(cn1_(cb1_(imgs), training));
            c = ops::relu(cn2_(cb2_(c), training));
            c = ops::relu(cn3_(cb3_(c), training));
            c = ops::adaptive_avg_pool2d(c, {1, 1});
            c = ops::reshape(c, {B, S, cnn_out_});
            per_slice = ops::concat({per_slice, c}, 2);  // [B, S, E + cnn_out]
        }
        Var f = ops::mean_axis(per_slice, 1);
        return head_(ops::relu(proj_(f)));
    }

private:
    Family family_;
    Shape dims_;
    int64_t resize_ = 0, embed_ = 0, n_slices_ = 0, tokens_per_slice_ = 0, cnn_out_ = 0;
    std::vector<int64_t> subsample_;
    nn::Conv2d patch_, cb1_, cb2_, cb3_;
    nn::BatchNorm cn1_, cn2_, cn3_;
    std::vector<nn::MambaBlock> blocks_;
    nn::LayerNorm ln_f_;
    nn::Linear proj_, head_;
};

// ---------------------------------------------------------------------------
// Builder.

namespace zoo_detail {

inline std::unique_ptr<nn::Model> construct(const ModelSpec& spec, uint64_t seed) {
    if (spec.num_classes < 2) throw Error("ModelSpec: num_classes must be at least 2");
    Rng rng(seed);
    std::unique_ptr<nn::Model> model;
    switch (spec.family) {
        case Family::CNN3D: model = std::make_unique<Cnn3dModel>(spec, rng); break;
        case Family::LSTM: model = std::make_unique<LstmModel>(spec, rng); break;
        case Family::VIT3D: model = std::make_unique<Vit3dModel>(spec, rng); break;
        case Family::RESNET3D: model = std::make_unique<Resnet3dModel>(spec, rng); break;
        case Family::CNN_LSTM: model = std::make_unique<CnnLstmModel>(spec, rng); break;
        case Family::CNN_SE: model = std::make_unique<CnnSeModel>(spec, rng); break;
        case Family::VIT2D_LSTM: model = std::make_unique<Vit2dLstmModel>(spec, rng); break;
        case Family::SWIN3D: model = std::make_unique<Swin3dModel>(spec, rng); break;
        case Family::SWIN_CNN: model = std::make_unique<SwinCnnModel>(spec, rng); break;
        case Family::MAMBA2D: model = std::make_unique<Mamba2dModel>(spec, rng); break;
        case Family::MAMBA2D_CNN: model = std::make_unique<Mamba2dModel>(spec, rng); break;
    }
    model->structure["family"] = to_string(spec.family);
    model->structure["scale"] = to_string(spec.scale);
    return model;
}

}  // namespace zoo_detail

inline std::unique_ptr<nn::Model> build(const ModelSpec& spec, uint64_t seed,
                                        const fs::path& weights_path = {}) {
    const bool pretrained = spec.scale == Scale::PAPER && needs_pretrained(spec.family);
    if (pretrained && weights_path.empty())
        throw PretrainedWeightsUnavailable(
            to_string(spec.family) +
            " at PAPER scale uses a pretrained backbone: supply a weight file "
            "(TOY scale builds without one)");
    auto model = zoo_detail::construct(spec, seed);
    if (pretrained) {
        const auto loaded = nn::load_weights_partial(*model, weights_path);
        for (const auto& p : model->params())
            if (!p.var.requires_grad() && !loaded.count(p.name))
                throw Error("pretrained weight file is missing backbone tensor " + p.name);
    } else if (!weights_path.empty()) {
        nn::load_weights_partial(*model, weights_path);
    }
    return model;
}

/// Explicit opt-in used for complexity profiling and for bootstrapping weight
/// files: builds the model with seeded random initialization even where
/// `build` would demand a pretrained backbone file. Never used implicitly.
inline std::unique_ptr<nn::Model> build_random_init(const ModelSpec& spec, uint64_t seed) {
    return zoo_detail::construct(spec, seed);
}

/// Human-readable catalog entry (CLI `zoo describe`).
inline std::string describe_spec(const ModelSpec& spec) {
    std::string out;
    out += "family:       " + to_string(spec.family) + "\n";
    out += "variant:      " + spec.display_name() + "\n";
    out += "scale:        " + to_string(spec.scale) + "\n";
    out += "num_classes:  " + std::to_string(spec.num_classes) + "\n";
    const Shape d = spec.input_dims();
    out += "input:        [B," + std::to_string(d[0]) + "," + std::to_string(d[1]) + "," +
           std::to_string(d[2]) + "," + std::to_string(d[3]) + "]\n";
    out += "batch_grid:  ";
    for (int64_t b : batch_grid(spec)) out += " " + std::to_string(b);
    out += "\n";
    out += "pretrained:   ";
    out += needs_pretrained(spec.family)
               ? "required at PAPER scale (user-supplied weight file)"
               : "none";
    out += "\n";
    out += "params:\n";
    for (const auto& [k, v] : spec.params) out += "  " + k + " = " + std::to_string(v) + "\n";
    return out;
}

}  // namespace gbmbench
