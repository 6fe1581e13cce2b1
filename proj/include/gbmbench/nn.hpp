// Copyright (c) 2026 gbmbench contributors
// SPDX-License-Identifier: Apache-2.0
//
// Model/layer layer on top of the autograd tape: a parameter registry, the
// standard layers the architecture catalog needs, deterministic seeded
// initialization, and a gzip weight-file format.
#pragma once

#include <array>
#include <cmath>
#include <cstring>
#include <map>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "gbmbench/autograd.hpp"
#include "gbmbench/common.hpp"
#include "gbmbench/gzipio.hpp"
#include "gbmbench/ops.hpp"
#include "gbmbench/ops_nn.hpp"
#include "gbmbench/rng.hpp"

namespace gbmbench::nn {

struct NamedParam {
    std::string name;
    Var var;
};

/// Base class for built models. Parameters register at construction in a
/// stable order; `training` toggles batch-norm behavior; `probes` captures
/// named intermediate activations when `capture_probes` is set (tests only);
/// `structure` records realized architecture facts (stage widths/resolutions).
class Model {
public:
    virtual ~Model() = default;

    /// x: [B, ...input contract dims]. Returns [B, num_classes] logits.
    virtual Var forward(const Var& x) = 0;

    bool training = true;
    void train() { training = true; }
    void eval() { training = false; }

    bool capture_probes = false;
    std::map<std::string, Tensor> probes;
    std::map<std::string, std::string> structure;

    std::vector<NamedParam>& params() { return params_; }
    const std::vector<NamedParam>& params() const { return params_; }

    /// Trainable parameter scalar count.
    int64_t param_count() const {
        int64_t n = 0;
        for (const auto& p : params_)
            if (p.var.requires_grad()) n += p.var.val().numel();
        return n;
    }

    void zero_grad() {
        for (auto& p : params_) p.var.zero_grad();
    }

    Var add_param(const std::string& name, Tensor init, bool trainable = true) {
        for (const auto& p : params_)
            if (p.name == name) throw Error("Model: duplicate parameter name " + name);
        Var v(std::move(init), trainable);
        params_.push_back({name, v});
        return v;
    }

    void probe(const std::string& name, const Var& v) {
        if (capture_probes && !v.is_dry()) probes[name] = v.val();
    }

private:
    std::vector<NamedParam> params_;
};

// ---------------------------------------------------------------------------
// Initializers (all driven by the caller's Rng for determinism).

inline Tensor full_tensor(const Shape& s, float v) {
    Tensor t(s);
    t.fill(v);
    return t;
}

inline Tensor kaiming_tensor(const Shape& s, int64_t fan_in, Rng& rng) {
    Tensor t(s);
    const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (int64_t i = 0; i < t.numel(); ++i)
        t.data()[i] = static_cast<float>(rng.normal(0.0, sd));
    return t;
}

inline Tensor xavier_tensor(const Shape& s, int64_t fan_in, int64_t fan_out, Rng& rng) {
    Tensor t(s);
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (int64_t i = 0; i < t.numel(); ++i)
        t.data()[i] = static_cast<float>(rng.uniform(-limit, limit));
    return t;
}

inline Tensor uniform_tensor(const Shape& s, double limit, Rng& rng) {
    Tensor t(s);
    for (int64_t i = 0; i < t.numel(); ++i)
        t.data()[i] = static_cast<float>(rng.uniform(-limit, limit));
    return t;
}

// ---------------------------------------------------------------------------
// Layers. Each factory registers its parameters on the owning model under a
// dotted prefix; the structs are lightweight handles sharing those Vars.

struct Linear {
    Var w, b;
    Var operator()(const Var& x) const { return ops::linear(x, w, b); }
};

inline Linear make_linear(Model& m, const std::string& name, int64_t din, int64_t dout, Rng& rng,
                          bool trainable = true) {
    Linear l;
    l.w = m.add_param(name + ".w", xavier_tensor({dout, din}, din, dout, rng), trainable);
    l.b = m.add_param(name + ".b", full_tensor({dout}, 0.0f), trainable);
    return l;
}

struct Conv3d {
    Var w, b;
    std::array<int64_t, 3> stride{1, 1, 1}, pad{0, 0, 0};
    Var operator()(const Var& x) const { return ops::conv3d(x, w, b, stride, pad); }
};

inline Conv3d make_conv3d(Model& m, const std::string& name, int64_t cin, int64_t cout, int64_t k,
                          Rng& rng, std::array<int64_t, 3> stride = {1, 1, 1},
                          std::array<int64_t, 3> pad = {0, 0, 0}, bool trainable = true) {
    Conv3d c;
    c.w = m.add_param(name + ".w", kaiming_tensor({cout, cin, k, k, k}, cin * k * k * k, rng),
                      trainable);
    c.b = m.add_param(name + ".b", full_tensor({cout}, 0.0f), trainable);
    c.stride = stride;
    c.pad = pad;
    return c;
}

struct Conv2d {
    Var w, b;
    std::array<int64_t, 2> stride{1, 1}, pad{0, 0};
    Var operator()(const Var& x) const { return ops::conv2d(x, w, b, stride, pad); }
};

inline Conv2d make_conv2d(Model& m, const std::string& name, int64_t cin, int64_t cout, int64_t k,
                          Rng& rng, std::array<int64_t, 2> stride = {1, 1},
                          std::array<int64_t, 2> pad = {0, 0}, bool trainable = true) {
    Conv2d c;
    c.w = m.add_param(name + ".w", kaiming_tensor({cout, cin, k, k}, cin * k * k, rng), trainable);
    c.b = m.add_param(name + ".b", full_tensor({cout}, 0.0f), trainable);
    c.stride = stride;
    c.pad = pad;
    return c;
}

/// BatchNorm over channel axis 1. Running stats live on the layer (not
/// trainable parameters, not saved by the weight file).
struct BatchNorm {
    Var gamma, beta;
    std::shared_ptr<Tensor> running_mean, running_var;
    Var operator()(const Var& x, bool training) const {
        return ops::batchnorm(x, gamma, beta, *running_mean, *running_var, training);
    }
};

inline BatchNorm make_batchnorm(Model& m, const std::string& name, int64_t c, Rng&,
                                bool trainable = true) {
    BatchNorm bn;
    bn.gamma = m.add_param(name + ".gamma", full_tensor({c}, 1.0f), trainable);
    bn.beta = m.add_param(name + ".beta", full_tensor({c}, 0.0f), trainable);
    bn.running_mean = std::make_shared<Tensor>(full_tensor({c}, 0.0f));
    bn.running_var = std::make_shared<Tensor>(full_tensor({c}, 1.0f));
    return bn;
}

struct LayerNorm {
    Var gamma, beta;
    Var operator()(const Var& x) const { return ops::layernorm_lastdim(x, gamma, beta); }
};

inline LayerNorm make_layernorm(Model& m, const std::string& name, int64_t c, bool trainable = true) {
    LayerNorm ln;
    ln.gamma = m.add_param(name + ".gamma", full_tensor({c}, 1.0f), trainable);
    ln.beta = m.add_param(name + ".beta", full_tensor({c}, 0.0f), trainable);
    return ln;
}

/// Single-layer unidirectional LSTM; returns the final hidden state.
/// Gate layout along the 4H axis: input, forget, cell, output.
struct Lstm {
    Var w_ih, w_hh, b_ih, b_hh;
    int64_t hidden = 0;

    /// x: [B, T, D] -> h_T: [B, H]
    Var operator()(const Var& x) const {
        const int64_t B = x.shape()[0], T = x.shape()[1], H = hidden;
        Var h(full_tensor({B, H}, 0.0f));
        Var c(full_tensor({B, H}, 0.0f));
        if (x.is_dry()) {
            // Record per-step costs once for profiling, then return a dry result.
            Var xt(Tensor::dry({B, x.shape()[2]}));
            for (int64_t t = 0; t < T; ++t) {
                ops::linear(xt, w_ih, b_ih);
                ops::linear(Var(Tensor::dry({B, H})), w_hh, b_hh);
            }
            return Var(Tensor::dry({B, H}));
        }
        for (int64_t t = 0; t < T; ++t) {
            Var xt = ops::reshape(ops::slice(x, 1, t, 1), {B, x.shape()[2]});
            Var z = ops::add(ops::linear(xt, w_ih, b_ih), ops::linear(h, w_hh, b_hh));
            Var i = ops::sigmoid(ops::slice(z, 1, 0, H));
            Var f = ops::sigmoid(ops::slice(z, 1, H, H));
            Var g = ops::tanh_(ops::slice(z, 1, 2 * H, H));
            Var o = ops::sigmoid(ops::slice(z, 1, 3 * H, H));
            c = ops::add(ops::mul(f, c), ops::mul(i, g));
            h = ops::mul(o, ops::tanh_(c));
        }
        return h;
    }
};

inline Lstm make_lstm(Model& m, const std::string& name, int64_t din, int64_t hidden, Rng& rng,
                      bool trainable = true) {
    Lstm l;
    l.hidden = hidden;
    const double limit = 1.0 / std::sqrt(static_cast<double>(hidden));
    l.w_ih = m.add_param(name + ".w_ih", uniform_tensor({4 * hidden, din}, limit, rng), trainable);
    l.w_hh = m.add_param(name + ".w_hh", uniform_tensor({4 * hidden, hidden}, limit, rng),
                         trainable);
    l.b_ih = m.add_param(name + ".b_ih", uniform_tensor({4 * hidden}, limit, rng), trainable);
    l.b_hh = m.add_param(name + ".b_hh", uniform_tensor({4 * hidden}, limit, rng), trainable);
    return l;
}

/// Multi-head self-attention over [B, L, C]. Optional per-window additive
/// mask (shifted-window attention); heads must divide C.
struct SelfAttention {
    Linear qkv, proj;
    int64_t heads = 0, dim = 0;

    Var operator()(const Var& x, const Tensor* window_mask = nullptr) const {
        const int64_t B = x.shape()[0], L = x.shape()[1], C = dim, h = heads, hd = C / h;
        Var q3 = qkv(x);  // [B, L, 3C]
        auto head_split = [&](const Var& part) {
            // [B, L, C] -> [B*h, L, hd]
            Var r = ops::reshape(part, {B, L, h, hd});
            r = ops::permute(r, {0, 2, 1, 3});
            return ops::reshape(r, {B * h, L, hd});
        };
        Var q = head_split(ops::slice(q3, 2, 0, C));
        Var k = head_split(ops::slice(q3, 2, C, C));
        Var v = head_split(ops::slice(q3, 2, 2 * C, C));
        Var scores = ops::bmm(q, ops::permute(k, {0, 2, 1}));
        scores = ops::scale(scores, static_cast<float>(1.0 / std::sqrt(static_cast<double>(hd))));
        if (window_mask != nullptr) scores = ops::add_window_mask(scores, *window_mask, h);
        Var attn = ops::softmax_lastdim(scores);
        Var out = ops::bmm(attn, v);  // [B*h, L, hd]
        out = ops::reshape(out, {B, h, L, hd});
        out = ops::permute(out, {0, 2, 1, 3});
        out = ops::reshape(out, {B, L, C});
        return proj(out);
    }
};

inline SelfAttention make_attention(Model& m, const std::string& name, int64_t dim, int64_t heads,
                                    Rng& rng, bool trainable = true) {
    if (dim % heads != 0) throw Error("attention: heads must divide dim");
    SelfAttention a;
    a.heads = heads;
    a.dim = dim;
    a.qkv = make_linear(m, name + ".qkv", dim, 3 * dim, rng, trainable);
    a.proj = make_linear(m, name + ".proj", dim, dim, rng, trainable);
    return a;
}

/// Pre-norm transformer encoder block: x + attn(LN(x)), then x + MLP(LN(x)).
struct TransformerBlock {
    LayerNorm ln1, ln2;
    SelfAttention attn;
    Linear fc1, fc2;

    Var operator()(const Var& x, const Tensor* window_mask = nullptr) const {
        Var y = ops::add(x, attn(ln1(x), window_mask));
        Var z = fc2(ops::gelu(fc1(ln2(y))));
        return ops::add(y, z);
    }
};

inline TransformerBlock make_transformer_block(Model& m, const std::string& name, int64_t dim,
                                               int64_t heads, int64_t mlp_ratio, Rng& rng,
                                               bool trainable = true) {
    TransformerBlock b;
    b.ln1 = make_layernorm(m, name + ".ln1", dim, trainable);
    b.attn = make_attention(m, name + ".attn", dim, heads, rng, trainable);
    b.ln2 = make_layernorm(m, name + ".ln2", dim, trainable);
    b.fc1 = make_linear(m, name + ".fc1", dim, mlp_ratio * dim, rng, trainable);
    b.fc2 = make_linear(m, name + ".fc2", mlp_ratio * dim, dim, rng, trainable);
    return b;
}

/// Selective-state-space block (pre-norm residual): in-projection with gate,
/// causal depthwise conv along the scan axis, input-dependent (dt, B, C), the
/// fused scan, gated output projection.
struct MambaBlock {
    LayerNorm ln;
    Linear in_proj;   // D -> 2*Di
    Var conv_w, conv_b;  // [Di, k], [Di]
    Linear x_proj;    // Di -> dt_rank + 2N
    Linear dt_proj;   // dt_rank -> Di
    Var a_log;        // [Di, N]
    Var d_skip;       // [Di]
    Linear out_proj;  // Di -> D
    int64_t dim = 0, d_inner = 0, d_state = 0, dt_rank = 0;

    Var operator()(const Var& x) const {
        const int64_t B = x.shape()[0], L = x.shape()[1];
        Var xn = ln(x);
        Var uz = in_proj(xn);  // [B, L, 2*Di]
        Var u = ops::slice(uz, 2, 0, d_inner);
        Var z = ops::slice(uz, 2, d_inner, d_inner);
        u = ops::silu(ops::dwconv1d_causal(u, conv_w, conv_b));
        Var dbc = x_proj(u);  // [B, L, dt_rank + 2N]
        Var dt = ops::softplus(dt_proj(ops::slice(dbc, 2, 0, dt_rank)));  // [B, L, Di]
        Var Bm = ops::slice(dbc, 2, dt_rank, d_state);
        Var Cm = ops::slice(dbc, 2, dt_rank + d_state, d_state);
        Var A = ops::neg(ops::exp_(a_log));
        Var y = ops::selective_scan(u, dt, A, Bm, Cm, d_skip);
        y = ops::mul(y, ops::silu(z));
        (void)B;
        (void)L;
        return ops::add(x, out_proj(y));
    }
};

inline MambaBlock make_mamba_block(Model& m, const std::string& name, int64_t dim, int64_t d_state,
                                   Rng& rng, bool trainable = true) {
    MambaBlock b;
    b.dim = dim;
    b.d_inner = 2 * dim;
    b.d_state = d_state;
    b.dt_rank = std::max<int64_t>(1, dim / 16);
    b.ln = make_layernorm(m, name + ".ln", dim, trainable);
    b.in_proj = make_linear(m, name + ".in_proj", dim, 2 * b.d_inner, rng, trainable);
    b.conv_w = m.add_param(name + ".conv.w", uniform_tensor({b.d_inner, 4}, 0.5, rng), trainable);
    b.conv_b = m.add_param(name + ".conv.b", full_tensor({b.d_inner}, 0.0f), trainable);
    b.x_proj = make_linear(m, name + ".x_proj", b.d_inner, b.dt_rank + 2 * d_state, rng, trainable);
    b.dt_proj = make_linear(m, name + ".dt_proj", b.dt_rank, b.d_inner, rng, trainable);
    // A initialized to -(1..N) per channel via a_log = log(1..N).
    Tensor alog({b.d_inner, d_state});
    for (int64_t d = 0; d < b.d_inner; ++d)
        for (int64_t n = 0; n < d_state; ++n)
            alog.data()[d * d_state + n] = std::log(static_cast<float>(n + 1));
    b.a_log = m.add_param(name + ".a_log", std::move(alog), trainable);
    b.d_skip = m.add_param(name + ".d_skip", full_tensor({b.d_inner}, 1.0f), trainable);
    b.out_proj = make_linear(m, name + ".out_proj", b.d_inner, dim, rng, trainable);
    return b;
}

/// Squeeze-and-excitation gate over [B, C, D, H, W].
struct SEBlock {
    Linear fc1, fc2;
    int64_t channels = 0;

    Var operator()(const Var& x) const {
        const int64_t B = x.shape()[0], C = channels;
        Var s = ops::adaptive_avg_pool3d(x, {1, 1, 1});
        s = ops::reshape(s, {B, C});
        s = ops::sigmoid(fc2(ops::relu(fc1(s))));
        s = ops::reshape(s, {B, C, 1, 1, 1});
        return ops::mul(x, s);  // broadcast channel gate
    }
};

inline SEBlock make_se_block(Model& m, const std::string& name, int64_t c, Rng& rng,
                             bool trainable = true) {
    SEBlock se;
    se.channels = c;
    const int64_t hidden = std::max<int64_t>(2, c / 4);
    se.fc1 = make_linear(m, name + ".fc1", c, hidden, rng, trainable);
    se.fc2 = make_linear(m, name + ".fc2", hidden, c, rng, trainable);
    return se;
}

// ---------------------------------------------------------------------------
// Weight files: gzip of a text manifest (name + shape per line, ended by a
// blank line) followed by raw little-endian float32 payloads in order.

inline void save_weights(const Model& m, const fs::path& path) {
    std::string header;
    std::string payload;
    for (const auto& p : m.params()) {
        header += p.name;
        for (int64_t d : p.var.shape()) header += " " + std::to_string(d);
        header += "\n";
        const size_t bytes = static_cast<size_t>(p.var.val().numel()) * sizeof(float);
        const size_t at = payload.size();
        payload.resize(at + bytes);
        std::memcpy(payload.data() + at, p.var.val().data(), bytes);
    }
    header += "\n";
    atomic_write(path, gzip_compress(header + payload));
}

/// Loads every tensor in the file into same-named parameters (shape-checked).
/// Returns the set of parameter names that were filled; parameters absent
/// from the file keep their initialization.
inline std::set<std::string> load_weights_partial(Model& m, const fs::path& path) {
    if (!fs::exists(path)) throw IOFailure("weight file not found: " + path.string());
    const std::string blob = gzip_decompress(read_text_file(path));
    const size_t split = blob.find("\n\n");
    if (split == std::string::npos) throw Error("weight file: missing header terminator");
    std::istringstream header(blob.substr(0, split + 1));
    size_t offset = split + 2;
    std::map<std::string, std::pair<Shape, size_t>> entries;  // name -> shape, payload offset
    std::string line;
    while (std::getline(header, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string name;
        ls >> name;
        Shape shape;
        int64_t d;
        while (ls >> d) shape.push_back(d);
        entries[name] = {shape, offset};
        offset += static_cast<size_t>(shape_numel(shape)) * sizeof(float);
    }
    if (offset != blob.size()) throw Error("weight file: payload size mismatch");
    std::set<std::string> loaded;
    for (auto& p : m.params()) {
        auto it = entries.find(p.name);
        if (it == entries.end()) continue;
        if (it->second.first != p.var.shape())
            throw Error("weight file: shape mismatch for " + p.name);
        std::memcpy(p.var.val().data(), blob.data() + it->second.second,
                    static_cast<size_t>(p.var.val().numel()) * sizeof(float));
        loaded.insert(p.name);
    }
    return loaded;
}

/// Strict load: every model parameter must be present in the file.
inline void load_weights(Model& m, const fs::path& path) {
    const auto loaded = load_weights_partial(m, path);
    for (const auto& p : m.params())
        if (!loaded.count(p.name)) throw Error("weight file: missing tensor " + p.name);
}

}  // namespace gbmbench::nn
