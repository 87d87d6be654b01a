#pragma once

#include <cmath>

#include "kronmri/kron_layers.hpp"

namespace kronmri {

// ---- U-Net -----------------------------------------------------------------

struct UNetConfig {
    std::vector<std::size_t> channel_multiples{1, 2, 4, 8};
    std::size_t base_channels = 64;
    LayerKind layer_kind = LayerKind::kronecker;
    std::size_t n = 2;
    std::size_t in_channels = 2;
    std::size_t out_channels = 2;
    bool residual = true;  // output = input + network(input)

    std::size_t depth() const { return channel_multiples.size(); }
    std::size_t channels(std::size_t level) const { return base_channels * channel_multiples.at(level); }
    std::size_t effective_n() const { return layer_kind == LayerKind::dense ? 1 : n; }

    void validate() const {
        if (channel_multiples.empty()) throw ConfigError("UNetConfig.channel_multiples must be non-empty");
        if (base_channels == 0) throw ConfigError("UNetConfig.base_channels must be positive");
        for (std::size_t m : channel_multiples)
            if (m == 0) throw ConfigError("UNetConfig.channel_multiples entries must be positive");
        if (in_channels == 0 || out_channels == 0) throw ConfigError("UNetConfig channel counts must be positive");
        if (residual && in_channels != out_channels)
            throw ConfigError("UNetConfig.residual requires in_channels == out_channels");
        if (layer_kind == LayerKind::kronecker) {
            if (n == 0) throw ConfigError("UNetConfig.n must be positive");
            auto check = [&](std::size_t c, const char* what) {
                if (c % n != 0)
                    throw ConfigError(std::string("UNetConfig: ") + what + " = " + std::to_string(c) +
                                      " is not divisible by n=" + std::to_string(n));
            };
            check(in_channels, "in_channels");
            check(out_channels, "out_channels");
            for (std::size_t l = 0; l < depth(); ++l) check(channels(l), "level channels");
        }
    }
};

/// One convolution of the U-Net with its position in the graph.
struct ConvSpec {
    std::string name;
    std::size_t in, out, kernel, stride, padding;
};

/// Layer list in construction (and RNG draw) order:
///   enc0.conv1/conv2            3x3, in -> c0 -> c0
///   enc{l}.down                 3x3 stride 2, c{l-1} -> c{l-1}
///   enc{l}.conv1/conv2          3x3, c{l-1} -> c{l} -> c{l}
///   dec{l}.up                   nearest x2, then 3x3 c{l+1} -> c{l}
///   dec{l}.conv1/conv2          3x3 on concat(skip, up): 2 c{l} -> c{l} -> c{l}
///   head                        1x1, c0 -> out
inline std::vector<ConvSpec> unet_layout(const UNetConfig& cfg) {
    std::vector<ConvSpec> specs;
    const std::size_t d = cfg.depth();
    specs.push_back({"enc0.conv1", cfg.in_channels, cfg.channels(0), 3, 1, 1});
    specs.push_back({"enc0.conv2", cfg.channels(0), cfg.channels(0), 3, 1, 1});
    for (std::size_t l = 1; l < d; ++l) {
        const std::string p = "enc" + std::to_string(l);
        specs.push_back({p + ".down", cfg.channels(l - 1), cfg.channels(l - 1), 3, 2, 1});
        specs.push_back({p + ".conv1", cfg.channels(l - 1), cfg.channels(l), 3, 1, 1});
        specs.push_back({p + ".conv2", cfg.channels(l), cfg.channels(l), 3, 1, 1});
    }
    for (std::size_t l = d - 1; l-- > 0;) {
        const std::string p = "dec" + std::to_string(l);
        specs.push_back({p + ".up", cfg.channels(l + 1), cfg.channels(l), 3, 1, 1});
        specs.push_back({p + ".conv1", 2 * cfg.channels(l), cfg.channels(l), 3, 1, 1});
        specs.push_back({p + ".conv2", cfg.channels(l), cfg.channels(l), 3, 1, 1});
    }
    specs.push_back({"head", cfg.channels(0), cfg.out_channels, 1, 1, 0});
    return specs;
}

template <Scalar T>
struct UNet {
    UNetConfig config;
    std::vector<std::string> names;
    std::vector<Conv<T>> convs;  // aligned with unet_layout(config)

    const Conv<T>& layer(const std::string& name) const {
        for (std::size_t i = 0; i < names.size(); ++i)
            if (names[i] == name) return convs[i];
        throw ConfigError("UNet has no layer '" + name + "'");
    }

    std::vector<NamedParam<T>> parameters() {
        std::vector<NamedParam<T>> out;
        for (std::size_t i = 0; i < convs.size(); ++i) collect_params(convs[i], names[i], out);
        return out;
    }
};

template <Scalar T>
UNet<T> build_unet(const UNetConfig& cfg, Rng& rng) {
    cfg.validate();
    UNet<T> net;
    net.config = cfg;
    for (const ConvSpec& s : unet_layout(cfg)) {
        net.names.push_back(s.name);
        net.convs.push_back(make_conv<T>(cfg.layer_kind, s.in, s.out, s.kernel, cfg.n, rng, s.stride, s.padding));
    }
    return net;
}

template <Scalar T>
std::size_t param_count(const UNet<T>& net) {
    std::size_t total = 0;
    for (const auto& c : net.convs) total += param_count(c);
    return total;
}

/// Parameter total from the configuration alone (no weights allocated).
inline std::size_t unet_param_count(const UNetConfig& cfg) {
    cfg.validate();
    std::size_t total = 0;
    for (const ConvSpec& s : unet_layout(cfg))
        total += cfg.layer_kind == LayerKind::dense ? dense_conv_count(s.in, s.out, s.kernel)
                                                    : kron_conv_count(s.in, s.out, s.kernel, cfg.n);
    return total;
}

/// x [batch x in_channels x H x W] with H, W divisible by 2^(depth-1).
template <Scalar T>
Var<T> unet_forward(const UNet<T>& net, Var<T> x) {
    const UNetConfig& cfg = net.config;
    const Shape& s = x.shape();
    if (s.size() != 4 || s[1] != cfg.in_channels)
        throw ShapeError("UNet expects [b x " + std::to_string(cfg.in_channels) + " x H x W], got " + shape_str(s));
    const std::size_t factor = std::size_t{1} << (cfg.depth() - 1);
    if (s[2] % factor != 0 || s[3] % factor != 0)
        throw ShapeError("UNet: spatial size " + shape_str(s) + " must be divisible by " + std::to_string(factor));

    std::size_t li = 0;
    auto next = [&](Var<T> v) { return forward(net.convs[li++], v); };

    std::vector<Var<T>> skips;
    Var<T> h = relu(next(x));
    h = relu(next(h));
    for (std::size_t l = 1; l < cfg.depth(); ++l) {
        skips.push_back(h);
        h = relu(next(h));  // stride-2 downsampling
        h = relu(next(h));
        h = relu(next(h));
    }
    for (std::size_t l = cfg.depth() - 1; l-- > 0;) {
        h = relu(next(upsample2x(h)));
        h = concat<T>({skips[l], h}, 1);
        h = relu(next(h));
        h = relu(next(h));
    }
    Var<T> y = next(h);
    return cfg.residual ? add(x, y) : y;
}

// ---- PHM MLP ---------------------------------------------------------------

template <Scalar T>
struct PhmMlp {
    Linear<T> fc1, fc2;
};

template <Scalar T>
PhmMlp<T> build_phm_mlp(std::size_t in, std::size_t hidden, std::size_t out, LayerKind kind, std::size_t n,
                        Rng& rng) {
    PhmMlp<T> m{make_linear<T>(kind, in, hidden, n, rng), make_linear<T>(kind, hidden, out, n, rng)};
    return m;
}

/// PHM(ReLU(PHM(x))) over the last axis of x (any leading shape).
template <Scalar T>
Var<T> phm_mlp_forward(const PhmMlp<T>& m, Var<T> x) {
    const Shape in_shape = x.shape();
    if (in_shape.empty()) throw ShapeError("phm_mlp: scalar input");
    const std::size_t width = in_shape.back();
    Var<T> flat = reshape(x, {x.value().numel() / width, width});
    Var<T> y = forward(m.fc2, relu(forward(m.fc1, flat)));
    Shape out_shape = in_shape;
    out_shape.back() = y.shape()[1];
    return reshape(y, out_shape);
}

template <Scalar T>
std::size_t param_count(const PhmMlp<T>& m) {
    return param_count(m.fc1) + param_count(m.fc2);
}

template <Scalar T>
void collect_params(PhmMlp<T>& m, const std::string& prefix, std::vector<NamedParam<T>>& out) {
    collect_params(m.fc1, prefix + ".fc1", out);
    collect_params(m.fc2, prefix + ".fc2", out);
}

// ---- window attention ------------------------------------------------------

struct AttentionConfig {
    std::size_t embed_dim = 8;
    std::size_t heads = 2;
    std::size_t n = 2;
    std::size_t window = 2;
    LayerKind layer_kind = LayerKind::kronecker;

    std::size_t head_dim() const { return embed_dim / heads; }
    std::size_t window_tokens() const { return window * window; }

    void validate() const {
        if (embed_dim == 0 || heads == 0 || window == 0) throw ConfigError("AttentionConfig fields must be positive");
        if (embed_dim % heads != 0)
            throw ConfigError("AttentionConfig: embed_dim " + std::to_string(embed_dim) + " not divisible by heads " +
                              std::to_string(heads));
        if (layer_kind == LayerKind::kronecker && (n == 0 || embed_dim % n != 0))
            throw ConfigError("AttentionConfig: embed_dim " + std::to_string(embed_dim) + " not divisible by n " +
                              std::to_string(n));
    }
};

/// Non-shifted window multi-head self-attention with three independent
/// projections for Q, K, V and an output projection.
template <Scalar T>
struct WindowAttention {
    AttentionConfig config;
    Linear<T> q, k, v, o;
};

template <Scalar T>
WindowAttention<T> build_attention(const AttentionConfig& cfg, Rng& rng) {
    cfg.validate();
    const std::size_t e = cfg.embed_dim;
    WindowAttention<T> a{cfg, make_linear<T>(cfg.layer_kind, e, e, cfg.n, rng),
                         make_linear<T>(cfg.layer_kind, e, e, cfg.n, rng),
                         make_linear<T>(cfg.layer_kind, e, e, cfg.n, rng),
                         make_linear<T>(cfg.layer_kind, e, e, cfg.n, rng)};
    return a;
}

/// x [batch x tokens x embed]; tokens are grouped window-major, window^2 per window.
template <Scalar T>
Var<T> mhsa_forward(const WindowAttention<T>& attn, Var<T> x) {
    const AttentionConfig& cfg = attn.config;
    cfg.validate();
    const Shape& s = x.shape();
    const std::size_t wt = cfg.window_tokens();
    if (s.size() != 3 || s[2] != cfg.embed_dim || s[1] % wt != 0)
        throw ShapeError("attention expects [batch x k*" + std::to_string(wt) + " x " +
                         std::to_string(cfg.embed_dim) + "], got " + shape_str(s));
    const std::size_t batch = s[0], tokens = s[1], e = cfg.embed_dim, heads = cfg.heads, d = cfg.head_dim();
    const std::size_t groups = batch * (tokens / wt);

    Var<T> flat = reshape(x, {batch * tokens, e});
    auto split_heads = [&](Var<T> proj) {
        Var<T> r = reshape(proj, {groups, wt, heads, d});
        return reshape(permute(r, {0, 2, 1, 3}), {groups * heads, wt, d});
    };
    Var<T> q = split_heads(forward(attn.q, flat));
    Var<T> k = split_heads(forward(attn.k, flat));
    Var<T> v = split_heads(forward(attn.v, flat));
    Var<T> scores = scale(bmm(q, k, true), static_cast<T>(1.0 / std::sqrt(static_cast<double>(d))));
    Var<T> ctx = bmm(softmax(scores), v);
    Var<T> merged = reshape(permute(reshape(ctx, {groups, heads, wt, d}), {0, 2, 1, 3}), {batch * tokens, e});
    return reshape(forward(attn.o, merged), {batch, tokens, e});
}

template <Scalar T>
std::size_t param_count(const WindowAttention<T>& a) {
    return param_count(a.q) + param_count(a.k) + param_count(a.v) + param_count(a.o);
}

template <Scalar T>
void collect_params(WindowAttention<T>& a, const std::string& prefix, std::vector<NamedParam<T>>& out) {
    collect_params(a.q, prefix + ".q", out);
    collect_params(a.k, prefix + ".k", out);
    collect_params(a.v, prefix + ".v", out);
    collect_params(a.o, prefix + ".o", out);
}

// ---- transformer block -----------------------------------------------------

/// x + attn(x), then + mlp(.). No normalization layers.
template <Scalar T>
struct TransformerBlock {
    WindowAttention<T> attn;
    PhmMlp<T> mlp;
};

template <Scalar T>
TransformerBlock<T> build_transformer_block(const AttentionConfig& cfg, std::size_t mlp_ratio, Rng& rng) {
    WindowAttention<T> attn = build_attention<T>(cfg, rng);
    PhmMlp<T> mlp = build_phm_mlp<T>(cfg.embed_dim, cfg.embed_dim * mlp_ratio, cfg.embed_dim, cfg.layer_kind, cfg.n,
                                     rng);
    return {std::move(attn), std::move(mlp)};
}

template <Scalar T>
Var<T> transformer_forward(const TransformerBlock<T>& b, Var<T> x) {
    Var<T> y = add(x, mhsa_forward(b.attn, x));
    return add(y, phm_mlp_forward(b.mlp, y));
}

template <Scalar T>
std::size_t param_count(const TransformerBlock<T>& b) {
    return param_count(b.attn) + param_count(b.mlp);
}

}  // namespace kronmri
