#pragma once

#include <algorithm>

#include "kronmri/blocks.hpp"
#include "kronmri/grad_check.hpp"
#include "kronmri/metrics.hpp"

namespace kronmri {

/// Named float64 gradient-check scenarios covering every differentiable block.
inline const std::vector<std::string>& grad_check_targets() {
    static const std::vector<std::string> names{"kron-linear", "kron-conv", "phm-mlp", "attention", "loss", "unet"};
    return names;
}

/// Default tolerance per target; the end-to-end U-Net stacks enough float64
/// rounding through ReLU kinks that it gets a looser bound.
inline double grad_check_default_tol(const std::string& target) { return target == "unet" ? 1e-3 : 1e-4; }

namespace detail {

inline Var<double> weighted_sum(Var<double> y, const Tensor<double>& w) { return sum(mul(y, y.tape().constant(w))); }

template <class Model>
std::vector<Tensor<double>*> model_params(Model& m, Tensor<double>* input) {
    std::vector<NamedParam<double>> named;
    collect_params(m, "m", named);
    std::vector<Tensor<double>*> ptrs;
    if (input) ptrs.push_back(input);
    for (auto& p : named) ptrs.push_back(p.tensor);
    return ptrs;
}

}  // namespace detail

inline GradCheckReport run_grad_check(const std::string& target, Rng& rng, double h, double tol) {
    using D = Tensor<double>;
    using detail::weighted_sum;
    if (target == "kron-linear") {
        auto p = init_kron_linear<double>(4, 6, 2, rng);
        p.bias = D::uniform({6}, rng, -1, 1);
        D x = D::uniform({3, 4}, rng, -1, 1), w = D::uniform({3, 6}, rng, -1, 1);
        return grad_check([&](Tape<double>& t) { return weighted_sum(kl_forward(p, t.param(x)), w); },
                          detail::model_params(p, &x), h, tol);
    }
    if (target == "kron-conv") {
        auto p = init_kron_conv<double>(4, 4, 3, 2, rng, 1, 1);
        p.bias = D::uniform({4}, rng, -1, 1);
        D x = D::uniform({1, 4, 5, 5}, rng, -1, 1), w = D::uniform({1, 4, 5, 5}, rng, -1, 1);
        return grad_check([&](Tape<double>& t) { return weighted_sum(kc_forward(p, t.param(x)), w); },
                          detail::model_params(p, &x), h, tol);
    }
    if (target == "phm-mlp") {
        auto m = build_phm_mlp<double>(4, 8, 4, LayerKind::kronecker, 2, rng);
        D x = D::uniform({3, 4}, rng, -1, 1), w = D::uniform({3, 4}, rng, -1, 1);
        return grad_check([&](Tape<double>& t) { return weighted_sum(phm_mlp_forward(m, t.param(x)), w); },
                          detail::model_params(m, &x), h, tol);
    }
    if (target == "attention") {
        auto blk = build_transformer_block<double>(AttentionConfig{4, 2, 2, 2, LayerKind::kronecker}, 2, rng);
        D x = D::uniform({1, 4, 4}, rng, -1, 1), w = D::uniform({1, 4, 4}, rng, -1, 1);
        auto ptrs = detail::model_params(blk.attn, &x);
        for (auto* p : detail::model_params(blk.mlp, nullptr)) ptrs.push_back(p);
        return grad_check([&](Tape<double>& t) { return weighted_sum(transformer_forward(blk, t.param(x)), w); }, ptrs,
                          h, tol);
    }
    if (target == "loss") {
        D xhat = D::uniform({1, 2, 8, 8}, rng, -1, 1), x = D::uniform({1, 2, 8, 8}, rng, -1, 1);
        return grad_check([&](Tape<double>& t) { return loss_total(t.param(xhat), t.constant(x), LossWeights{}); },
                          {&xhat}, h, tol);
    }
    if (target == "unet") {
        UNetConfig c;
        c.channel_multiples = {1, 2};
        c.base_channels = 4;
        auto net = build_unet<double>(c, rng);
        std::vector<Tensor<double>*> ptrs;
        for (auto& p : net.parameters()) {
            // Live ReLUs keep every gradient above finite-difference resolution.
            if (p.name.ends_with("/bias")) *p.tensor = D::uniform(p.tensor->shape(), rng, 0.1, 0.5);
            ptrs.push_back(p.tensor);
        }
        D x = D::uniform({1, 2, 8, 8}, rng, -1, 1), w = D::uniform({1, 2, 8, 8}, rng, -1, 1);
        return grad_check([&](Tape<double>& t) { return weighted_sum(unet_forward(net, t.constant(x)), w); }, ptrs, h,
                          tol);
    }
    throw ConfigError("unknown grad-check target '" + target + "'");
}

/// Seed stream for a target, so single-target and full runs agree.
inline std::uint64_t grad_check_seed(std::uint64_t seed, const std::string& target) {
    const auto& names = grad_check_targets();
    return derive_seed(seed, static_cast<std::uint64_t>(std::find(names.begin(), names.end(), target) - names.begin()));
}

}  // namespace kronmri
