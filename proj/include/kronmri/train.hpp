#pragma once

#include <algorithm>
#include <fstream>
#include <optional>

#include <json.hpp>

#include "kronmri/blocks.hpp"
#include "kronmri/metrics.hpp"

namespace kronmri {

// ---- Adam ------------------------------------------------------------------

template <Scalar T>
struct AdamState {
    double lr = 2e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::size_t step = 0;
    std::vector<Tensor<T>> m, v;

    void validate() const {
        if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("adam: lr must be finite and >= 0");
        if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0))
            throw ConfigError("adam: betas must lie in (0, 1)");
        if (!(eps > 0.0)) throw ConfigError("adam: eps must be positive");
    }
};

/// One bias-corrected Adam update. Frozen parameters are skipped but keep
/// their (zero) moment slots so the state layout follows `params` exactly.
template <Scalar T>
void adam_step(AdamState<T>& state, std::vector<NamedParam<T>>& params, const std::vector<Tensor<T>>& grads) {
    state.validate();
    if (grads.size() != params.size())
        throw ShapeError("adam_step: " + std::to_string(grads.size()) + " gradients for " +
                         std::to_string(params.size()) + " parameters");
    if (state.m.empty()) {
        for (const auto& p : params) {
            state.m.emplace_back(p.tensor->shape());
            state.v.emplace_back(p.tensor->shape());
        }
    }
    if (state.m.size() != params.size()) throw ShapeError("adam_step: state does not match parameter list");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (grads[i].shape() != params[i].tensor->shape() || state.m[i].shape() != grads[i].shape())
            throw ShapeError("adam_step: shape mismatch for " + params[i].name);
        if (!grads[i].all_finite()) throw NumericError("adam_step: non-finite gradient for " + params[i].name);
    }

    ++state.step;
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(state.beta1, t);
    const double c2 = 1.0 - std::pow(state.beta2, t);
    const T b1 = static_cast<T>(state.beta1), b2 = static_cast<T>(state.beta2);
    const T lr = static_cast<T>(state.lr), eps = static_cast<T>(state.eps);
    const T inv_c1 = static_cast<T>(1.0 / c1), inv_c2 = static_cast<T>(1.0 / c2);
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!params[i].trainable) continue;
        Tensor<T>& p = *params[i].tensor;
        Tensor<T>& m = state.m[i];
        Tensor<T>& v = state.v[i];
        const Tensor<T>& g = grads[i];
        for (std::size_t j = 0; j < p.numel(); ++j) {
            m[j] = b1 * m[j] + (T(1) - b1) * g[j];
            v[j] = b2 * v[j] + (T(1) - b2) * g[j] * g[j];
            const T mhat = m[j] * inv_c1;
            const T vhat = v[j] * inv_c2;
            p[j] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

// ---- synthetic data --------------------------------------------------------

struct DatasetSpec {
    std::size_t size = 64;
    std::size_t height = 64;
    std::size_t width = 64;
    std::size_t ellipses = 8;
    std::uint64_t seed = 0;

    void validate() const {
        if (size == 0) throw ConfigError("dataset size must be >= 1");
        if (ellipses == 0) throw ConfigError("dataset ellipses must be >= 1");
    }
};

/// Phantom i depends only on (seed, i).
template <Scalar T>
Tensor<T> dataset_sample(const DatasetSpec& spec, std::size_t index) {
    Rng rng(derive_seed(spec.seed, index));
    return gen_phantom<T>(spec.height, spec.width, spec.ellipses, rng);
}

template <Scalar T>
std::vector<Tensor<T>> generate_dataset(const DatasetSpec& spec) {
    spec.validate();
    std::vector<Tensor<T>> out;
    out.reserve(spec.size);
    for (std::size_t i = 0; i < spec.size; ++i) out.push_back(dataset_sample<T>(spec, i));
    return out;
}

/// Zero-filled image after masking the k-space of `image` [2 x H x W].
template <Scalar T>
Tensor<T> undersample(const Tensor<T>& image, const CartesianMask& mask) {
    return zero_filled(apply_mask(fft2c(image), mask));
}

/// Stacks equally shaped [2 x H x W] tensors into [B x 2 x H x W].
template <Scalar T>
Tensor<T> stack(const std::vector<const Tensor<T>*>& items) {
    if (items.empty()) throw ShapeError("stack: no items");
    Shape shape = items.front()->shape();
    std::vector<T> data;
    data.reserve(items.size() * items.front()->numel());
    for (const Tensor<T>* t : items) {
        if (t->shape() != shape) throw ShapeError("stack: shape mismatch " + shape_str(t->shape()));
        data.insert(data.end(), t->data().begin(), t->data().end());
    }
    shape.insert(shape.begin(), items.size());
    return Tensor<T>(shape, std::move(data));
}

/// Held-out pairs: ground truth and the matching zero-filled input.
template <Scalar T>
struct EvalSet {
    std::vector<Tensor<T>> truth;
    std::vector<Tensor<T>> input;
};

template <Scalar T>
EvalSet<T> make_eval_set(const DatasetSpec& spec, double af, double center_fraction, std::uint64_t mask_seed) {
    EvalSet<T> set;
    set.truth = generate_dataset<T>(spec);
    for (std::size_t i = 0; i < set.truth.size(); ++i) {
        Rng rng(derive_seed(mask_seed, i));
        const CartesianMask m = gen_cartesian_mask(spec.width, af, center_fraction, rng);
        set.input.push_back(undersample(set.truth[i], m));
    }
    return set;
}

// ---- evaluation ------------------------------------------------------------

struct EvalSummary {
    std::vector<SampleMetrics> samples;
    double psnr_mean = 0, psnr_std = 0, ssim_mean = 0, ssim_std = 0;
};

/// Population mean and standard deviation.
inline std::pair<double, double> mean_std(const std::vector<double>& xs) {
    if (xs.empty()) throw ConfigError("mean_std: empty sample");
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    if (!std::isfinite(mean)) return {mean, 0.0};
    double var = 0.0;
    for (double x : xs) var += (x - mean) * (x - mean);
    return {mean, std::sqrt(var / static_cast<double>(xs.size()))};
}

inline EvalSummary summarize(std::vector<SampleMetrics> samples) {
    EvalSummary s;
    std::vector<double> p, q;
    for (const auto& m : samples) {
        p.push_back(m.psnr_db);
        q.push_back(m.ssim);
    }
    std::tie(s.psnr_mean, s.psnr_std) = mean_std(p);
    std::tie(s.ssim_mean, s.ssim_std) = mean_std(q);
    s.samples = std::move(samples);
    return s;
}

/// Scores `recon(input_i)` against truth_i for every held-out pair.
template <Scalar T, class Reconstruct>
EvalSummary evaluate(const EvalSet<T>& set, Reconstruct&& recon) {
    if (set.truth.empty()) throw ConfigError("evaluate: empty dataset");
    std::vector<SampleMetrics> out;
    for (std::size_t i = 0; i < set.truth.size(); ++i) {
        const Tensor<T> xhat = recon(set.input[i]);
        out.push_back(complex_image_metrics(xhat, set.truth[i]));
    }
    return summarize(std::move(out));
}

/// Runs the model on one [2 x H x W] image.
template <Scalar T>
Tensor<T> unet_apply(const UNet<T>& net, const Tensor<T>& image) {
    Shape batched = image.shape();
    batched.insert(batched.begin(), 1);
    Tape<T> tape;
    Var<T> y = unet_forward(net, tape.constant(image.reshaped(batched)));
    return y.value().reshaped(image.shape());
}

template <Scalar T>
EvalSummary evaluate(const UNet<T>& net, const EvalSet<T>& set) {
    return evaluate(set, [&](const Tensor<T>& x) { return unet_apply(net, x); });
}

template <Scalar T>
EvalSummary evaluate_zero_filled(const EvalSet<T>& set) {
    return evaluate(set, [](const Tensor<T>& x) { return x; });
}

// ---- training --------------------------------------------------------------

struct TrainConfig {
    std::size_t steps = 200;
    std::size_t batch = 4;
    std::uint64_t seed = 0;
    double af = 8;
    double center_fraction = 0;  // 0 selects the default for af
    std::size_t dataset_size = 64;
    std::size_t eval_size = 8;
    std::size_t eval_every = 50;  // 0 disables periodic evaluation
    std::size_t height = 64;
    std::size_t width = 64;
    std::size_t ellipses = 8;
    double lr = 2e-5;
    LossWeights weights{};

    double effective_center_fraction() const {
        return center_fraction > 0 ? center_fraction : default_center_fraction(static_cast<int>(af));
    }

    void validate() const {
        if (steps == 0 || batch == 0 || dataset_size == 0 || eval_size == 0)
            throw ConfigError("steps, batch, dataset_size and eval_size must be >= 1");
        if (af != 8 && af != 16) throw ConfigError("af must be 8 or 16");
        weights.validate();
    }

    // Independent seed streams derived from the run seed.
    std::uint64_t init_seed() const { return derive_seed(seed, 0); }
    DatasetSpec train_spec() const { return {dataset_size, height, width, ellipses, derive_seed(seed, 1)}; }
    DatasetSpec heldout_spec() const { return {eval_size, height, width, ellipses, derive_seed(seed, 2)}; }
    std::uint64_t shuffle_seed() const { return derive_seed(seed, 3); }
    std::uint64_t train_mask_seed() const { return derive_seed(seed, 4); }
    std::uint64_t eval_mask_seed() const { return derive_seed(seed, 5); }
};

struct StepRecord {
    std::size_t step;
    double loss;
    std::optional<double> psnr, ssim;
};

struct History {
    std::vector<StepRecord> records;
};

/// Non-finite values are written as the strings "inf", "-inf" and "nan".
inline nlohmann::json json_number(double v) {
    if (std::isfinite(v)) return v;
    if (std::isnan(v)) return "nan";
    return v > 0 ? "inf" : "-inf";
}

inline nlohmann::json to_json(const StepRecord& r) {
    nlohmann::json j{{"step", r.step}, {"loss", json_number(r.loss)}};
    if (r.psnr) j["psnr"] = json_number(*r.psnr);
    if (r.ssim) j["ssim"] = json_number(*r.ssim);
    return j;
}

inline std::string history_jsonl(const History& h) {
    std::string out;
    for (const auto& r : h.records) out += to_json(r).dump() + "\n";
    return out;
}

inline void write_history(const std::filesystem::path& path, const History& h) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write " + path.string());
    f << history_jsonl(h);
    if (!f) throw IoError("write failed: " + path.string());
}

/// Mean loss over the first and last ceil(10%) of recorded steps.
inline std::pair<double, double> decile_losses(const History& h) {
    const std::size_t n = h.records.size();
    if (n == 0) throw ConfigError("decile_losses: empty history");
    const std::size_t k = std::max<std::size_t>(1, (n + 9) / 10);
    double first = 0, last = 0;
    for (std::size_t i = 0; i < k; ++i) {
        first += h.records[i].loss;
        last += h.records[n - k + i].loss;
    }
    return {first / static_cast<double>(k), last / static_cast<double>(k)};
}

/// Per-step order: next batch from an epoch-wise seeded shuffle, a fresh mask
/// per sample, zero-filled input, loss against ground truth, backward, Adam.
template <Scalar T>
History train(UNet<T>& net, const TrainConfig& cfg, std::type_identity_t<AdamState<T>>* state_out = nullptr,
              const std::function<void(const StepRecord&)>& on_step = {}) {
    cfg.validate();
    const UNetConfig& ucfg = net.config;
    if (ucfg.in_channels != 2 || ucfg.out_channels != 2)
        throw ConfigError("train: model must map 2 channels to 2 channels");
    const std::size_t factor = std::size_t{1} << (ucfg.depth() - 1);
    if (cfg.height % factor != 0 || cfg.width % factor != 0)
        throw ConfigError("train: image size must be divisible by " + std::to_string(factor));

    const std::vector<Tensor<T>> data = generate_dataset<T>(cfg.train_spec());
    const EvalSet<T> heldout = make_eval_set<T>(cfg.heldout_spec(), cfg.af, cfg.effective_center_fraction(),
                                                cfg.eval_mask_seed());
    std::vector<NamedParam<T>> params = net.parameters();
    const std::size_t budget = param_count(net);

    AdamState<T> state;
    state.lr = cfg.lr;
    Rng shuffle_rng(cfg.shuffle_seed());
    std::vector<std::size_t> order(data.size());
    std::size_t cursor = order.size();

    History history;
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        std::vector<Tensor<T>> inputs;
        std::vector<const Tensor<T>*> truth;
        for (std::size_t b = 0; b < cfg.batch; ++b) {
            if (cursor == order.size()) {
                for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
                shuffle_rng.shuffle(std::span<std::size_t>(order));
                cursor = 0;
            }
            const Tensor<T>& x = data[order[cursor++]];
            Rng mask_rng(derive_seed(derive_seed(cfg.train_mask_seed(), step), b));
            const CartesianMask m = gen_cartesian_mask(cfg.width, cfg.af, cfg.effective_center_fraction(), mask_rng);
            inputs.push_back(undersample(x, m));
            truth.push_back(&x);
        }
        std::vector<const Tensor<T>*> input_ptrs;
        for (const auto& t : inputs) input_ptrs.push_back(&t);

        Tape<T> tape;
        double loss_value = 0;
        try {
            Var<T> xhat = unet_forward(net, tape.constant(stack(input_ptrs)));
            Var<T> loss = loss_total(xhat, tape.constant(stack(truth)), cfg.weights);
            loss_value = static_cast<double>(loss.value().item());
            tape.backward(loss);
        } catch (const NumericError& e) {
            throw NumericError("train: step " + std::to_string(step) + ": " + e.what());
        }
        if (!std::isfinite(loss_value)) throw NumericError("train: non-finite loss at step " + std::to_string(step));

        std::vector<Tensor<T>> grads;
        grads.reserve(params.size());
        for (const auto& p : params) {
            auto g = tape.grad_of(*p.tensor);
            grads.push_back(g ? std::move(*g) : Tensor<T>(p.tensor->shape()));
        }
        adam_step(state, params, grads);
        if (param_count(net) != budget) throw ContractError("train: parameter count changed during training");

        StepRecord rec{step, loss_value, std::nullopt, std::nullopt};
        if (cfg.eval_every > 0 && ((step + 1) % cfg.eval_every == 0 || step + 1 == cfg.steps)) {
            const EvalSummary s = evaluate(net, heldout);
            rec.psnr = s.psnr_mean;
            rec.ssim = s.ssim_mean;
        }
        history.records.push_back(rec);
        if (on_step) on_step(rec);
    }
    if (state_out) *state_out = std::move(state);
    return history;
}

}  // namespace kronmri
