// kronmri command-line tool.

#include <algorithm>
#include <chrono>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "kronmri/kronmri.hpp"

namespace fs = std::filesystem;
using namespace kronmri;
using nlohmann::json;

namespace {

// ---- shared helpers --------------------------------------------------------

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

std::string indexed(const std::string& stem, std::size_t i, const std::string& ext) {
    std::ostringstream os;
    os << stem << '_' << std::setw(4) << std::setfill('0') << i << ext;
    return os.str();
}

void require_af(double af) {
    if (af != 8 && af != 16) throw ConfigError("--af must be 8 or 16");
}

double center_fraction_for(double af, double cf) { return cf > 0 ? cf : default_center_fraction(static_cast<int>(af)); }

/// Strips a leading batch axis of size 1 so callers can pass [2,H,W] or [1,2,H,W].
Tensor<float> as_single_image(Tensor<float> t, const std::string& what) {
    if (t.rank() == 4 && t.dim(0) == 1) t = t.reshaped({t.dim(1), t.dim(2), t.dim(3)});
    if (t.rank() != 3 || t.dim(0) != 2)
        throw ConfigError(what + ": expected a [2 x H x W] complex image, got " + shape_str(t.shape()));
    return t;
}

// ---- gen-data --------------------------------------------------------------

struct GenDataOpts {
    std::uint64_t seed = 0;
    std::size_t count = 8, height = 64, width = 64, ellipses = 8;
    double af = 8, center_fraction = 0;
    std::string out = "data";
};

void gen_data(const GenDataOpts& o) {
    require_af(o.af);
    if (o.count == 0) throw ConfigError("--count must be >= 1");
    ensure_dir(o.out);
    const DatasetSpec spec{o.count, o.height, o.width, o.ellipses, derive_seed(o.seed, 1)};
    const double cf = center_fraction_for(o.af, o.center_fraction);
    json files = json::array();
    for (std::size_t i = 0; i < o.count; ++i) {
        const Tensor<float> image = dataset_sample<float>(spec, i);
        Rng mask_rng(derive_seed(derive_seed(o.seed, 5), i));
        const CartesianMask mask = gen_cartesian_mask(o.width, o.af, cf, mask_rng);
        const Tensor<float> kspace = apply_mask(fft2c(image), mask);
        const fs::path dir(o.out);
        save_kten(dir / indexed("image", i, ".kten"), image);
        save_kten(dir / indexed("kspace", i, ".kten"), kspace);
        save_kten(dir / indexed("mask", i, ".kten"), mask_tensor<float>(mask));
        write_pgm(dir / indexed("image", i, ".pgm"), magnitude(image));
        files.push_back({{"sample_id", i}, {"sampled_columns", mask.sampled_count()}});
    }
    std::cout << json{{"command", "gen-data"}, {"out", o.out}, {"count", o.count}, {"samples", files}}.dump() << "\n";
}

// ---- gen-mask --------------------------------------------------------------

struct GenMaskOpts {
    std::uint64_t seed = 0;
    std::size_t width = 320;
    double af = 8, center_fraction = 0;
    std::string out;
};

void gen_mask(const GenMaskOpts& o) {
    require_af(o.af);
    Rng rng(o.seed);
    const CartesianMask m = gen_cartesian_mask(o.width, o.af, center_fraction_for(o.af, o.center_fraction), rng);
    std::string pattern;
    for (auto s : m.sampled) pattern += s ? '1' : '0';
    if (!o.out.empty()) {
        ensure_dir(o.out);
        save_kten(fs::path(o.out) / "mask.kten", mask_tensor<float>(m));
        write_mask_pgm(fs::path(o.out) / "mask.pgm", m);
    }
    std::cout << json{{"width", m.width},
                      {"af", m.af},
                      {"center_fraction", m.center_fraction},
                      {"center_cols", m.center_cols},
                      {"center_start", m.center_start()},
                      {"sampled", m.sampled_count()},
                      {"fraction", m.sampled_fraction()},
                      {"pattern", pattern}}
                     .dump()
              << "\n";
}

// ---- model configuration shared by train and count-params ------------------

struct ModelOpts {
    std::string config;
    std::string layer_kind = "kron";
    std::size_t n = 2;
    std::size_t base = 8;
    std::vector<std::size_t> multiples{1, 2, 4};
    bool layer_kind_set = false, n_set = false, base_set = false, multiples_set = false;
};

UNetConfig resolve_unet(const ModelOpts& o, const UNetConfig& fallback) {
    UNetConfig c = fallback;
    if (!o.config.empty()) c = unet_config_from_json(read_json_file(o.config), o.config);
    if (o.layer_kind_set || o.config.empty()) c.layer_kind = parse_layer_kind(o.layer_kind);
    if (o.n_set || o.config.empty()) c.n = o.n;
    if (o.base_set) c.base_channels = o.base;
    if (o.multiples_set) c.channel_multiples = o.multiples;
    c.validate();
    return c;
}

// ---- train -----------------------------------------------------------------

struct TrainOpts {
    ModelOpts model;
    TrainConfig cfg;
    std::string out = "run";
};

void train_cmd(const TrainOpts& o) {
    UNetConfig base;
    base.base_channels = 8;
    const UNetConfig ucfg = resolve_unet(o.model, base);
    const TrainConfig& cfg = o.cfg;
    cfg.validate();
    ensure_dir(o.out);
    Rng init(cfg.init_seed());
    UNet<float> net = build_unet<float>(ucfg, init);

    const EvalSet<float> heldout =
        make_eval_set<float>(cfg.heldout_spec(), cfg.af, cfg.effective_center_fraction(), cfg.eval_mask_seed());
    const EvalSummary zf = evaluate_zero_filled(heldout);

    const auto t0 = std::chrono::steady_clock::now();
    const History history = train(net, cfg, nullptr, [](const StepRecord& r) {
        std::cerr << "step " << r.step << " loss " << r.loss;
        if (r.psnr) std::cerr << " psnr " << *r.psnr << " ssim " << *r.ssim;
        std::cerr << "\n";
    });
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const EvalSummary final_eval = evaluate(net, heldout);

    write_history(fs::path(o.out) / "history.jsonl", history);
    save_checkpoint(fs::path(o.out) / "checkpoint", net,
                    json{{"seed", cfg.seed}, {"steps", cfg.steps}, {"lr", cfg.lr}, {"af", cfg.af}});
    const auto [first, last] = decile_losses(history);
    const json summary{{"param_count", param_count(net)},
                       {"model", to_json(ucfg)},
                       {"zero_filled", {{"psnr", json_number(zf.psnr_mean)}, {"psnr_std", zf.psnr_std},
                                        {"ssim", zf.ssim_mean}, {"ssim_std", zf.ssim_std}}},
                       {"final", {{"psnr", json_number(final_eval.psnr_mean)}, {"psnr_std", final_eval.psnr_std},
                                  {"ssim", final_eval.ssim_mean}, {"ssim_std", final_eval.ssim_std}}},
                       {"psnr_gain_db", final_eval.psnr_mean - zf.psnr_mean},
                       {"first_decile_loss", first},
                       {"last_decile_loss", last},
                       {"train_seconds", seconds}};
    write_text_file(fs::path(o.out) / "summary.json", summary.dump(2) + "\n");
    std::cout << summary.dump() << "\n";
}

// ---- reconstruct -----------------------------------------------------------

struct ReconOpts {
    std::string checkpoint, input, mask, truth;
    std::string out = "recon";
};

void reconstruct_cmd(const ReconOpts& o) {
    Tensor<float> kspace = as_single_image(load_kten<float>(o.input), "--input");
    if (!o.mask.empty()) {
        const CartesianMask m = mask_from_tensor(load_kten<float>(o.mask));
        if (m.width != kspace.dim(2))
            throw ConfigError("--mask width " + std::to_string(m.width) + " does not match k-space width " +
                              std::to_string(kspace.dim(2)));
        kspace = apply_mask(kspace, m);
    }
    const Tensor<float> zf = zero_filled(kspace);
    Tensor<float> recon = zf;
    if (!o.checkpoint.empty()) {
        const UNet<float> net = load_checkpoint<float>(o.checkpoint);
        const std::size_t factor = std::size_t{1} << (net.config.depth() - 1);
        if (net.config.in_channels != 2 || zf.dim(1) % factor || zf.dim(2) % factor)
            throw ConfigError("checkpoint model cannot process a " + shape_str(zf.shape()) + " image");
        recon = unet_apply(net, zf);
    }
    ensure_dir(o.out);
    const fs::path dir(o.out);
    save_kten(dir / "recon.kten", recon);
    write_pgm(dir / "recon.pgm", magnitude(recon));
    json metrics{{"model", o.checkpoint.empty() ? "zero-filled" : o.checkpoint}};
    if (!o.truth.empty()) {
        const Tensor<float> truth = as_single_image(load_kten<float>(o.truth), "--truth");
        if (truth.shape() != recon.shape())
            throw ConfigError("--truth shape " + shape_str(truth.shape()) + " does not match " +
                              shape_str(recon.shape()));
        const SampleMetrics r = complex_image_metrics(recon, truth);
        const SampleMetrics z = complex_image_metrics(zf, truth);
        metrics["psnr_db"] = json_number(r.psnr_db);
        metrics["ssim"] = r.ssim;
        metrics["zero_filled_psnr_db"] = json_number(z.psnr_db);
        metrics["zero_filled_ssim"] = z.ssim;
    }
    write_text_file(dir / "metrics.json", metrics.dump(2) + "\n");
    std::cout << metrics.dump() << "\n";
}

// ---- metrics ---------------------------------------------------------------

struct MetricsOpts {
    std::vector<std::string> pred, truth;
};

void metrics_cmd(const MetricsOpts& o) {
    if (o.pred.size() != o.truth.size())
        throw ConfigError("--pred and --truth must list the same number of files");
    if (o.pred.empty()) throw ConfigError("at least one --pred/--truth pair is required");
    std::vector<SampleMetrics> all;
    for (std::size_t i = 0; i < o.pred.size(); ++i) {
        const auto p = as_single_image(load_kten<float>(o.pred[i]), o.pred[i]);
        const auto t = as_single_image(load_kten<float>(o.truth[i]), o.truth[i]);
        if (p.shape() != t.shape()) throw ConfigError("shape mismatch between " + o.pred[i] + " and " + o.truth[i]);
        const SampleMetrics m = complex_image_metrics(p, t);
        std::cout << json{{"sample_id", i}, {"psnr_db", json_number(m.psnr_db)}, {"ssim", m.ssim}}.dump() << "\n";
        all.push_back(m);
    }
    const EvalSummary s = summarize(all);
    std::cout << json{{"summary",
                       {{"count", all.size()},
                        {"psnr_mean", json_number(s.psnr_mean)},
                        {"psnr_std", json_number(s.psnr_std)},
                        {"ssim_mean", s.ssim_mean},
                        {"ssim_std", s.ssim_std}}}}
                     .dump()
              << "\n";
}

// ---- count-params ----------------------------------------------------------

struct CountOpts {
    ModelOpts model;
    std::string format = "table";
};

struct CountRow {
    std::string layer;
    std::size_t dense, model;
};

std::vector<CountRow> unet_rows(const UNetConfig& c) {
    std::vector<CountRow> rows;
    for (const ConvSpec& s : unet_layout(c)) {
        const std::size_t d = dense_conv_count(s.in, s.out, s.kernel);
        rows.push_back({s.name, d, c.layer_kind == LayerKind::dense ? d : kron_conv_count(s.in, s.out, s.kernel, c.n)});
    }
    return rows;
}

std::vector<CountRow> attention_rows(const AttentionConfig& c, std::size_t blocks, std::size_t mlp_ratio) {
    std::vector<CountRow> rows;
    const std::size_t e = c.embed_dim, h = e * mlp_ratio;
    auto add = [&](const std::string& name, std::size_t in, std::size_t out) {
        const std::size_t d = dense_linear_count(in, out);
        rows.push_back({name, d, c.layer_kind == LayerKind::dense ? d : kron_linear_count(in, out, c.n)});
    };
    for (std::size_t b = 0; b < blocks; ++b) {
        const std::string p = "block" + std::to_string(b);
        for (const char* proj : {".attn.q", ".attn.k", ".attn.v", ".attn.o"}) add(p + proj, e, e);
        add(p + ".mlp.fc1", e, h);
        add(p + ".mlp.fc2", h, e);
    }
    return rows;
}

void count_params_cmd(const CountOpts& o) {
    std::vector<CountRow> rows;
    std::string label;
    json model;
    json file = o.model.config.empty() ? json::object() : read_json_file(o.model.config);
    if (file.contains("attention")) {
        detail::reject_unknown(file, {"attention", "blocks", "mlp_ratio"}, o.model.config);
        AttentionConfig a = attention_config_from_json(file.at("attention"), o.model.config + ":attention");
        if (o.model.layer_kind_set) a.layer_kind = parse_layer_kind(o.model.layer_kind);
        if (o.model.n_set) a.n = o.model.n;
        a.validate();
        const std::size_t blocks = detail::count_field(file, "blocks", 2, o.model.config);
        const std::size_t ratio = detail::count_field(file, "mlp_ratio", 2, o.model.config);
        if (blocks == 0 || ratio == 0) throw ConfigError(o.model.config + ": blocks and mlp_ratio must be >= 1");
        rows = attention_rows(a, blocks, ratio);
        label = a.layer_kind == LayerKind::dense ? "dense" : "kron(n=" + std::to_string(a.n) + ")";
        model = {{"attention", to_json(a)}, {"blocks", blocks}, {"mlp_ratio", ratio}};
    } else {
        const UNetConfig full_size;  // base 64, multiples [1,2,4,8]
        const UNetConfig c = resolve_unet(o.model, full_size);
        rows = unet_rows(c);
        label = c.layer_kind == LayerKind::dense ? "dense" : "kron(n=" + std::to_string(c.n) + ")";
        model = {{"unet", to_json(c)}};
    }
    std::size_t dense_total = 0, model_total = 0;
    for (const auto& r : rows) {
        dense_total += r.dense;
        model_total += r.model;
    }
    auto ratio = [](std::size_t a, std::size_t b) { return static_cast<double>(a) / static_cast<double>(b); };
    if (o.format == "json") {
        json layers = json::array();
        for (const auto& r : rows)
            layers.push_back({{"layer", r.layer}, {"dense", r.dense}, {"model", r.model}, {"ratio", ratio(r.model, r.dense)}});
        std::cout << json{{"model", model},
                          {"kind", label},
                          {"layers", layers},
                          {"total", {{"dense", dense_total}, {"model", model_total}, {"ratio", ratio(model_total, dense_total)}}}}
                         .dump(2)
                  << "\n";
        return;
    }
    if (o.format != "table") throw ConfigError("--format must be table or json");
    std::cout << std::left << std::setw(16) << "layer" << std::right << std::setw(12) << "dense" << std::setw(14)
              << label << std::setw(10) << "ratio" << "\n";
    auto line = [&](const std::string& name, std::size_t d, std::size_t m) {
        std::cout << std::left << std::setw(16) << name << std::right << std::setw(12) << d << std::setw(14) << m
                  << std::setw(10) << std::fixed << std::setprecision(4) << ratio(m, d) << "\n";
    };
    for (const auto& r : rows) line(r.layer, r.dense, r.model);
    line("total", dense_total, model_total);
}

// ---- verify-algebra --------------------------------------------------------

struct AlgebraOpts {
    std::string preset = "all";
    std::size_t trials = 1000;
    std::uint64_t seed = 0;
};

int verify_algebra_cmd(const AlgebraOpts& o) {
    std::vector<std::string> names;
    if (o.preset == "all") {
        names = {"real", "complex", "quaternion"};
    } else {
        names = {o.preset};
    }
    Rng rng(o.seed);
    json reports = json::array();
    bool ok = true;
    for (const auto& name : names) {
        const AlgebraPreset p = preset(name);
        const AlgebraReport r = verify_algebra(p, o.trials, rng);
        ok = ok && r.passed;
        reports.push_back({{"preset", r.name},
                           {"n", p.n},
                           {"trials", r.trials},
                           {"max_abs_deviation", r.max_abs_deviation},
                           {"tolerance", algebra_tolerance},
                           {"passed", r.passed}});
    }
    std::cout << json{{"algebras", reports}, {"passed", ok}}.dump(2) << "\n";
    return ok ? 0 : 3;
}

// ---- grad-check ------------------------------------------------------------

struct GradOpts {
    std::string target = "all";
    std::uint64_t seed = 0;
    double h = 1e-6;
    double tol = 1e-4;
    double unet_tol = 1e-3;
};

int grad_check_cmd(const GradOpts& o) {
    const auto& all = grad_check_targets();
    const std::vector<std::string> targets = o.target == "all" ? all : std::vector<std::string>{o.target};
    json reports = json::array();
    bool ok = true;
    for (const auto& t : targets) {
        Rng rng(grad_check_seed(o.seed, t));
        const double tol = t == "unet" ? o.unet_tol : o.tol;
        const GradCheckReport r = run_grad_check(t, rng, o.h, tol);
        ok = ok && r.passed;
        reports.push_back({{"target", t},
                           {"coordinates", r.coordinates},
                           {"max_rel_error", r.max_rel_error},
                           {"tolerance", tol},
                           {"passed", r.passed}});
    }
    std::cout << json{{"checks", reports}, {"passed", ok}}.dump(2) << "\n";
    return ok ? 0 : 3;
}

// ---- bench -----------------------------------------------------------------

struct BenchOpts {
    std::vector<std::string> shapes{"linear:256x256", "conv:64x64x3"};
    std::vector<std::size_t> ns{2, 4};
    std::size_t repetitions = 5;
    std::size_t batch = 8;
    std::size_t size = 32;
    std::uint64_t seed = 0;
};

struct BenchShape {
    std::string kind;
    std::size_t in, out, kernel;
};

BenchShape parse_shape(const std::string& s) {
    const auto colon = s.find(':');
    if (colon == std::string::npos) throw ConfigError("bad --shapes entry '" + s + "' (expected linear:INxOUT or conv:INxOUTxK)");
    BenchShape b{s.substr(0, colon), 0, 0, 1};
    std::vector<std::size_t> dims;
    std::stringstream ss(s.substr(colon + 1));
    std::string part;
    while (std::getline(ss, part, 'x')) {
        try {
            std::size_t used = 0;
            const unsigned long v = std::stoul(part, &used);
            if (used != part.size() || v == 0) throw std::invalid_argument(part);
            dims.push_back(v);
        } catch (const std::exception&) {
            throw ConfigError("bad dimension '" + part + "' in --shapes entry '" + s + "'");
        }
    }
    if (b.kind == "linear" && dims.size() == 2) {
        b.in = dims[0];
        b.out = dims[1];
    } else if (b.kind == "conv" && dims.size() == 3) {
        b.in = dims[0];
        b.out = dims[1];
        b.kernel = dims[2];
    } else {
        throw ConfigError("bad --shapes entry '" + s + "' (expected linear:INxOUT or conv:INxOUTxK)");
    }
    return b;
}

void bench_cmd(const BenchOpts& o) {
    if (o.repetitions < 3) throw ConfigError("--repetitions must be >= 3");
    std::cout << "layer,kind,n,params,wall_time_s,macs\n";
    Rng rng(o.seed);
    for (const auto& spec : o.shapes) {
        const BenchShape s = parse_shape(spec);
        const std::string name = spec;
        auto run = [&](const std::string& kind, std::size_t n) {
            std::size_t params = 0;
            std::function<void()> run_once;
            Tensor<float> x;
            if (s.kind == "linear") {
                const Linear<float> layer = make_linear<float>(kind == "dense" ? LayerKind::dense : LayerKind::kronecker,
                                                               s.in, s.out, n, rng);
                params = param_count(layer);
                x = Tensor<float>::uniform({o.batch, s.in}, rng, -1, 1);
                run_once = [layer, &x] {
                    Tape<float> t;
                    kronmri::forward(layer, t.constant(x));
                };
            } else {
                const Conv<float> layer = make_conv<float>(kind == "dense" ? LayerKind::dense : LayerKind::kronecker,
                                                           s.in, s.out, s.kernel, n, rng, 1, s.kernel / 2);
                params = param_count(layer);
                x = Tensor<float>::uniform({o.batch, s.in, o.size, o.size}, rng, -1, 1);
                run_once = [layer, &x] {
                    Tape<float> t;
                    kronmri::forward(layer, t.constant(x));
                };
            }
            std::vector<double> times;
            std::uint64_t macs = 0;
            for (std::size_t r = 0; r < o.repetitions; ++r) {
                mac_counter() = 0;
                const auto t0 = std::chrono::steady_clock::now();
                run_once();
                times.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
                macs = mac_counter();
            }
            std::nth_element(times.begin(), times.begin() + static_cast<long>(times.size() / 2), times.end());
            std::cout << name << ',' << kind << ',' << n << ',' << params << ',' << std::setprecision(6)
                      << times[times.size() / 2] << ',' << macs << "\n";
        };
        run("dense", 1);
        for (std::size_t n : o.ns) run("kron", n);
    }
}

// ---- error reporting -------------------------------------------------------

int report(const std::string& kind, const std::string& message, int code) {
    std::cerr << json{{"error", kind}, {"message", message}, {"exit_code", code}}.dump() << "\n";
    return code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Kronecker-parameterized networks for undersampled MRI reconstruction", "kronmri"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "kronmri 1.0.0");

    GenDataOpts gd;
    auto* c_gd = app.add_subcommand("gen-data", "Generate seeded phantoms, masks and undersampled k-space");
    c_gd->add_option("--seed", gd.seed, "Random seed")->capture_default_str();
    c_gd->add_option("--count", gd.count, "Number of samples")->capture_default_str();
    c_gd->add_option("--height", gd.height, "Image height")->capture_default_str();
    c_gd->add_option("--width", gd.width, "Image width")->capture_default_str();
    c_gd->add_option("--ellipses", gd.ellipses, "Ellipses per phantom")->capture_default_str();
    c_gd->add_option("--af", gd.af, "Acceleration factor (8 or 16)")->capture_default_str();
    c_gd->add_option("--center-fraction", gd.center_fraction, "Fully sampled center fraction (0 = default for af)")
        ->capture_default_str();
    c_gd->add_option("--out", gd.out, "Output directory")->capture_default_str();

    GenMaskOpts gm;
    auto* c_gm = app.add_subcommand("gen-mask", "Generate one Cartesian undersampling mask");
    c_gm->add_option("--seed", gm.seed, "Random seed")->capture_default_str();
    c_gm->add_option("--width", gm.width, "Number of phase-encode columns")->capture_default_str();
    c_gm->add_option("--af", gm.af, "Acceleration factor (8 or 16)")->capture_default_str();
    c_gm->add_option("--center-fraction", gm.center_fraction, "Fully sampled center fraction (0 = default for af)")
        ->capture_default_str();
    c_gm->add_option("--out", gm.out, "Output directory for mask.kten and mask.pgm (optional)")->capture_default_str();

    auto add_model_flags = [](CLI::App* c, ModelOpts& m) {
        c->add_option("--config", m.config, "Model configuration JSON")->capture_default_str();
        c->add_option("--layer-kind", m.layer_kind, "Layer kind: dense or kron")->capture_default_str();
        c->add_option("--n", m.n, "Hypercomplex dimension n")->capture_default_str();
        c->add_option("--base", m.base, "U-Net base channel count")->capture_default_str();
        c->add_option("--multiples", m.multiples, "U-Net channel multiples")->capture_default_str()->delimiter(',');
    };

    TrainOpts tr;
    tr.model.base = 8;
    auto* c_tr = app.add_subcommand("train", "Train a U-Net on seeded synthetic phantoms");
    add_model_flags(c_tr, tr.model);
    c_tr->add_option("--seed", tr.cfg.seed, "Random seed")->capture_default_str();
    c_tr->add_option("--steps", tr.cfg.steps, "Gradient steps")->capture_default_str();
    c_tr->add_option("--batch", tr.cfg.batch, "Batch size")->capture_default_str();
    c_tr->add_option("--lr", tr.cfg.lr, "Adam learning rate")->capture_default_str();
    c_tr->add_option("--af", tr.cfg.af, "Acceleration factor (8 or 16)")->capture_default_str();
    c_tr->add_option("--dataset-size", tr.cfg.dataset_size, "Training phantoms")->capture_default_str();
    c_tr->add_option("--eval-size", tr.cfg.eval_size, "Held-out phantoms")->capture_default_str();
    c_tr->add_option("--eval-every", tr.cfg.eval_every, "Evaluation period in steps (0 disables)")
        ->capture_default_str();
    c_tr->add_option("--size", tr.cfg.height, "Phantom height and width")->capture_default_str();
    c_tr->add_option("--out", tr.out, "Output directory")->capture_default_str();

    ReconOpts rc;
    auto* c_rc = app.add_subcommand("reconstruct", "Reconstruct an image from undersampled k-space");
    c_rc->add_option("--checkpoint", rc.checkpoint, "Checkpoint directory (omit for zero-filled)")
        ->capture_default_str();
    c_rc->add_option("--input", rc.input, "K-space KTEN [2 x H x W]")->required();
    c_rc->add_option("--mask", rc.mask, "Mask KTEN applied to the input (optional)")->capture_default_str();
    c_rc->add_option("--truth", rc.truth, "Ground-truth image KTEN for metrics (optional)")->capture_default_str();
    c_rc->add_option("--out", rc.out, "Output directory")->capture_default_str();

    MetricsOpts mt;
    auto* c_mt = app.add_subcommand("metrics", "PSNR/SSIM of reconstructions against ground truth");
    c_mt->add_option("--pred", mt.pred, "Reconstruction KTEN files")->required();
    c_mt->add_option("--truth", mt.truth, "Ground-truth KTEN files, same order")->required();

    CountOpts cp;
    cp.model.base = 64;
    cp.model.multiples = {1, 2, 4, 8};
    auto* c_cp = app.add_subcommand("count-params", "Per-layer dense vs Kronecker parameter counts");
    add_model_flags(c_cp, cp.model);
    c_cp->add_option("--format", cp.format, "Output format: table or json")->capture_default_str();

    AlgebraOpts al;
    auto* c_al = app.add_subcommand("verify-algebra", "Check presets against algebra multiplication tables");
    c_al->add_option("--preset", al.preset, "real, complex, quaternion or all")->capture_default_str();
    c_al->add_option("--trials", al.trials, "Random trials per preset")->capture_default_str();
    c_al->add_option("--seed", al.seed, "Random seed")->capture_default_str();

    GradOpts gc;
    auto* c_gc = app.add_subcommand("grad-check", "Finite-difference gradient checks in float64");
    c_gc->add_option("--target", gc.target, "kron-linear, kron-conv, phm-mlp, attention, loss, unet or all")
        ->capture_default_str();
    c_gc->add_option("--seed", gc.seed, "Random seed")->capture_default_str();
    c_gc->add_option("--step-size", gc.h, "Central-difference step")->capture_default_str();
    c_gc->add_option("--tol", gc.tol, "Maximum relative error")->capture_default_str();
    c_gc->add_option("--unet-tol", gc.unet_tol, "Maximum relative error for the end-to-end U-Net")
        ->capture_default_str();

    BenchOpts bn;
    auto* c_bn = app.add_subcommand("bench", "Time layer forward passes and count multiply-accumulates");
    c_bn->add_option("--shapes", bn.shapes, "Layer shapes: linear:INxOUT or conv:INxOUTxK")
        ->capture_default_str()
        ->delimiter(',');
    c_bn->add_option("--n", bn.ns, "Hypercomplex dimensions")->capture_default_str()->delimiter(',');
    c_bn->add_option("--repetitions", bn.repetitions, "Timed repetitions (median reported)")->capture_default_str();
    c_bn->add_option("--batch", bn.batch, "Batch size")->capture_default_str();
    c_bn->add_option("--size", bn.size, "Spatial size for conv layers")->capture_default_str();
    c_bn->add_option("--seed", bn.seed, "Random seed")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return report("config_error", e.what(), 2);
    }

    auto flagged = [](CLI::App* c, const char* name) { return c->count(name) > 0; };
    try {
        if (*c_gd) gen_data(gd);
        if (*c_gm) gen_mask(gm);
        if (*c_tr) {
            tr.model.layer_kind_set = flagged(c_tr, "--layer-kind");
            tr.model.n_set = flagged(c_tr, "--n");
            tr.model.base_set = flagged(c_tr, "--base") || tr.model.config.empty();
            tr.model.multiples_set = flagged(c_tr, "--multiples") || tr.model.config.empty();
            tr.cfg.width = tr.cfg.height;
            train_cmd(tr);
        }
        if (*c_rc) reconstruct_cmd(rc);
        if (*c_mt) metrics_cmd(mt);
        if (*c_cp) {
            cp.model.layer_kind_set = flagged(c_cp, "--layer-kind");
            cp.model.n_set = flagged(c_cp, "--n");
            cp.model.base_set = flagged(c_cp, "--base");
            cp.model.multiples_set = flagged(c_cp, "--multiples");
            count_params_cmd(cp);
        }
        if (*c_al) return verify_algebra_cmd(al);
        if (*c_gc) return grad_check_cmd(gc);
        if (*c_bn) bench_cmd(bn);
    } catch (const Error& e) {
        return report(to_string(e.kind()), e.what(), e.exit_code());
    } catch (const json::exception& e) {
        return report("config_error", e.what(), 2);
    } catch (const std::exception& e) {
        return report("internal_error", e.what(), 1);
    }
    return 0;
}
