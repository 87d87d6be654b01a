#pragma once

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "kronmri/blocks.hpp"
#include "kronmri/kten.hpp"

namespace kronmri {

using nlohmann::json;

// ---- JSON configs ----------------------------------------------------------

namespace detail {

inline void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& origin) {
    if (!j.is_object()) throw ConfigError(origin + ": expected a JSON object");
    for (const auto& [key, _] : j.items())
        if (!known.count(key)) throw ConfigError(origin + ": unknown field '" + key + "'");
}

template <class V>
V field(const json& j, const char* key, V fallback, const std::string& origin) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<V>();
    } catch (const json::exception&) {
        throw ConfigError(origin + ": field '" + key + "' has the wrong type");
    }
}

inline std::size_t count_field(const json& j, const char* key, std::size_t fallback, const std::string& origin) {
    if (!j.contains(key)) return fallback;
    const json& v = j.at(key);
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0))
        throw ConfigError(origin + ": field '" + std::string(key) + "' must be a non-negative integer");
    return v.get<std::size_t>();
}

}  // namespace detail

inline json to_json(const UNetConfig& c) {
    return {{"channel_multiples", c.channel_multiples},
            {"base_channels", c.base_channels},
            {"layer_kind", c.layer_kind == LayerKind::dense ? "dense" : "kron"},
            {"n", c.n},
            {"in_channels", c.in_channels},
            {"out_channels", c.out_channels},
            {"residual", c.residual}};
}

inline UNetConfig unet_config_from_json(const json& j, const std::string& origin = "config") {
    detail::reject_unknown(
        j, {"channel_multiples", "base_channels", "layer_kind", "n", "in_channels", "out_channels", "residual"},
        origin);
    UNetConfig c;
    if (j.contains("channel_multiples")) {
        const json& m = j.at("channel_multiples");
        if (!m.is_array()) throw ConfigError(origin + ": field 'channel_multiples' must be an array");
        c.channel_multiples.clear();
        for (const json& v : m) {
            if (!v.is_number_integer() || v.get<long long>() <= 0)
                throw ConfigError(origin + ": field 'channel_multiples' must hold positive integers");
            c.channel_multiples.push_back(v.get<std::size_t>());
        }
    }
    c.base_channels = detail::count_field(j, "base_channels", c.base_channels, origin);
    if (j.contains("layer_kind")) {
        try {
            c.layer_kind = parse_layer_kind(detail::field<std::string>(j, "layer_kind", "", origin));
        } catch (const ConfigError& e) {
            throw ConfigError(origin + ": field 'layer_kind': " + e.what());
        }
    }
    c.n = detail::count_field(j, "n", c.n, origin);
    c.in_channels = detail::count_field(j, "in_channels", c.in_channels, origin);
    c.out_channels = detail::count_field(j, "out_channels", c.out_channels, origin);
    c.residual = detail::field<bool>(j, "residual", c.residual, origin);
    try {
        c.validate();
    } catch (const ConfigError& e) {
        throw ConfigError(origin + ": " + e.what());
    }
    return c;
}

inline json to_json(const AttentionConfig& c) {
    return {{"embed_dim", c.embed_dim},
            {"heads", c.heads},
            {"n", c.n},
            {"window", c.window},
            {"layer_kind", c.layer_kind == LayerKind::dense ? "dense" : "kron"}};
}

inline AttentionConfig attention_config_from_json(const json& j, const std::string& origin = "config") {
    detail::reject_unknown(j, {"embed_dim", "heads", "n", "window", "layer_kind"}, origin);
    AttentionConfig c;
    c.embed_dim = detail::count_field(j, "embed_dim", c.embed_dim, origin);
    c.heads = detail::count_field(j, "heads", c.heads, origin);
    c.n = detail::count_field(j, "n", c.n, origin);
    c.window = detail::count_field(j, "window", c.window, origin);
    if (j.contains("layer_kind")) c.layer_kind = parse_layer_kind(detail::field<std::string>(j, "layer_kind", "", origin));
    try {
        c.validate();
    } catch (const ConfigError& e) {
        throw ConfigError(origin + ": " + e.what());
    }
    return c;
}

inline json read_json_file(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open " + path.string());
    try {
        return json::parse(f);
    } catch (const json::parse_error& e) {
        throw ConfigError(path.string() + ": malformed JSON: " + e.what());
    }
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write " + path.string());
    f << text;
    if (!f) throw IoError("write failed: " + path.string());
}

// ---- per-layer arrays ------------------------------------------------------

/// Layer manifest: kind, n, dims, stride, padding.
template <Scalar T>
json layer_manifest(const Conv<T>& layer) {
    return std::visit(
        [](const auto& p) -> json {
            using L = std::decay_t<decltype(p)>;
            json j{{"in", p.in}, {"out", p.out}, {"kernel", p.kernel}, {"stride", p.stride}, {"padding", p.padding}};
            if constexpr (std::is_same_v<L, KroneckerConv<T>>) {
                j["kind"] = "kron_conv";
                j["n"] = p.n;
                j["freeze_mixing"] = p.freeze_mixing;
            } else {
                j["kind"] = "dense_conv";
                j["n"] = 1;
            }
            return j;
        },
        layer);
}

template <Scalar T>
void save_layer(const std::filesystem::path& dir, Conv<T>& layer) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
    std::vector<NamedParam<T>> params;
    collect_params(layer, "", params);
    for (const auto& p : params) save_kten(dir / (p.name.substr(1) + ".kten"), *p.tensor);
}

template <Scalar T>
void load_layer(const std::filesystem::path& dir, Conv<T>& layer) {
    std::vector<NamedParam<T>> params;
    collect_params(layer, "", params);
    for (const auto& p : params) {
        const auto path = dir / (p.name.substr(1) + ".kten");
        Tensor<T> t = load_kten<T>(path);
        if (t.shape() != p.tensor->shape())
            throw ConfigError(path.string() + ": shape " + shape_str(t.shape()) + " does not match model shape " +
                              shape_str(p.tensor->shape()));
        *p.tensor = std::move(t);
    }
}

// ---- U-Net checkpoints -----------------------------------------------------

inline constexpr const char* checkpoint_format = "kronmri-checkpoint";
inline constexpr int checkpoint_version = 1;

/// <dir>/manifest.json plus one subdirectory of KTEN arrays per layer.
template <Scalar T>
void save_checkpoint(const std::filesystem::path& dir, UNet<T>& net, const json& extra = json::object()) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
    json layers = json::array();
    for (std::size_t i = 0; i < net.convs.size(); ++i) {
        json m = layer_manifest(net.convs[i]);
        m["name"] = net.names[i];
        layers.push_back(m);
        save_layer(dir / net.names[i], net.convs[i]);
    }
    json manifest{{"format", checkpoint_format},
                  {"version", checkpoint_version},
                  {"dtype", kten::dtype_code<T>() == kten::dtype_f32 ? "f32" : "f64"},
                  {"model", to_json(net.config)},
                  {"param_count", param_count(net)},
                  {"layers", layers}};
    if (!extra.empty()) manifest["extra"] = extra;
    write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

/// Rebuilds the architecture from the manifest and loads every array.
template <Scalar T>
UNet<T> load_checkpoint(const std::filesystem::path& dir) {
    const auto manifest_path = dir / "manifest.json";
    const json m = read_json_file(manifest_path);
    const std::string origin = manifest_path.string();
    if (!m.is_object() || m.value("format", "") != checkpoint_format)
        throw ConfigError(origin + ": not a checkpoint manifest");
    if (m.value("version", 0) != checkpoint_version)
        throw ConfigError(origin + ": unsupported checkpoint version");
    if (!m.contains("model") || !m.contains("layers")) throw ConfigError(origin + ": missing model or layers");
    const UNetConfig cfg = unet_config_from_json(m.at("model"), origin + ":model");

    Rng rng(0);  // placeholder weights, overwritten below
    UNet<T> net = build_unet<T>(cfg, rng);
    const json& layers = m.at("layers");
    if (!layers.is_array() || layers.size() != net.convs.size())
        throw ConfigError(origin + ": layer list does not match the model configuration");
    for (std::size_t i = 0; i < net.convs.size(); ++i) {
        json expected = layer_manifest(net.convs[i]);
        expected["name"] = net.names[i];
        json stored = layers[i];
        if (stored.contains("freeze_mixing")) {
            const bool freeze = stored["freeze_mixing"].get<bool>();
            if (auto* k = std::get_if<KroneckerConv<T>>(&net.convs[i])) k->freeze_mixing = freeze;
            expected["freeze_mixing"] = freeze;
        }
        if (stored != expected)
            throw ConfigError(origin + ": layer " + std::to_string(i) + " manifest " + stored.dump() +
                              " disagrees with the model " + expected.dump());
        load_layer(dir / net.names[i], net.convs[i]);
    }
    return net;
}

}  // namespace kronmri
