#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "coordfill/model.hpp"

namespace coordfill {

using json = nlohmann::json;

inline constexpr char kCheckpointMagic[4] = {'C', 'F', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline json to_json(const GeneratorConfig& g) {
    return {{"fixed_input_res", g.fixed_input_res},
            {"base_channels", g.base_channels},
            {"n_downsamples", g.n_downsamples},
            {"n_blocks", g.n_blocks},
            {"alpha", g.alpha},
            {"norm", to_string(g.norm)},
            {"block_kind", to_string(g.block_kind)},
            {"resolution_injection", g.resolution_injection},
            {"mlp_layers", g.mlp.layers},
            {"mlp_n_freq", g.mlp.n_freq}};
}

/// Missing keys keep their defaults; unknown enum strings throw ConfigError.
inline GeneratorConfig generator_config_from_json(const json& j, GeneratorConfig g = {}) {
    try {
        g.fixed_input_res = j.value("fixed_input_res", g.fixed_input_res);
        g.base_channels = j.value("base_channels", g.base_channels);
        g.n_downsamples = j.value("n_downsamples", g.n_downsamples);
        g.n_blocks = j.value("n_blocks", g.n_blocks);
        g.alpha = j.value("alpha", g.alpha);
        if (j.contains("norm")) g.norm = parse_norm_kind(j.at("norm").get<std::string>());
        if (j.contains("block_kind")) g.block_kind = parse_block_kind(j.at("block_kind").get<std::string>());
        g.resolution_injection = j.value("resolution_injection", g.resolution_injection);
        if (j.contains("mlp_layers")) g.mlp.layers = j.at("mlp_layers").get<std::vector<std::size_t>>();
        g.mlp.n_freq = j.value("mlp_n_freq", g.mlp.n_freq);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("generator config: ") + e.what());
    }
    g.validate();
    return g;
}

inline json to_json(const ModelConfig& m) {
    return {{"generator", to_json(m.generator)},
            {"decoder", to_string(m.decoder)},
            {"conv_decoder_width", m.conv_decoder_width}};
}

inline ModelConfig model_config_from_json(const json& j) {
    ModelConfig m;
    if (j.contains("generator")) m.generator = generator_config_from_json(j.at("generator"));
    try {
        if (j.contains("decoder")) m.decoder = parse_decoder_kind(j.at("decoder").get<std::string>());
        m.conv_decoder_width = j.value("conv_decoder_width", m.conv_decoder_width);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("model config: ") + e.what());
    }
    m.validate();
    return m;
}

/// Layout (all integers little-endian):
///   bytes 0..3   "CFCK"
///   bytes 4..7   u32 format version (1)
///   bytes 8..11  u32 manifest length N
///   N bytes      UTF-8 JSON manifest {"config": {...}, "tensors": [{name, shape, offset, kind}]}
///   payload      f32 values; `offset` counts floats from the payload start
struct CheckpointData {
    json config;
    std::map<std::string, Tensor<float>> tensors;
};

namespace detail {

inline void put_u32(std::ostream& out, std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32(std::istream& in) {
    unsigned char b[4] = {};
    in.read(reinterpret_cast<char*>(b), 4);
    return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 | std::uint32_t(b[3]) << 24;
}

inline void put_f32(std::vector<unsigned char>& buf, float f) {
    std::uint32_t v;
    std::memcpy(&v, &f, 4);
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

inline float get_f32(const unsigned char* p) {
    const std::uint32_t v = std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 | std::uint32_t(p[3]) << 24;
    float f;
    std::memcpy(&f, &v, 4);
    return f;
}

}  // namespace detail

template <typename T>
void save_checkpoint(const std::string& path, const json& config, const ParamRefs<T>& refs) {
    json tensors = json::array();
    std::vector<unsigned char> payload;
    std::size_t offset = 0;
    auto add = [&](const std::string& name, const Tensor<T>& t, const char* kind) {
        tensors.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}, {"kind", kind}});
        for (T v : t.data()) detail::put_f32(payload, float(v));
        offset += t.size();
    };
    for (const auto& e : refs.params) add(e.name, e.var->value(), "param");
    for (const auto& b : refs.buffers) add(b.name, *b.tensor, "buffer");
    const std::string manifest = json{{"config", config}, {"tensors", tensors}}.dump();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint " + path);
    out.write(kCheckpointMagic, 4);
    detail::put_u32(out, kCheckpointVersion);
    detail::put_u32(out, std::uint32_t(manifest.size()));
    out.write(manifest.data(), std::streamsize(manifest.size()));
    out.write(reinterpret_cast<const char*>(payload.data()), std::streamsize(payload.size()));
    if (!out) throw IoError("checkpoint write failed: " + path);
}

inline CheckpointData read_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint " + path);
    char magic[4] = {};
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kCheckpointMagic, 4) != 0) throw IoError("not a checkpoint file: " + path);
    const std::uint32_t version = detail::get_u32(in);
    if (version != kCheckpointVersion) throw IoError("unsupported checkpoint version " + std::to_string(version));
    const std::uint32_t len = detail::get_u32(in);
    std::string manifest(len, '\0');
    in.read(manifest.data(), len);
    if (!in) throw IoError("truncated checkpoint manifest: " + path);
    std::vector<unsigned char> payload((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    CheckpointData data;
    try {
        json m = json::parse(manifest);
        data.config = m.at("config");
        for (const auto& t : m.at("tensors")) {
            const Shape shape = t.at("shape").get<Shape>();
            const std::size_t off = t.at("offset").get<std::size_t>(), n = shape_size(shape);
            if ((off + n) * 4 > payload.size()) throw IoError("checkpoint payload too short for " + t.at("name").get<std::string>());
            Tensor<float> v(shape);
            for (std::size_t i = 0; i < n; ++i) v[i] = detail::get_f32(payload.data() + (off + i) * 4);
            data.tensors.emplace(t.at("name").get<std::string>(), std::move(v));
        }
    } catch (const json::exception& e) {
        throw IoError(std::string("malformed checkpoint manifest: ") + e.what());
    }
    return data;
}

/// Copies every named tensor into `refs`; names and shapes must match exactly.
template <typename T>
void assign_tensors(const CheckpointData& data, ParamRefs<T>& refs) {
    auto fetch = [&](const std::string& name, const Shape& shape) -> const Tensor<float>& {
        auto it = data.tensors.find(name);
        if (it == data.tensors.end()) throw IoError("checkpoint is missing tensor " + name);
        if (it->second.shape() != shape)
            throw ShapeError("checkpoint tensor " + name + " has shape " + shape_str(it->second.shape()) + ", expected " +
                             shape_str(shape));
        return it->second;
    };
    for (auto& e : refs.params) e.var->mutable_value() = fetch(e.name, e.var->shape()).template cast<T>();
    for (auto& b : refs.buffers) *b.tensor = fetch(b.name, b.tensor->shape()).template cast<T>();
}

template <typename T>
void save_model(const std::string& path, CoordFillModel<T>& model, const json& extra = json::object()) {
    ParamRefs<T> refs;
    model.collect("model", refs);
    json cfg = extra;
    cfg["model"] = to_json(model.config());
    save_checkpoint(path, cfg, refs);
}

template <typename T>
CoordFillModel<T> load_model(const std::string& path) {
    CheckpointData data = read_checkpoint(path);
    if (!data.config.contains("model")) throw IoError("checkpoint has no model config: " + path);
    Rng rng(0);
    CoordFillModel<T> model(model_config_from_json(data.config.at("model")), rng);
    ParamRefs<T> refs;
    model.collect("model", refs);
    assign_tensors(data, refs);
    return model;
}

}  // namespace coordfill
