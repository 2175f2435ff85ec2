#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <map>
#include <string>

#include <json.hpp>

#include "aef/adam.hpp"
#include "aef/tensor.hpp"

namespace aef {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

inline constexpr const char* kCheckpointVersion = "aefdiff-ckpt-v1";

template <class T>
constexpr const char* dtype_name() {
    if constexpr (std::is_same_v<T, float>) return "f32";
    else return "f64";
}

// Container layout: [u32 manifest length][manifest JSON][raw buffers].
// The manifest maps tensor name -> shape/dtype/byte offset (relative to the
// payload that follows the manifest); buffers are raw little-endian scalars.
template <class T>
void save_checkpoint(const std::string& path, const ParamSet<T>& params,
                     const std::map<std::string, std::string>& meta = {}) {
    nlohmann::json manifest;
    manifest["version"] = kCheckpointVersion;
    for (const auto& [k, v] : meta) manifest["meta"][k] = v;
    uint64_t offset = 0;
    auto tensors = nlohmann::json::array();
    for (const auto& [name, t] : params.items) {
        nlohmann::json e;
        e["name"] = name;
        e["shape"] = t.shape();
        e["dtype"] = dtype_name<T>();
        e["offset"] = offset;
        e["bytes"] = uint64_t(t.size()) * sizeof(T);
        tensors.push_back(e);
        offset += uint64_t(t.size()) * sizeof(T);
    }
    manifest["tensors"] = tensors;
    const std::string mjson = manifest.dump();

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("save_checkpoint: cannot open " + path);
    const uint32_t mlen = uint32_t(mjson.size());
    f.write(reinterpret_cast<const char*>(&mlen), 4);
    f.write(mjson.data(), std::streamsize(mjson.size()));
    for (const auto& [name, t] : params.items)
        f.write(reinterpret_cast<const char*>(t.data().data()), std::streamsize(t.size() * sizeof(T)));
    if (!f) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

// Loads into an existing ParamSet; every registered parameter must be present
// with a matching shape and dtype. Returns the manifest meta block.
template <class T>
std::map<std::string, std::string> load_checkpoint(const std::string& path, ParamSet<T>& params) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("load_checkpoint: cannot open " + path);
    uint32_t mlen = 0;
    f.read(reinterpret_cast<char*>(&mlen), 4);
    std::string mjson(mlen, '\0');
    f.read(mjson.data(), mlen);
    if (!f) throw std::runtime_error("load_checkpoint: truncated manifest in " + path);
    const auto manifest = nlohmann::json::parse(mjson);
    if (manifest.value("version", "") != kCheckpointVersion)
        throw std::runtime_error("load_checkpoint: unsupported version '" +
                                 manifest.value("version", std::string("<missing>")) + "' in " + path);

    std::map<std::string, nlohmann::json> index;
    for (const auto& e : manifest["tensors"]) index[e["name"].get<std::string>()] = e;
    const std::streampos payload = f.tellg();

    for (auto& [name, t] : params.items) {
        auto it = index.find(name);
        if (it == index.end())
            throw std::runtime_error("load_checkpoint: tensor '" + name + "' missing from " + path);
        const auto& e = it->second;
        if (e["dtype"].template get<std::string>() != dtype_name<T>())
            throw std::runtime_error("load_checkpoint: dtype mismatch for '" + name + "'");
        if (e["shape"].template get<Shape>() != t.shape())
            throw std::runtime_error("load_checkpoint: shape mismatch for '" + name + "': file " +
                                     shape_str(e["shape"].template get<Shape>()) + " vs model " + shape_str(t.shape()));
        f.seekg(payload + std::streampos(e["offset"].template get<uint64_t>()));
        f.read(reinterpret_cast<char*>(t.data().data()), std::streamsize(t.size() * sizeof(T)));
        if (!f) throw std::runtime_error("load_checkpoint: truncated payload for '" + name + "'");
    }

    std::map<std::string, std::string> meta;
    if (manifest.contains("meta"))
        for (const auto& [k, v] : manifest["meta"].items()) meta[k] = v.template get<std::string>();
    return meta;
}

}  // namespace aef
