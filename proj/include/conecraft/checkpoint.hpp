#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "conecraft/common.hpp"
#include "conecraft/tensor.hpp"

namespace conecraft::netkit {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

/// Checkpoint directory layout: `manifest.json` describing the model plus one
/// raw float64 row-major `.bin` per named tensor. Round trips are bit-exact.

inline void write_tensor_bin(const std::filesystem::path& path, const tensorkit::Tensor& t) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open for writing: " + path.string());
    f.write(reinterpret_cast<const char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(double)));
    if (!f) throw Error("short write: " + path.string());
}

inline tensorkit::Tensor read_tensor_bin(const std::filesystem::path& path,
                                         const std::vector<std::size_t>& shape) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw CheckpointCorrupt("missing tensor file: " + path.string());
    tensorkit::Tensor t = tensorkit::Tensor::zeros(shape);
    f.read(reinterpret_cast<char*>(t.data.data()),
           static_cast<std::streamsize>(t.data.size() * sizeof(double)));
    if (f.gcount() != static_cast<std::streamsize>(t.data.size() * sizeof(double))) {
        throw CheckpointCorrupt("tensor file truncated: " + path.string());
    }
    char extra;
    if (f.read(&extra, 1)) throw CheckpointCorrupt("tensor file larger than manifest shape: " + path.string());
    return t;
}

class CheckpointWriter {
public:
    explicit CheckpointWriter(std::filesystem::path dir) : dir_(std::move(dir)) {
        std::filesystem::create_directories(dir_);
        manifest_["format"] = "conecraft-checkpoint";
        manifest_["version"] = 1;
        manifest_["tensors"] = nlohmann::json::array();
    }

    void add_tensor(const std::string& name, const tensorkit::Tensor& t) {
        const std::string file = name + ".bin";
        write_tensor_bin(dir_ / file, t);
        manifest_["tensors"].push_back({{"name", name}, {"shape", t.shape}, {"file", file}});
    }

    nlohmann::json& manifest() { return manifest_; }

    void finish() const {
        std::ofstream f(dir_ / "manifest.json");
        if (!f) throw Error("cannot write manifest in " + dir_.string());
        f << manifest_.dump(2) << '\n';
    }

    const std::filesystem::path& dir() const { return dir_; }

private:
    std::filesystem::path dir_;
    nlohmann::json manifest_;
};

class CheckpointReader {
public:
    explicit CheckpointReader(std::filesystem::path dir) : dir_(std::move(dir)) {
        std::ifstream f(dir_ / "manifest.json");
        if (!f) throw CheckpointCorrupt("missing manifest.json in " + dir_.string());
        try {
            f >> manifest_;
        } catch (const nlohmann::json::exception& e) {
            throw CheckpointCorrupt("manifest.json: " + std::string(e.what()));
        }
        if (manifest_.value("format", "") != "conecraft-checkpoint") {
            throw CheckpointCorrupt("not a conecraft checkpoint: " + dir_.string());
        }
    }

    const nlohmann::json& manifest() const { return manifest_; }

    tensorkit::Tensor tensor(const std::string& name) const {
        for (const auto& e : manifest_.at("tensors")) {
            if (e.at("name") == name) {
                return read_tensor_bin(dir_ / e.at("file").get<std::string>(),
                                       e.at("shape").get<std::vector<std::size_t>>());
            }
        }
        throw CheckpointCorrupt("tensor not in manifest: " + name);
    }

    const std::filesystem::path& dir() const { return dir_; }

private:
    std::filesystem::path dir_;
    nlohmann::json manifest_;
};

}  // namespace conecraft::netkit
