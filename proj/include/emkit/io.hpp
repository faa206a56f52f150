// Copyright (C) 2026 emkit project
// SPDX-License-Identifier: Apache-2.0
//
// Flat binary tensor files with a JSON sidecar. Layout contract: row-major
// element order, little-endian IEEE-754, dtype "float32" or "float64". The
// sidecar <base>.json carries {"shape", "dtype", "order", and optional
// "names"} so files are self-describing.

#pragma once

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "emkit/tensor.hpp"

namespace emkit::io {

using json = nlohmann::json;

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline void require_little_endian() {
    const uint16_t probe = 1;
    uint8_t low = 0;
    std::memcpy(&low, &probe, 1);
    if (low != 1) throw IoError("tensor files are little-endian; big-endian hosts unsupported");
}

template <class T>
constexpr const char* dtype_of() {
    if constexpr (std::is_same_v<T, float>) return "float32";
    else if constexpr (std::is_same_v<T, double>) return "float64";
    else static_assert(sizeof(T) == 0, "unsupported scalar type");
}

inline std::string strip_bin_suffix(const std::string& path) {
    if (path.size() > 4 && path.compare(path.size() - 4, 4, ".bin") == 0)
        return path.substr(0, path.size() - 4);
    return path;
}

// Writes <base>.bin + <base>.json. dtype defaults to the scalar type of the
// tensor; passing "float32" for a double tensor narrows each value once.
template <class T>
void write_tensor(const std::string& path, const Tensor<T>& t, std::string dtype = "",
                  const std::vector<std::string>& names = {}) {
    require_little_endian();
    if (dtype.empty()) dtype = dtype_of<T>();
    if (dtype != "float32" && dtype != "float64")
        throw IoError("unsupported dtype '" + dtype + "' (float32|float64)");

    const std::string base = strip_bin_suffix(path);
    std::ofstream bin(base + ".bin", std::ios::binary | std::ios::trunc);
    if (!bin) throw IoError("cannot open for write: " + base + ".bin");
    if (dtype == "float32") {
        std::vector<float> buf(static_cast<size_t>(t.numel()));
        for (int64_t i = 0; i < t.numel(); ++i) buf[static_cast<size_t>(i)] = static_cast<float>(t[i]);
        bin.write(reinterpret_cast<const char*>(buf.data()),
                  static_cast<std::streamsize>(buf.size() * sizeof(float)));
    } else {
        std::vector<double> buf(static_cast<size_t>(t.numel()));
        for (int64_t i = 0; i < t.numel(); ++i) buf[static_cast<size_t>(i)] = static_cast<double>(t[i]);
        bin.write(reinterpret_cast<const char*>(buf.data()),
                  static_cast<std::streamsize>(buf.size() * sizeof(double)));
    }
    if (!bin) throw IoError("short write: " + base + ".bin");

    json side;
    side["shape"] = t.shape();
    side["dtype"] = dtype;
    side["order"] = "row-major";
    if (!names.empty()) side["names"] = names;
    std::ofstream js(base + ".json", std::ios::trunc);
    if (!js) throw IoError("cannot open for write: " + base + ".json");
    js << side.dump(2) << "\n";
}

template <class T>
Tensor<T> read_tensor(const std::string& path) {
    require_little_endian();
    const std::string base = strip_bin_suffix(path);
    std::ifstream js(base + ".json");
    if (!js) throw IoError("missing sidecar: " + base + ".json");
    json side = json::parse(js, nullptr, true);
    const Shape shape = side.at("shape").get<Shape>();
    const std::string dtype = side.at("dtype").get<std::string>();
    if (dtype != "float32" && dtype != "float64")
        throw IoError("unsupported dtype '" + dtype + "' in " + base + ".json");

    const int64_t n = shape_numel(shape);
    const size_t elem = dtype == "float32" ? sizeof(float) : sizeof(double);
    std::ifstream bin(base + ".bin", std::ios::binary);
    if (!bin) throw IoError("missing tensor data: " + base + ".bin");
    bin.seekg(0, std::ios::end);
    const auto bytes = static_cast<uint64_t>(bin.tellg());
    if (bytes != static_cast<uint64_t>(n) * elem)
        throw IoError(base + ".bin holds " + std::to_string(bytes) + " bytes, sidecar shape " +
                      shape_str(shape) + " expects " + std::to_string(n * static_cast<int64_t>(elem)));
    bin.seekg(0);

    Tensor<T> out(shape);
    if (dtype == "float32") {
        std::vector<float> buf(static_cast<size_t>(n));
        bin.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n * elem));
        for (int64_t i = 0; i < n; ++i) out[i] = static_cast<T>(buf[static_cast<size_t>(i)]);
    } else {
        std::vector<double> buf(static_cast<size_t>(n));
        bin.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n * elem));
        for (int64_t i = 0; i < n; ++i) out[i] = static_cast<T>(buf[static_cast<size_t>(i)]);
    }
    if (!bin) throw IoError("short read: " + base + ".bin");
    return out;
}

inline void write_json(const std::string& path, const json& j) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open for write: " + path);
    out << j.dump(2) << "\n";
}

inline json read_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open: " + path);
    return json::parse(in);
}

}  // namespace emkit::io
