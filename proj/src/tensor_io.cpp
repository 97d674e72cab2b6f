#include "lowpass/tensor_io.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>

#include <json.hpp>

namespace lowpass {

namespace {

std::uint64_t to_little(std::uint64_t v) {
    if constexpr (std::endian::native == std::endian::big) {
        std::uint64_t r = 0;
        for (int i = 0; i < 8; ++i) r |= ((v >> (8 * i)) & 0xffu) << (8 * (7 - i));
        return r;
    }
    return v;
}

}  // namespace

std::filesystem::path sidecar_path(const std::filesystem::path& payload) {
    auto p = payload;
    p += ".json";
    return p;
}

void save_tensor(const std::filesystem::path& payload, const Tensor& t) {
    std::ofstream bin(payload, std::ios::binary);
    if (!bin) throw IoError("cannot open " + payload.string() + " for writing");
    for (double v : t.data()) {
        const auto bits = to_little(std::bit_cast<std::uint64_t>(v));
        char bytes[8];
        std::memcpy(bytes, &bits, 8);
        bin.write(bytes, 8);
    }
    if (!bin) throw IoError("write failed for " + payload.string());

    nlohmann::json meta;
    meta["shape"] = t.shape();
    meta["order"] = "row-major";
    meta["dtype"] = "float64";
    meta["endian"] = "little";
    std::ofstream js(sidecar_path(payload));
    if (!js) throw IoError("cannot open " + sidecar_path(payload).string() + " for writing");
    js << meta.dump() << '\n';
}

Tensor load_tensor(const std::filesystem::path& payload) {
    std::ifstream js(sidecar_path(payload));
    if (!js) throw IoError("missing sidecar " + sidecar_path(payload).string());
    nlohmann::json meta;
    try {
        js >> meta;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("malformed sidecar " + sidecar_path(payload).string() + ": " + e.what());
    }
    if (!meta.contains("shape") || !meta["shape"].is_array()) {
        throw IoError("sidecar " + sidecar_path(payload).string() + " lacks a shape array");
    }
    if (meta.value("order", "row-major") != "row-major") {
        throw IoError("unsupported order in " + sidecar_path(payload).string());
    }
    if (meta.value("dtype", "float64") != "float64" || meta.value("endian", "little") != "little") {
        throw IoError("unsupported dtype or endian in " + sidecar_path(payload).string());
    }
    const auto shape = meta["shape"].get<Shape>();

    std::ifstream bin(payload, std::ios::binary);
    if (!bin) throw IoError("cannot open " + payload.string());
    const std::size_t n = numel(shape);
    std::vector<double> data(n);
    for (std::size_t i = 0; i < n; ++i) {
        char bytes[8];
        if (!bin.read(bytes, 8)) {
            throw IoError(payload.string() + ": payload holds fewer than " + std::to_string(n) + " values");
        }
        std::uint64_t bits = 0;
        std::memcpy(&bits, bytes, 8);
        data[i] = std::bit_cast<double>(to_little(bits));
    }
    if (bin.peek() != std::char_traits<char>::eof()) {
        throw IoError(payload.string() + ": payload holds more than " + std::to_string(n) + " values");
    }
    try {
        return Tensor(shape, std::move(data));
    } catch (const std::exception& e) {
        throw IoError(payload.string() + ": " + e.what());
    }
}

}  // namespace lowpass
