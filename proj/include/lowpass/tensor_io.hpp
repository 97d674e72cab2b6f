#pragma once

#include <filesystem>
#include <stdexcept>

#include "lowpass/tensor.hpp"

namespace lowpass {

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Sidecar path for a payload file: "<payload>.json".
std::filesystem::path sidecar_path(const std::filesystem::path& payload);

/// Writes the raw little-endian float64 payload and its JSON sidecar
/// {"shape":[...],"order":"row-major","dtype":"float64"}.
void save_tensor(const std::filesystem::path& payload, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& payload);

}  // namespace lowpass
