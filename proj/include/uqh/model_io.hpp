#pragma once

#include <filesystem>
#include <string>

#include "uqh/heads.hpp"

namespace uqh {

// Single-file model layout, all little-endian:
//   "UQHEADv1" | head kind u8 (0 dnn, 1 bnn, 2 sngp)
//   | input_dim u64 | hidden u64 | rff_dim u64 | spectral_bound f64 | ridge f64
//   | mean_field_lambda f64 | k_samples u64 | prior_std f64 | power_iters u64
//   | training seed u64 | tensor count u32
//   | per tensor: name length u32, name bytes, rank u32, dims u64 x rank,
//     values f64 x prod(dims)
std::string serialize_model(const Model& model);
Model deserialize_model(std::string_view bytes);

void save_model(const std::filesystem::path& path, const Model& model);
Model load_model(const std::filesystem::path& path);

}  // namespace uqh
