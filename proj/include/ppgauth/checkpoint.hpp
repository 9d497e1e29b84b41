#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ppgauth/hybrid_model.hpp"

namespace ppgauth {

// Layout: the 8 bytes "PPGACKPT", a little-endian uint32 header length, a
// JSON header (format version, model config, class count, seed, class ids,
// blob table), then the blobs as little-endian float32 in table order.
// Trainable parameters come first (registration order), followed by the
// running mean and variance of every batch-norm layer.
struct Checkpoint {
  HybridModel<float> model;
  std::uint64_t seed = 0;
  std::vector<std::string> class_ids;  // subject id per label, may be empty
};

std::string serialize_checkpoint(const HybridModel<float>& model, std::uint64_t seed,
                                 const std::vector<std::string>& class_ids = {});
Checkpoint deserialize_checkpoint(const std::string& bytes, const std::string& origin = "<memory>");

void save_checkpoint(const std::filesystem::path& path, const HybridModel<float>& model, std::uint64_t seed,
                     const std::vector<std::string>& class_ids = {});
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace ppgauth
