// Checkpoint serialization: a text manifest (names, shapes, byte offsets,
// config echo, step, digest) next to a flat little-endian float32 data file
// at <path>.data.  The model hash embedded in bitstreams is the first 8
// bytes of the SHA-256 digest of that data file, so a freshly constructed
// model and a saved/loaded one agree by construction.
#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "nvc/model.hpp"

namespace nvc {

// SHA-256 over the flat parameter+buffer bytes in store order.
std::array<uint8_t, 32> checkpoint_digest(const ParamStore<float>& ps);

// First 8 digest bytes; embedded in containers and checked on decode.
std::array<uint8_t, 8> model_hash(const ParamStore<float>& ps);

void save_checkpoint(const std::string& path, const Model& m, int64_t step);

// Reconstructs the model from the manifest's config echo, fills parameters
// and buffers from <path>.data, and verifies the stored digest.
struct LoadedCheckpoint {
  Model model;
  int64_t step = 0;
};
LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace nvc
