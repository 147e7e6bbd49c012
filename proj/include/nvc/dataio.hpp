// Frame and mask ingestion, preprocessing, and export.
//
// Sources are lossless only:
//   - a directory of binary portable pixmaps (P6, 8-bit), frames ordered by
//     file name;
//   - a raw planar file next to a key-value manifest (width/height/frames/
//     channels/data), bytes laid out exactly as the (T,C,H,W) tensor;
//   - masks as binary portable graymaps (P5) holding only 0 or 255.
//
// Tensors carry raw {0..255} values as floats; masks become {0,1} floats.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nvc/tensor.hpp"

namespace nvc {

// --- frame/mask file IO ----------------------------------------------------

// Loads a source by path: a directory is read as sorted *.ppm frames, a
// regular file as a raw-planar manifest.  Zero frames is valid.
Tensor<float> load_frames(const std::string& path);
Tensor<float> load_frames_ppm_dir(const std::string& dir);
Tensor<float> load_frames_raw(const std::string& manifest_path);

// Writes (T,C,H,W) float frames as frame_000000.ppm … with values clamped
// to [0,255] and rounded to nearest (the export contract).  C must be 3.
void write_frames_ppm_dir(const std::string& dir, const Tensor<float>& frames);

// Writes the raw-planar form: <path> (bytes, clamped/rounded) plus
// <path>.manifest describing it.  Any channel count.
void write_frames_raw(const std::string& path, const Tensor<float>& frames);

// Sorted *.pgm files in a directory -> (T,1,H,W) tensor of {0,1}.  Every
// pixel must be exactly 0 or 255; anything else is an error (no silent
// thresholding).  Frame count and dimensions must match the given geometry.
Tensor<float> load_masks(const std::string& dir, int t, int h, int w);

// Writes (T,1,H,W) {0,1} masks as P5 files holding {0,255}.
void write_masks_pgm_dir(const std::string& dir, const Tensor<float>& masks);

// --- preprocessing ----------------------------------------------------------

enum class CropMode { kNone, kCenter, kRandom };

struct PreprocessConfig {
  CropMode crop = CropMode::kCenter;
  int crop_size = 160;           // must be divisible by 8
  int chunk_t = 8;               // frames per chunk; trailing remainder dropped
  int downscale_shortest = 0;    // 0 = no downscale; else bilinear to this
  uint64_t seed = 1;             // random-crop reproducibility
};

// Bilinear resize with half-pixel centers, each frame and channel
// independently.  Exposed for direct testing.
Tensor<float> resize_bilinear(const Tensor<float>& frames, int out_h, int out_w);

// Nearest-neighbour resize (used for masks: keeps values binary).
Tensor<float> resize_nearest(const Tensor<float>& frames, int out_h, int out_w);

// Optional downscale so the shortest side equals the target (other side
// rounded to nearest), then one crop box chosen per call (shared by all
// frames), then a split into full chunk_t-frame chunks.
std::vector<Tensor<float>> preprocess(const Tensor<float>& frames, const PreprocessConfig& cfg);

// Same geometry applied to frames and their aligned masks: identical crop
// box and chunk boundaries; masks are resized nearest-neighbour.
struct PreprocessedPair {
  std::vector<Tensor<float>> frames;
  std::vector<Tensor<float>> masks;
};
PreprocessedPair preprocess_with_masks(const Tensor<float>& frames, const Tensor<float>& masks,
                                       const PreprocessConfig& cfg);

// Channel-wise concatenation of aligned sources: N tensors of (T,C_i,H,W)
// -> (T, sum C_i, H, W), channel order = source order.
Tensor<float> stack_modalities(const std::vector<Tensor<float>>& sources);

}  // namespace nvc
