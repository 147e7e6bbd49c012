#include "nvc/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

namespace nvc {
namespace {

namespace fs = std::filesystem;

std::vector<uint8_t> read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  NVC_CHECK(f.good(), strcat_("cannot open file: ", path));
  return std::vector<uint8_t>((std::istreambuf_iterator<char>(f)),
                              std::istreambuf_iterator<char>());
}

void write_file(const std::string& path, const uint8_t* data, size_t n) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  NVC_CHECK(f.good(), strcat_("cannot open file for writing: ", path));
  f.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n));
  NVC_CHECK(f.good(), strcat_("failed writing file: ", path));
}

// Parses a PNM header token stream: tokens separated by whitespace, with
// '#' comments running to end of line.  Returns the offset of the first
// raster byte (exactly one whitespace byte after the maxval token).
struct PnmHeader {
  std::string magic;
  int width = 0, height = 0, maxval = 0;
  size_t raster_at = 0;
};

PnmHeader parse_pnm_header(const std::vector<uint8_t>& bytes, const std::string& path) {
  PnmHeader h;
  size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto token = [&]() -> std::string {
    skip_space();
    size_t start = pos;
    while (pos < bytes.size() && !std::isspace(bytes[pos]) && bytes[pos] != '#') ++pos;
    NVC_CHECK(pos > start, strcat_("truncated header in ", path));
    return std::string(bytes.begin() + static_cast<long>(start),
                       bytes.begin() + static_cast<long>(pos));
  };
  auto int_token = [&](const char* what) {
    std::string s = token();
    for (char c : s)
      NVC_CHECK(std::isdigit(static_cast<unsigned char>(c)),
                strcat_("bad ", what, " in ", path, ": '", s, "'"));
    return std::stoi(s);
  };
  h.magic = token();
  h.width = int_token("width");
  h.height = int_token("height");
  h.maxval = int_token("maxval");
  NVC_CHECK(pos < bytes.size() && std::isspace(bytes[pos]),
            strcat_("missing raster separator in ", path));
  h.raster_at = pos + 1;
  NVC_CHECK(h.width >= 1 && h.height >= 1, strcat_("degenerate dimensions in ", path));
  NVC_CHECK(h.maxval == 255, strcat_(path, ": only 8-bit (maxval 255) files are supported"));
  return h;
}

// Reads one P6/P5 file into planar floats at frames[t]; expects `channels`
// (3 for P6, 1 for P5) and, when h/w are nonzero, those exact dimensions.
void read_pnm_into(const std::string& path, const char* magic, int channels, int* h, int* w,
                   float* dst) {
  std::vector<uint8_t> bytes = read_file(path);
  PnmHeader hd = parse_pnm_header(bytes, path);
  NVC_CHECK(hd.magic == magic, strcat_(path, ": expected ", magic, " file, got '", hd.magic, "'"));
  if (*h == 0 && *w == 0) {
    *h = hd.height;
    *w = hd.width;
  }
  NVC_CHECK(hd.height == *h && hd.width == *w,
            strcat_(path, ": frame is ", hd.width, "x", hd.height, " but the sequence is ", *w,
                    "x", *h));
  const size_t need = static_cast<size_t>(hd.width) * hd.height * channels;
  NVC_CHECK(bytes.size() - hd.raster_at == need,
            strcat_(path, ": raster has ", bytes.size() - hd.raster_at, " bytes, expected ",
                    need));
  const uint8_t* src = bytes.data() + hd.raster_at;
  const int64_t hw = static_cast<int64_t>(*h) * *w;
  for (int64_t i = 0; i < hw; ++i)
    for (int c = 0; c < channels; ++c)
      dst[c * hw + i] = static_cast<float>(src[i * channels + c]);
}

std::vector<std::string> sorted_files(const std::string& dir, const std::string& ext) {
  NVC_CHECK(fs::is_directory(dir), strcat_("not a directory: ", dir));
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ext) names.push_back(e.path().string());
  std::sort(names.begin(), names.end());
  return names;
}

uint8_t export_byte(float v) {
  float r = std::nearbyint(std::min(255.0f, std::max(0.0f, v)));
  return static_cast<uint8_t>(r);
}

std::map<std::string, std::string> read_manifest(const std::string& path) {
  std::ifstream f(path);
  NVC_CHECK(f.good(), strcat_("cannot open manifest: ", path));
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string k, v;
    ls >> k >> v;
    NVC_CHECK(!k.empty() && !v.empty(), strcat_("malformed manifest line in ", path, ": ", line));
    kv[k] = v;
  }
  return kv;
}

int manifest_int(const std::map<std::string, std::string>& kv, const char* key,
                 const std::string& path) {
  auto it = kv.find(key);
  NVC_CHECK(it != kv.end(), strcat_("manifest ", path, " is missing key: ", key));
  return std::stoi(it->second);
}

}  // namespace

// --- frame/mask file IO ----------------------------------------------------

Tensor<float> load_frames_ppm_dir(const std::string& dir) {
  std::vector<std::string> files = sorted_files(dir, ".ppm");
  if (files.empty()) return Tensor<float>(Shape{0, 3, 0, 0});
  int h = 0, w = 0;
  // First frame pins the dimensions.
  {
    std::vector<uint8_t> bytes = read_file(files[0]);
    PnmHeader hd = parse_pnm_header(bytes, files[0]);
    h = hd.height;
    w = hd.width;
  }
  Tensor<float> out(Shape{static_cast<int>(files.size()), 3, h, w});
  const int64_t frame_n = 3LL * h * w;
  for (size_t t = 0; t < files.size(); ++t)
    read_pnm_into(files[t], "P6", 3, &h, &w, out.data() + static_cast<int64_t>(t) * frame_n);
  return out;
}

Tensor<float> load_frames_raw(const std::string& manifest_path) {
  std::map<std::string, std::string> kv = read_manifest(manifest_path);
  const int w = manifest_int(kv, "width", manifest_path);
  const int h = manifest_int(kv, "height", manifest_path);
  const int t = manifest_int(kv, "frames", manifest_path);
  const int c = manifest_int(kv, "channels", manifest_path);
  NVC_CHECK(w >= 1 && h >= 1 && c >= 1 && t >= 0,
            strcat_("bad geometry in manifest: ", manifest_path));
  auto it = kv.find("data");
  NVC_CHECK(it != kv.end(), strcat_("manifest ", manifest_path, " is missing key: data"));
  std::string data_path = (fs::path(manifest_path).parent_path() / it->second).string();

  std::vector<uint8_t> bytes = read_file(data_path);
  Tensor<float> out(Shape{t, c, h, w});
  NVC_CHECK(static_cast<int64_t>(bytes.size()) == out.numel(),
            strcat_(data_path, ": has ", bytes.size(), " bytes, manifest implies ", out.numel()));
  for (int64_t i = 0; i < out.numel(); ++i) out.data()[i] = static_cast<float>(bytes[i]);
  return out;
}

Tensor<float> load_frames(const std::string& path) {
  if (fs::is_directory(path)) return load_frames_ppm_dir(path);
  return load_frames_raw(path);
}

void write_frames_ppm_dir(const std::string& dir, const Tensor<float>& frames) {
  const Shape& s = frames.shape();
  NVC_CHECK(s.rank == 4 && s[1] == 3, "pixmap export needs (T,3,H,W) frames");
  fs::create_directories(dir);
  const int h = s[2], w = s[3];
  const int64_t hw = static_cast<int64_t>(h) * w;
  std::string header = strcat_("P6\n", w, " ", h, "\n255\n");
  std::vector<uint8_t> bytes(header.begin(), header.end());
  bytes.resize(header.size() + static_cast<size_t>(hw) * 3);
  for (int t = 0; t < s[0]; ++t) {
    const float* f = frames.data() + t * 3 * hw;
    uint8_t* raster = bytes.data() + header.size();
    for (int64_t i = 0; i < hw; ++i)
      for (int c = 0; c < 3; ++c) raster[i * 3 + c] = export_byte(f[c * hw + i]);
    char name[32];
    std::snprintf(name, sizeof(name), "frame_%06d.ppm", t);
    write_file((fs::path(dir) / name).string(), bytes.data(), bytes.size());
  }
}

void write_frames_raw(const std::string& path, const Tensor<float>& frames) {
  const Shape& s = frames.shape();
  NVC_CHECK(s.rank == 4, "raw export needs (T,C,H,W) frames");
  std::vector<uint8_t> bytes(static_cast<size_t>(frames.numel()));
  for (int64_t i = 0; i < frames.numel(); ++i) bytes[static_cast<size_t>(i)] = export_byte(frames.data()[i]);
  write_file(path, bytes.data(), bytes.size());

  std::ostringstream man;
  man << "width " << s[3] << "\nheight " << s[2] << "\nframes " << s[0] << "\nchannels " << s[1]
      << "\ndata " << fs::path(path).filename().string() << "\n";
  std::string text = man.str();
  write_file(path + ".manifest", reinterpret_cast<const uint8_t*>(text.data()), text.size());
}

Tensor<float> load_masks(const std::string& dir, int t, int h, int w) {
  std::vector<std::string> files = sorted_files(dir, ".pgm");
  NVC_CHECK(static_cast<int>(files.size()) == t,
            strcat_("mask directory ", dir, " has ", files.size(), " frames, expected ", t));
  Tensor<float> out(Shape{t, 1, h, w});
  int hh = h, ww = w;
  const int64_t hw = static_cast<int64_t>(h) * w;
  for (int i = 0; i < t; ++i) {
    float* dst = out.data() + i * hw;
    read_pnm_into(files[static_cast<size_t>(i)], "P5", 1, &hh, &ww, dst);
    for (int64_t j = 0; j < hw; ++j) {
      NVC_CHECK(dst[j] == 0.0f || dst[j] == 255.0f,
                strcat_(files[static_cast<size_t>(i)], ": mask pixel ", j, " is ", dst[j],
                        ", masks must hold only 0 or 255"));
      dst[j] = dst[j] == 255.0f ? 1.0f : 0.0f;
    }
  }
  return out;
}

void write_masks_pgm_dir(const std::string& dir, const Tensor<float>& masks) {
  const Shape& s = masks.shape();
  NVC_CHECK(s.rank == 4 && s[1] == 1, "mask export needs (T,1,H,W)");
  fs::create_directories(dir);
  const int h = s[2], w = s[3];
  const int64_t hw = static_cast<int64_t>(h) * w;
  std::string header = strcat_("P5\n", w, " ", h, "\n255\n");
  std::vector<uint8_t> bytes(header.begin(), header.end());
  bytes.resize(header.size() + static_cast<size_t>(hw));
  for (int t = 0; t < s[0]; ++t) {
    const float* f = masks.data() + t * hw;
    for (int64_t i = 0; i < hw; ++i) {
      NVC_CHECK(f[i] == 0.0f || f[i] == 1.0f, "mask export needs {0,1} values");
      bytes[header.size() + static_cast<size_t>(i)] = f[i] == 1.0f ? 255 : 0;
    }
    char name[32];
    std::snprintf(name, sizeof(name), "mask_%06d.pgm", t);
    write_file((fs::path(dir) / name).string(), bytes.data(), bytes.size());
  }
}

// --- preprocessing ----------------------------------------------------------

Tensor<float> resize_bilinear(const Tensor<float>& frames, int out_h, int out_w) {
  const Shape& s = frames.shape();
  NVC_CHECK(s.rank == 4 && out_h >= 1 && out_w >= 1, "resize: bad arguments");
  Tensor<float> out(Shape{s[0], s[1], out_h, out_w});
  const double sy = static_cast<double>(s[2]) / out_h;
  const double sx = static_cast<double>(s[3]) / out_w;
  for (int t = 0; t < s[0]; ++t)
    for (int c = 0; c < s[1]; ++c) {
      const float* src = frames.data() + (static_cast<int64_t>(t) * s[1] + c) * s[2] * s[3];
      float* dst = out.data() + (static_cast<int64_t>(t) * s[1] + c) * out_h * out_w;
      for (int i = 0; i < out_h; ++i) {
        double fy = (i + 0.5) * sy - 0.5;
        int y0 = static_cast<int>(std::floor(fy));
        double wy = fy - y0;
        int ya = std::min(std::max(y0, 0), s[2] - 1);
        int yb = std::min(std::max(y0 + 1, 0), s[2] - 1);
        for (int j = 0; j < out_w; ++j) {
          double fx = (j + 0.5) * sx - 0.5;
          int x0 = static_cast<int>(std::floor(fx));
          double wx = fx - x0;
          int xa = std::min(std::max(x0, 0), s[3] - 1);
          int xb = std::min(std::max(x0 + 1, 0), s[3] - 1);
          double top = src[ya * s[3] + xa] * (1.0 - wx) + src[ya * s[3] + xb] * wx;
          double bot = src[yb * s[3] + xa] * (1.0 - wx) + src[yb * s[3] + xb] * wx;
          dst[i * out_w + j] = static_cast<float>(top * (1.0 - wy) + bot * wy);
        }
      }
    }
  return out;
}

Tensor<float> resize_nearest(const Tensor<float>& frames, int out_h, int out_w) {
  const Shape& s = frames.shape();
  NVC_CHECK(s.rank == 4 && out_h >= 1 && out_w >= 1, "resize: bad arguments");
  Tensor<float> out(Shape{s[0], s[1], out_h, out_w});
  const double sy = static_cast<double>(s[2]) / out_h;
  const double sx = static_cast<double>(s[3]) / out_w;
  for (int t = 0; t < s[0]; ++t)
    for (int c = 0; c < s[1]; ++c) {
      const float* src = frames.data() + (static_cast<int64_t>(t) * s[1] + c) * s[2] * s[3];
      float* dst = out.data() + (static_cast<int64_t>(t) * s[1] + c) * out_h * out_w;
      for (int i = 0; i < out_h; ++i) {
        int y = std::min(static_cast<int>((i + 0.5) * sy), s[2] - 1);
        for (int j = 0; j < out_w; ++j) {
          int x = std::min(static_cast<int>((j + 0.5) * sx), s[3] - 1);
          dst[i * out_w + j] = src[y * s[3] + x];
        }
      }
    }
  return out;
}

namespace {

struct Geometry {
  int scaled_h = 0, scaled_w = 0;  // post-downscale size (== input if none)
  int y0 = 0, x0 = 0;              // crop origin
  int crop_h = 0, crop_w = 0;      // crop extent (== scaled if no crop)
};

Geometry plan_geometry(const Shape& s, const PreprocessConfig& cfg) {
  NVC_CHECK(s.rank == 4, "preprocess: frames must be (T,C,H,W)");
  NVC_CHECK(cfg.chunk_t >= 1, "preprocess: chunk length must be positive");
  Geometry g;
  g.scaled_h = s[2];
  g.scaled_w = s[3];
  if (cfg.downscale_shortest > 0 && s[0] > 0) {
    NVC_CHECK(s[2] >= 1 && s[3] >= 1, "preprocess: empty frames cannot be downscaled");
    const int shortest = std::min(s[2], s[3]);
    NVC_CHECK(cfg.downscale_shortest <= shortest,
              "preprocess: downscale target exceeds the shortest side (upscaling unsupported)");
    const double f = static_cast<double>(cfg.downscale_shortest) / shortest;
    g.scaled_h = s[2] == shortest ? cfg.downscale_shortest
                                  : static_cast<int>(std::lround(s[2] * f));
    g.scaled_w = s[3] == shortest ? cfg.downscale_shortest
                                  : static_cast<int>(std::lround(s[3] * f));
  }
  if (cfg.crop == CropMode::kNone) {
    g.crop_h = g.scaled_h;
    g.crop_w = g.scaled_w;
    return g;
  }
  NVC_CHECK(cfg.crop_size >= 1 && cfg.crop_size % 8 == 0,
            "preprocess: crop size must be a positive multiple of 8");
  NVC_CHECK(g.scaled_h >= cfg.crop_size && g.scaled_w >= cfg.crop_size,
            strcat_("preprocess: frames are ", g.scaled_w, "x", g.scaled_h,
                    " after downscale, smaller than the ", cfg.crop_size, " crop"));
  g.crop_h = g.crop_w = cfg.crop_size;
  if (cfg.crop == CropMode::kCenter) {
    g.y0 = (g.scaled_h - cfg.crop_size) / 2;
    g.x0 = (g.scaled_w - cfg.crop_size) / 2;
  } else {
    Rng rng(cfg.seed);
    g.y0 = static_cast<int>(rng.below(g.scaled_h - cfg.crop_size + 1));
    g.x0 = static_cast<int>(rng.below(g.scaled_w - cfg.crop_size + 1));
  }
  return g;
}

Tensor<float> crop_box(const Tensor<float>& x, const Geometry& g) {
  const Shape& s = x.shape();
  if (g.y0 == 0 && g.x0 == 0 && g.crop_h == s[2] && g.crop_w == s[3]) return x;
  Tensor<float> out(Shape{s[0], s[1], g.crop_h, g.crop_w});
  for (int t = 0; t < s[0]; ++t)
    for (int c = 0; c < s[1]; ++c)
      for (int i = 0; i < g.crop_h; ++i) {
        const float* src = x.data() + ((static_cast<int64_t>(t) * s[1] + c) * s[2] + g.y0 + i) *
                                          s[3] +
                           g.x0;
        float* dst =
            out.data() + ((static_cast<int64_t>(t) * s[1] + c) * g.crop_h + i) * g.crop_w;
        std::copy_n(src, g.crop_w, dst);
      }
  return out;
}

std::vector<Tensor<float>> split_chunks(const Tensor<float>& x, int chunk_t) {
  const Shape& s = x.shape();
  std::vector<Tensor<float>> out;
  const int64_t frame_n = static_cast<int64_t>(s[1]) * s[2] * s[3];
  for (int first = 0; first + chunk_t <= s[0]; first += chunk_t) {
    Tensor<float> c(Shape{chunk_t, s[1], s[2], s[3]});
    std::copy_n(x.data() + first * frame_n, chunk_t * frame_n, c.data());
    out.push_back(std::move(c));
  }
  return out;
}

}  // namespace

std::vector<Tensor<float>> preprocess(const Tensor<float>& frames, const PreprocessConfig& cfg) {
  Geometry g = plan_geometry(frames.shape(), cfg);
  Tensor<float> x = (g.scaled_h != frames.shape()[2] || g.scaled_w != frames.shape()[3])
                        ? resize_bilinear(frames, g.scaled_h, g.scaled_w)
                        : frames;
  return split_chunks(crop_box(x, g), cfg.chunk_t);
}

PreprocessedPair preprocess_with_masks(const Tensor<float>& frames, const Tensor<float>& masks,
                                       const PreprocessConfig& cfg) {
  const Shape& fs_ = frames.shape();
  const Shape& ms = masks.shape();
  NVC_CHECK(ms.rank == 4 && ms[1] == 1 && ms[0] == fs_[0] && ms[2] == fs_[2] && ms[3] == fs_[3],
            "preprocess: masks must be (T,1,H,W) aligned with the frames");
  Geometry g = plan_geometry(fs_, cfg);
  Tensor<float> x = (g.scaled_h != fs_[2] || g.scaled_w != fs_[3])
                        ? resize_bilinear(frames, g.scaled_h, g.scaled_w)
                        : frames;
  Tensor<float> m = (g.scaled_h != ms[2] || g.scaled_w != ms[3])
                        ? resize_nearest(masks, g.scaled_h, g.scaled_w)
                        : masks;
  PreprocessedPair out;
  out.frames = split_chunks(crop_box(x, g), cfg.chunk_t);
  out.masks = split_chunks(crop_box(m, g), cfg.chunk_t);
  return out;
}

Tensor<float> stack_modalities(const std::vector<Tensor<float>>& sources) {
  NVC_CHECK(!sources.empty(), "stack_modalities: no sources");
  const Shape& s0 = sources[0].shape();
  NVC_CHECK(s0.rank == 4, "stack_modalities: sources must be (T,C,H,W)");
  int total_c = 0;
  for (size_t i = 0; i < sources.size(); ++i) {
    const Shape& si = sources[i].shape();
    NVC_CHECK(si.rank == 4 && si[0] == s0[0] && si[2] == s0[2] && si[3] == s0[3],
              strcat_("stack_modalities: source ", i, " is ", si.str(),
                      ", misaligned with source 0 ", s0.str()));
    total_c += si[1];
  }
  Tensor<float> out(Shape{s0[0], total_c, s0[2], s0[3]});
  const int64_t hw = static_cast<int64_t>(s0[2]) * s0[3];
  for (int t = 0; t < s0[0]; ++t) {
    int co = 0;
    for (const Tensor<float>& src : sources) {
      const int ci = src.shape()[1];
      std::copy_n(src.data() + static_cast<int64_t>(t) * ci * hw, ci * hw,
                  out.data() + (static_cast<int64_t>(t) * total_c + co) * hw);
      co += ci;
    }
  }
  return out;
}

}  // namespace nvc
