#include "nvc/checkpoint.hpp"

#include <openssl/evp.h>

#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <vector>

namespace nvc {
namespace {

void store_le32(uint32_t v, uint8_t* out) {
  out[0] = static_cast<uint8_t>(v);
  out[1] = static_cast<uint8_t>(v >> 8);
  out[2] = static_cast<uint8_t>(v >> 16);
  out[3] = static_cast<uint8_t>(v >> 24);
}

uint32_t load_le32(const uint8_t* p) {
  return static_cast<uint32_t>(p[0]) | static_cast<uint32_t>(p[1]) << 8 |
         static_cast<uint32_t>(p[2]) << 16 | static_cast<uint32_t>(p[3]) << 24;
}

void append_floats(std::vector<uint8_t>& out, const Tensor<float>& t) {
  size_t base = out.size();
  out.resize(base + static_cast<size_t>(t.numel()) * 4);
  for (int64_t i = 0; i < t.numel(); ++i) {
    uint32_t bits;
    std::memcpy(&bits, t.data() + i, 4);
    store_le32(bits, out.data() + base + static_cast<size_t>(i) * 4);
  }
}

// Flat little-endian image of every parameter then every buffer, in
// registration order (deterministic given the config).
std::vector<uint8_t> flat_bytes(const ParamStore<float>& ps) {
  std::vector<uint8_t> bytes;
  for (const auto& p : ps.params) append_floats(bytes, p->value);
  for (const auto& b : ps.buffers) append_floats(bytes, *b.tensor);
  return bytes;
}

std::array<uint8_t, 32> sha256(const uint8_t* data, size_t n) {
  std::array<uint8_t, 32> out{};
  unsigned int len = 0;
  int ok = EVP_Digest(data, n, out.data(), &len, EVP_sha256(), nullptr);
  NVC_CHECK(ok == 1 && len == 32, "SHA-256 computation failed");
  return out;
}

std::string hex_of(const uint8_t* p, size_t n) {
  static const char* digits = "0123456789abcdef";
  std::string s(n * 2, '0');
  for (size_t i = 0; i < n; ++i) {
    s[2 * i] = digits[p[i] >> 4];
    s[2 * i + 1] = digits[p[i] & 15];
  }
  return s;
}

struct EntryInfo {
  std::string kind;  // "param" | "buffer"
  std::string name;
  int64_t offset = 0;
  int64_t count = 0;
  Shape shape;
};

}  // namespace

std::array<uint8_t, 32> checkpoint_digest(const ParamStore<float>& ps) {
  std::vector<uint8_t> bytes = flat_bytes(ps);
  return sha256(bytes.data(), bytes.size());
}

std::array<uint8_t, 8> model_hash(const ParamStore<float>& ps) {
  std::array<uint8_t, 32> d = checkpoint_digest(ps);
  std::array<uint8_t, 8> h{};
  std::memcpy(h.data(), d.data(), 8);
  return h;
}

void save_checkpoint(const std::string& path, const Model& m, int64_t step) {
  std::vector<uint8_t> bytes = flat_bytes(m.ps);
  std::array<uint8_t, 32> digest = sha256(bytes.data(), bytes.size());

  std::ostringstream man;
  man << "nvc-checkpoint 1\n";
  man << "step " << step << "\n";
  for (const auto& [k, v] : m.cfg.to_kv()) man << "config " << k << " " << v << "\n";
  int64_t offset = 0;
  auto entry = [&](const char* kind, const std::string& name, const Shape& s, int64_t count) {
    man << kind << " " << name << " " << offset << " " << count << " " << s.rank;
    for (int i = 0; i < s.rank; ++i) man << " " << s[i];
    man << "\n";
    offset += count * 4;
  };
  for (const auto& p : m.ps.params) entry("param", p->name, p->value.shape(), p->value.numel());
  for (const auto& b : m.ps.buffers) entry("buffer", b.name, b.tensor->shape(), b.tensor->numel());
  man << "sha256 " << hex_of(digest.data(), 32) << "\n";

  std::ofstream mf(path, std::ios::binary | std::ios::trunc);
  NVC_CHECK(mf.good(), strcat_("cannot open checkpoint manifest for writing: ", path));
  std::string text = man.str();
  mf.write(text.data(), static_cast<std::streamsize>(text.size()));
  NVC_CHECK(mf.good(), strcat_("failed writing checkpoint manifest: ", path));
  mf.close();

  std::string dpath = path + ".data";
  std::ofstream df(dpath, std::ios::binary | std::ios::trunc);
  NVC_CHECK(df.good(), strcat_("cannot open checkpoint data for writing: ", dpath));
  df.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  NVC_CHECK(df.good(), strcat_("failed writing checkpoint data: ", dpath));
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream mf(path, std::ios::binary);
  NVC_CHECK(mf.good(), strcat_("cannot open checkpoint manifest: ", path));

  std::string line;
  NVC_CHECK(static_cast<bool>(std::getline(mf, line)) && line == "nvc-checkpoint 1",
            strcat_("unrecognized checkpoint manifest header in ", path));

  int64_t step = 0;
  std::map<std::string, std::string> kv;
  std::vector<EntryInfo> entries;
  std::string digest_hex;
  while (std::getline(mf, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "step") {
      ls >> step;
    } else if (tag == "config") {
      std::string k, v;
      ls >> k >> v;
      kv[k] = v;
    } else if (tag == "param" || tag == "buffer") {
      EntryInfo e;
      e.kind = tag;
      int rank = 0;
      ls >> e.name >> e.offset >> e.count >> rank;
      NVC_CHECK(!ls.fail() && rank >= 0 && rank <= 5, strcat_("malformed manifest entry: ", line));
      e.shape.rank = rank;
      for (int i = 0; i < rank; ++i) ls >> e.shape.d[i];
      NVC_CHECK(!ls.fail(), strcat_("malformed manifest entry: ", line));
      entries.push_back(std::move(e));
    } else if (tag == "sha256") {
      ls >> digest_hex;
    } else {
      throw Error(strcat_("unknown manifest line in ", path, ": ", line));
    }
  }
  NVC_CHECK(digest_hex.size() == 64, "checkpoint manifest missing sha256 line");

  std::string dpath = path + ".data";
  std::ifstream df(dpath, std::ios::binary);
  NVC_CHECK(df.good(), strcat_("cannot open checkpoint data: ", dpath));
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(df)), std::istreambuf_iterator<char>());

  std::array<uint8_t, 32> digest = sha256(bytes.data(), bytes.size());
  NVC_CHECK(hex_of(digest.data(), 32) == digest_hex,
            strcat_("checkpoint data digest mismatch for ", dpath));

  LoadedCheckpoint out{Model(ModelConfig::from_kv(kv)), step};
  ParamStore<float>& ps = out.model.ps;
  NVC_CHECK(entries.size() == ps.params.size() + ps.buffers.size(),
            "checkpoint entry count does not match model configuration");

  auto fill = [&](const EntryInfo& e, Tensor<float>& dst, const std::string& want_name) {
    NVC_CHECK(e.name == want_name,
              strcat_("checkpoint entry order mismatch: got ", e.name, ", expected ", want_name));
    NVC_CHECK(e.shape == dst.shape(), strcat_("checkpoint shape mismatch for ", e.name));
    NVC_CHECK(e.count == dst.numel(), strcat_("checkpoint count mismatch for ", e.name));
    NVC_CHECK(e.offset >= 0 &&
                  static_cast<size_t>(e.offset) + static_cast<size_t>(e.count) * 4 <= bytes.size(),
              strcat_("checkpoint entry out of range: ", e.name));
    for (int64_t i = 0; i < e.count; ++i) {
      uint32_t b = load_le32(bytes.data() + e.offset + i * 4);
      float f;
      std::memcpy(&f, &b, 4);
      dst.data()[i] = f;
    }
  };
  size_t idx = 0;
  for (auto& p : ps.params) {
    NVC_CHECK(entries[idx].kind == "param", "checkpoint entry kind mismatch");
    fill(entries[idx++], p->value, p->name);
  }
  for (auto& b : ps.buffers) {
    NVC_CHECK(entries[idx].kind == "buffer", "checkpoint entry kind mismatch");
    fill(entries[idx++], *b.tensor, b.name);
  }
  return out;
}

}  // namespace nvc
