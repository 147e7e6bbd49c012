// nvc: operator entry points for the neural video codec.
//
//   train      fit a model on a frame directory (or raw video file)
//   finetune   continue training a checkpoint on a new dataset
//   encode     frames -> compressed bitstream
//   decode     compressed bitstream -> frames
//   eval       rate/distortion report for one model on one dataset
//   rd-curve   rate/distortion CSV across several checkpoints
//   self-test  built-in invariant suite (gradient checks, coder round
//              trip, causality, quantizer, container integrity)
//
// Exit codes: 0 success, 1 runtime failure (single-line diagnostic on
// stderr), 2 usage error. Every run logs its resolved configuration to
// stderr as "config <key>=<value>" lines so runs are reproducible from
// their logs alone.
//
// When $NVC_DATA_DIR is set, relative dataset paths that do not exist
// locally are retried under that root.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "nvc/checkpoint.hpp"
#include "nvc/codec.hpp"
#include "nvc/dataio.hpp"
#include "nvc/evalharness.hpp"
#include "nvc/gradcheck.hpp"
#include "nvc/model.hpp"
#include "nvc/trainer.hpp"

namespace fs = std::filesystem;
using namespace nvc;

namespace {

std::string one_line(std::string s) {
  for (char& c : s)
    if (c == '\n' || c == '\r') c = ';';
  return s;
}

// Dataset path resolution: use the path as given when it exists; otherwise
// retry relative paths under $NVC_DATA_DIR.
std::string resolve_data_path(const std::string& p) {
  if (p.empty() || fs::exists(p)) return p;
  if (!fs::path(p).is_absolute()) {
    const char* root = std::getenv("NVC_DATA_DIR");
    if (root && *root) {
      fs::path joined = fs::path(root) / p;
      if (fs::exists(joined)) return joined.string();
    }
  }
  return p;  // let the loader report the miss
}

// ---------------------------------------------------------------------------
// key=value config files
// ---------------------------------------------------------------------------

std::map<std::string, std::string> read_kv_file(const std::string& path) {
  std::ifstream in(path);
  NVC_CHECK(in.good(), strcat_("cannot open config file: ", path));
  std::map<std::string, std::string> kv;
  std::string line;
  int lineno = 0;
  auto trim = [](std::string s) {
    const char* ws = " \t";
    size_t b = s.find_first_not_of(ws);
    if (b == std::string::npos) return std::string();
    size_t e = s.find_last_not_of(ws);
    return s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    size_t eq = line.find('=');
    NVC_CHECK(eq != std::string::npos,
              strcat_(path, ":", lineno, ": expected key=value, got \"", line, "\""));
    std::string k = trim(line.substr(0, eq));
    std::string v = trim(line.substr(eq + 1));
    NVC_CHECK(!k.empty(), strcat_(path, ":", lineno, ": empty key"));
    NVC_CHECK(!kv.count(k), strcat_(path, ":", lineno, ": duplicate key ", k));
    kv[k] = v;
  }
  return kv;
}

// Pulls a typed value out of the kv map if present, marking it consumed.
struct KvReader {
  std::map<std::string, std::string> kv;
  std::set<std::string> used;

  bool take(const std::string& key, std::string* out) {
    auto it = kv.find(key);
    if (it == kv.end()) return false;
    used.insert(key);
    *out = it->second;
    return true;
  }
  template <typename T, typename Parse>
  void get(const std::string& key, T* out, Parse parse) {
    std::string v;
    if (take(key, &v)) {
      try {
        *out = parse(v);
      } catch (const Error&) {
        throw;
      } catch (const std::exception&) {
        throw Error(strcat_("config key ", key, ": cannot parse value \"", v, "\""));
      }
    }
  }
  void get_int(const std::string& key, int* out) {
    get(key, out, [](const std::string& v) { return std::stoi(v); });
  }
  void get_double(const std::string& key, double* out) {
    get(key, out, [](const std::string& v) { return std::stod(v); });
  }
  void get_float(const std::string& key, float* out) {
    get(key, out, [](const std::string& v) { return std::stof(v); });
  }
  void get_u64(const std::string& key, uint64_t* out) {
    get(key, out, [](const std::string& v) { return std::stoull(v); });
  }
  void reject_unknown() const {
    std::string extra;
    for (const auto& [k, v] : kv)
      if (!used.count(k)) extra += (extra.empty() ? "" : ", ") + k;
    if (!extra.empty()) throw CLI::ValidationError("--config", "unknown config keys: " + extra);
  }
};

CropMode crop_mode_of(const std::string& s) {
  if (s == "none") return CropMode::kNone;
  if (s == "center") return CropMode::kCenter;
  if (s == "random") return CropMode::kRandom;
  throw Error(strcat_("unknown crop mode: ", s, " (expected none|center|random)"));
}
const char* crop_mode_name(CropMode m) {
  switch (m) {
    case CropMode::kNone: return "none";
    case CropMode::kCenter: return "center";
    default: return "random";
  }
}

void apply_model_keys(KvReader& r, ModelConfig* mc) {
  std::string s;
  if (r.take("ae.mode", &s)) mc->ae.mode = ae_mode_from_name(s);
  r.get_int("ae.input_channels", &mc->ae.input_channels);
  if (r.take("ae.latent_channels", &s)) {
    mc->ae.latent_channels = std::stoi(s);
    mc->prior.groups = mc->ae.latent_channels;
  }
  r.get_int("ae.front_channels", &mc->ae.front_channels);
  r.get_int("ae.hidden_channels", &mc->ae.hidden_channels);
  r.get_int("ae.res_blocks", &mc->ae.res_blocks);
  if (r.take("prior.variant", &s)) mc->prior.variant = prior_variant_from_name(s);
  r.get_int("prior.codebook", &mc->prior.codebook);
  r.get_int("prior.hidden", &mc->prior.hidden);
  r.get_int("prior.layers", &mc->prior.layers);
  r.get_int("prior.kernel", &mc->prior.kernel);
  r.get_int("prior.cond_kernel", &mc->prior.cond_kernel);
  r.get_int("prior.gru_hidden", &mc->prior.gru_hidden);
  r.get_u64("seed", &mc->seed);
}

void apply_train_keys(KvReader& r, TrainConfig* tc) {
  r.get_double("train.beta", &tc->beta);
  r.get_int("train.batch_size", &tc->batch_size);
  r.get_double("train.lr", &tc->lr);
  r.get_double("train.lr_decay", &tc->lr_decay);
  r.get_int("train.decay_every_epochs", &tc->decay_every_epochs);
  r.get_int("train.epochs", &tc->epochs);
  r.get_int("train.steps", &tc->steps);
  r.get_int("train.decay_every_steps", &tc->decay_every_steps);
  r.get_double("train.clip_norm", &tc->clip_norm);
  r.get_float("train.alpha", &tc->sem.alpha);
  r.get_float("train.rho_fg", &tc->sem.rho_fg);
  r.get_float("train.rho_bg", &tc->sem.rho_bg);
  r.get_double("train.bn_freeze_frac", &tc->bn_freeze_frac);
  r.get_u64("train.seed", &tc->seed);
}

void apply_data_keys(KvReader& r, PreprocessConfig* pc) {
  std::string s;
  if (r.take("data.crop", &s)) pc->crop = crop_mode_of(s);
  r.get_int("data.crop_size", &pc->crop_size);
  r.get_int("data.chunk_t", &pc->chunk_t);
  r.get_int("data.downscale_shortest", &pc->downscale_shortest);
  r.get_u64("data.seed", &pc->seed);
}

// ---------------------------------------------------------------------------
// resolved-config logging
// ---------------------------------------------------------------------------

struct ConfigLog {
  std::map<std::string, std::string> kv;
  void put(const std::string& k, const std::string& v) { kv[k] = v; }
  template <typename T>
  void put_num(const std::string& k, T v) {
    std::ostringstream oss;
    oss << v;
    kv[k] = oss.str();
  }
  void emit(const std::string& subcommand) const {
    std::cerr << "config subcommand=" << subcommand << "\n";
    for (const auto& [k, v] : kv) std::cerr << "config " << k << "=" << v << "\n";
  }
};

void log_model(ConfigLog* log, const ModelConfig& mc) {
  for (const auto& [k, v] : mc.to_kv()) log->put("model." + k, v);
}
void log_train(ConfigLog* log, const TrainConfig& tc) {
  log->put_num("train.beta", tc.beta);
  log->put_num("train.batch_size", tc.batch_size);
  log->put_num("train.lr", tc.lr);
  log->put_num("train.lr_decay", tc.lr_decay);
  log->put_num("train.decay_every_epochs", tc.decay_every_epochs);
  log->put_num("train.epochs", tc.epochs);
  log->put_num("train.steps", tc.steps);
  log->put_num("train.decay_every_steps", tc.decay_every_steps);
  log->put_num("train.clip_norm", tc.clip_norm);
  log->put("train.semantic", tc.semantic ? "1" : "0");
  log->put_num("train.alpha", tc.sem.alpha);
  log->put_num("train.rho_fg", tc.sem.rho_fg);
  log->put_num("train.rho_bg", tc.sem.rho_bg);
  log->put_num("train.bn_freeze_frac", tc.bn_freeze_frac);
  log->put_num("train.seed", tc.seed);
}
void log_data(ConfigLog* log, const PreprocessConfig& pc) {
  log->put("data.crop", crop_mode_name(pc.crop));
  log->put_num("data.crop_size", pc.crop_size);
  log->put_num("data.chunk_t", pc.chunk_t);
  log->put_num("data.downscale_shortest", pc.downscale_shortest);
  log->put_num("data.seed", pc.seed);
}

// ---------------------------------------------------------------------------
// shared option plumbing
// ---------------------------------------------------------------------------

// Options common to train and finetune.
struct TrainCli {
  std::string config_path, in_path, out_path, masks_path;
  std::string ae_mode = "2d", prior = "frame", crop = "center";
  double beta = 0.1, lr = 1e-4, alpha = 0.95;
  int steps = 0, epochs = 0, batch_size = 1;
  int crop_size = 160, chunk_t = 8, downscale = 0;
  int latent_channels = 32, codebook = 8;
  uint64_t seed = 1;
  int threads = 1;
};

void add_train_flags(CLI::App* sub, TrainCli* o, bool with_arch) {
  sub->add_option("--config", o->config_path, "key=value config file (unknown keys rejected)");
  sub->add_option("--in", o->in_path, "training frames: PPM directory or raw video file")
      ->required();
  sub->add_option("--out", o->out_path, "output checkpoint path")->required();
  sub->add_option("--masks", o->masks_path,
                  "PGM mask directory aligned with --in; enables semantic training");
  sub->add_option("--beta", o->beta, "rate weight in the objective");
  sub->add_option("--alpha", o->alpha, "semantic foreground weight (with --masks)");
  sub->add_option("--steps", o->steps, "optimizer steps (overrides --epochs when > 0)");
  sub->add_option("--epochs", o->epochs, "training epochs");
  sub->add_option("--batch-size", o->batch_size, "chunks per optimizer step");
  sub->add_option("--lr", o->lr, "initial learning rate");
  sub->add_option("--crop", o->crop, "spatial crop mode")
      ->check(CLI::IsMember({"none", "center", "random"}));
  sub->add_option("--crop-size", o->crop_size, "crop side length (multiple of 8)");
  sub->add_option("--chunk-t", o->chunk_t, "frames per chunk");
  sub->add_option("--downscale", o->downscale, "shortest-side target before cropping (0 = off)");
  sub->add_option("--seed", o->seed, "seed for init, shuffling, and random crops");
  sub->add_option("--threads", o->threads, "worker threads (1 = bitwise reproducible; all current paths are serial)")
      ->check(CLI::PositiveNumber);
  if (with_arch) {
    sub->add_option("--ae", o->ae_mode, "autoencoder mode")->check(CLI::IsMember({"2d", "3d"}));
    sub->add_option("--prior", o->prior, "latent prior conditioning")
        ->check(CLI::IsMember({"none", "frame", "gru"}));
    sub->add_option("--latent-channels", o->latent_channels, "latent code groups");
    sub->add_option("--codebook", o->codebook, "quantizer centers per group");
  }
}

// Builds the three config structs from defaults <- config file <- flags.
void resolve_train_configs(const CLI::App* sub, const TrainCli& o, ModelConfig* mc,
                           TrainConfig* tc, PreprocessConfig* pc, bool with_arch) {
  KvReader r;
  if (!o.config_path.empty()) r.kv = read_kv_file(o.config_path);
  if (with_arch) {
    apply_model_keys(r, mc);
  }
  apply_train_keys(r, tc);
  apply_data_keys(r, pc);
  r.reject_unknown();

  if (with_arch) {
    if (sub->count("--ae")) mc->ae.mode = ae_mode_from_name(o.ae_mode);
    if (sub->count("--prior")) mc->prior.variant = prior_variant_from_name(o.prior);
    if (sub->count("--latent-channels")) {
      mc->ae.latent_channels = o.latent_channels;
      mc->prior.groups = o.latent_channels;
    }
    if (sub->count("--codebook")) mc->prior.codebook = o.codebook;
    if (sub->count("--seed")) mc->seed = o.seed;
  }
  if (sub->count("--beta")) tc->beta = o.beta;
  if (sub->count("--alpha")) tc->sem.alpha = static_cast<float>(o.alpha);
  if (sub->count("--steps")) tc->steps = o.steps;
  if (sub->count("--epochs")) tc->epochs = o.epochs;
  if (sub->count("--batch-size")) tc->batch_size = o.batch_size;
  if (sub->count("--lr")) tc->lr = o.lr;
  if (sub->count("--seed")) tc->seed = o.seed;
  if (sub->count("--crop")) pc->crop = crop_mode_of(o.crop);
  if (sub->count("--crop-size")) pc->crop_size = o.crop_size;
  if (sub->count("--chunk-t")) pc->chunk_t = o.chunk_t;
  if (sub->count("--downscale")) pc->downscale_shortest = o.downscale;
  if (sub->count("--seed")) pc->seed = o.seed;
  tc->semantic = !o.masks_path.empty();
}

// Shared by train (fresh model) and finetune (loaded model).
int run_training(const TrainCli& o, Model* m, const TrainConfig& tc, const PreprocessConfig& pc,
                 int64_t start_step, const char* name) {
  ConfigLog log;
  log_model(&log, m->cfg);
  log_train(&log, tc);
  log_data(&log, pc);
  log.put("in", resolve_data_path(o.in_path));
  log.put("out", o.out_path);
  if (!o.masks_path.empty()) log.put("masks", resolve_data_path(o.masks_path));
  log.put_num("threads", o.threads);
  log.put_num("start_step", start_step);
  log.emit(name);

  Tensor<float> frames = load_frames(resolve_data_path(o.in_path));
  std::vector<Tensor<float>> chunks;
  std::vector<Tensor<float>> masks;
  if (tc.semantic) {
    Tensor<float> mask_frames =
        load_masks(resolve_data_path(o.masks_path), frames.shape()[0], frames.shape()[2],
                   frames.shape()[3]);
    PreprocessedPair pair = preprocess_with_masks(frames, mask_frames, pc);
    chunks = std::move(pair.frames);
    masks = std::move(pair.masks);
  } else {
    chunks = preprocess(frames, pc);
  }
  NVC_CHECK(!chunks.empty(),
            strcat_("no full chunks after preprocessing (", frames.shape()[0], " frames, chunk_t=",
                    pc.chunk_t, ")"));
  std::cerr << "dataset: " << chunks.size() << " chunks of " << chunks.front().shape().str()
            << "\n";

  std::ofstream metrics(o.out_path + ".metrics.csv");
  NVC_CHECK(metrics.good(), strcat_("cannot write metrics file: ", o.out_path, ".metrics.csv"));
  TrainStats st = train(*m, chunks, tc.semantic ? &masks : nullptr, tc, &metrics, o.out_path);
  std::cerr << name << ": " << st.steps_run << " steps, final total " << st.last.total
            << " (distortion " << st.last.distortion << ", rate " << st.last.rate_bpp
            << " bpp), best total " << st.best_total << " at step " << st.best_step << "\n";
  std::cerr << "checkpoint: " << o.out_path << " (+ .best, .metrics.csv)\n";
  return 0;
}

// ---------------------------------------------------------------------------
// subcommands
// ---------------------------------------------------------------------------

int cmd_train(const CLI::App* sub, const TrainCli& o) {
  ModelConfig mc;
  TrainConfig tc;
  PreprocessConfig pc;
  resolve_train_configs(sub, o, &mc, &tc, &pc, /*with_arch=*/true);
  Model m(mc);
  return run_training(o, &m, tc, pc, 0, "train");
}

int cmd_finetune(const CLI::App* sub, const TrainCli& o, const std::string& model_path) {
  ModelConfig unused;
  TrainConfig tc;
  PreprocessConfig pc;
  resolve_train_configs(sub, o, &unused, &tc, &pc, /*with_arch=*/false);
  LoadedCheckpoint lc = load_checkpoint(model_path);
  std::cerr << "loaded checkpoint " << model_path << " at step " << lc.step << "\n";
  return run_training(o, &lc.model, tc, pc, lc.step, "finetune");
}

struct CodecCli {
  std::string model_path, in_path, out_path;
  int chunk_t = 8;
  int threads = 1;
};

int cmd_encode(const CodecCli& o) {
  LoadedCheckpoint lc = load_checkpoint(o.model_path);
  Tensor<float> frames = load_frames(resolve_data_path(o.in_path));

  ConfigLog log;
  log_model(&log, lc.model.cfg);
  log.put("model", o.model_path);
  log.put("in", resolve_data_path(o.in_path));
  log.put("out", o.out_path);
  log.put_num("chunk_t", o.chunk_t);
  log.put_num("threads", o.threads);
  log.emit("encode");

  std::vector<uint8_t> stream = encode_video(lc.model, frames, o.chunk_t);
  std::ofstream out(o.out_path, std::ios::binary);
  NVC_CHECK(out.good(), strcat_("cannot write bitstream: ", o.out_path));
  out.write(reinterpret_cast<const char*>(stream.data()),
            static_cast<std::streamsize>(stream.size()));
  NVC_CHECK(out.good(), strcat_("short write: ", o.out_path));

  const Shape& s = frames.shape();
  const double pixels =
      static_cast<double>(s[0]) * s[2] * s[3];
  std::cerr << "encoded " << s.str() << " -> " << stream.size() << " bytes ("
            << (pixels > 0 ? 8.0 * static_cast<double>(stream.size()) / pixels : 0.0)
            << " bpp incl. header)\n";
  return 0;
}

int cmd_decode(const CodecCli& o, const std::string& format) {
  LoadedCheckpoint lc = load_checkpoint(o.model_path);
  std::ifstream in(o.in_path, std::ios::binary);
  NVC_CHECK(in.good(), strcat_("cannot open bitstream: ", o.in_path));
  std::vector<uint8_t> stream((std::istreambuf_iterator<char>(in)),
                              std::istreambuf_iterator<char>());

  ConfigLog log;
  log_model(&log, lc.model.cfg);
  log.put("model", o.model_path);
  log.put("in", o.in_path);
  log.put("out", o.out_path);
  log.put("format", format);
  log.put_num("threads", o.threads);
  log.emit("decode");

  Tensor<float> frames = decode_video(lc.model, stream);
  if (format == "raw")
    write_frames_raw(o.out_path, frames);
  else
    write_frames_ppm_dir(o.out_path, frames);
  std::cerr << "decoded " << frames.shape().str() << " -> " << o.out_path << "\n";
  return 0;
}

struct EvalCli {
  std::string model_path, in_path, masks_path, out_path, dataset;
  std::string crop = "none";
  double beta = 0.0;
  int crop_size = 160, chunk_t = 8, downscale = 0;
  uint64_t seed = 1;
  int threads = 1;
};

void add_eval_data_flags(CLI::App* sub, EvalCli* o) {
  sub->add_option("--masks", o->masks_path, "PGM mask directory for FG/BG columns");
  sub->add_option("--crop", o->crop, "spatial crop mode")
      ->check(CLI::IsMember({"none", "center", "random"}));
  sub->add_option("--crop-size", o->crop_size, "crop side length (multiple of 8)");
  sub->add_option("--chunk-t", o->chunk_t, "frames per chunk");
  sub->add_option("--downscale", o->downscale, "shortest-side target before cropping (0 = off)");
  sub->add_option("--seed", o->seed, "seed for random crops");
  sub->add_option("--threads", o->threads, "worker threads (1 = bitwise reproducible; all current paths are serial)")
      ->check(CLI::PositiveNumber);
  sub->add_option("--out", o->out_path, "CSV output path (default: stdout)");
  sub->add_option("--dataset", o->dataset, "dataset label for the CSV (default: input path)");
}

struct EvalData {
  std::vector<Tensor<float>> chunks, masks;
  bool has_masks = false;
};

EvalData load_eval_data(const EvalCli& o, PreprocessConfig* pc) {
  pc->crop = crop_mode_of(o.crop);
  pc->crop_size = o.crop_size;
  pc->chunk_t = o.chunk_t;
  pc->downscale_shortest = o.downscale;
  pc->seed = o.seed;

  EvalData d;
  Tensor<float> frames = load_frames(resolve_data_path(o.in_path));
  if (!o.masks_path.empty()) {
    Tensor<float> mask_frames =
        load_masks(resolve_data_path(o.masks_path), frames.shape()[0], frames.shape()[2],
                   frames.shape()[3]);
    PreprocessedPair pair = preprocess_with_masks(frames, mask_frames, *pc);
    d.chunks = std::move(pair.frames);
    d.masks = std::move(pair.masks);
    d.has_masks = true;
  } else {
    d.chunks = preprocess(frames, *pc);
  }
  NVC_CHECK(!d.chunks.empty(), "no full chunks after preprocessing");
  return d;
}

void emit_csv(const std::string& csv, const std::string& out_path) {
  if (out_path.empty()) {
    std::cout << csv;
  } else {
    std::ofstream out(out_path);
    NVC_CHECK(out.good(), strcat_("cannot write CSV: ", out_path));
    out << csv;
    std::cerr << "wrote " << out_path << "\n";
  }
}

int cmd_eval(const EvalCli& o) {
  LoadedCheckpoint lc = load_checkpoint(o.model_path);
  PreprocessConfig pc;
  EvalData d = load_eval_data(o, &pc);
  const std::string dataset = o.dataset.empty() ? o.in_path : o.dataset;

  ConfigLog log;
  log_model(&log, lc.model.cfg);
  log_data(&log, pc);
  log.put("model", o.model_path);
  log.put("in", resolve_data_path(o.in_path));
  if (!o.masks_path.empty()) log.put("masks", resolve_data_path(o.masks_path));
  log.put_num("beta", o.beta);
  log.put_num("threads", o.threads);
  log.emit("eval");
  std::cerr << "dataset: " << d.chunks.size() << " chunks of " << d.chunks.front().shape().str()
            << "\n";

  RDPoint p = rd_point(lc.model, d.chunks, d.has_masks ? &d.masks : nullptr, o.beta, dataset,
                       o.model_path);
  emit_csv(rd_csv({p}), o.out_path);
  return 0;
}

int cmd_rd_curve(const EvalCli& o, const std::string& models_csv, const std::string& betas_csv) {
  std::vector<std::string> paths;
  {
    std::istringstream ss(models_csv);
    std::string tok;
    while (std::getline(ss, tok, ','))
      if (!tok.empty()) paths.push_back(tok);
  }
  if (paths.size() < 2)
    throw CLI::ValidationError("--models", "need at least two comma-separated checkpoints");
  std::vector<double> betas;
  if (!betas_csv.empty()) {
    std::istringstream ss(betas_csv);
    std::string tok;
    while (std::getline(ss, tok, ',')) betas.push_back(std::stod(tok));
    if (betas.size() != paths.size())
      throw CLI::ValidationError("--betas", "need exactly one beta label per model");
  } else {
    betas.assign(paths.size(), 0.0);
  }

  std::vector<LoadedCheckpoint> loaded;
  loaded.reserve(paths.size());
  std::vector<const Model*> models;
  for (const std::string& p : paths) {
    loaded.push_back(load_checkpoint(p));
    models.push_back(&loaded.back().model);
  }

  PreprocessConfig pc;
  EvalData d = load_eval_data(o, &pc);
  const std::string dataset = o.dataset.empty() ? o.in_path : o.dataset;

  ConfigLog log;
  log_data(&log, pc);
  for (size_t i = 0; i < paths.size(); ++i) log.put(strcat_("models.", i), paths[i]);
  log.put("data", resolve_data_path(o.in_path));
  if (!o.masks_path.empty()) log.put("masks", resolve_data_path(o.masks_path));
  log.put_num("threads", o.threads);
  log.emit("rd-curve");
  std::cerr << "dataset: " << d.chunks.size() << " chunks of " << d.chunks.front().shape().str()
            << "\n";

  std::vector<RDPoint> points =
      rd_curve(models, betas, d.chunks, d.has_masks ? &d.masks : nullptr, dataset);
  // Replace the positional ids with the checkpoint paths for the report.
  for (RDPoint& p : points)
    for (size_t i = 0; i < paths.size(); ++i)
      if (p.model == strcat_("model", i)) p.model = paths[i];
  emit_csv(rd_csv(points), o.out_path);
  return 0;
}

// ---------------------------------------------------------------------------
// self-test
// ---------------------------------------------------------------------------

struct Suite {
  std::string name;
  int checks = 0;
  int failures = 0;
  void expect(bool ok, const std::string& what) {
    ++checks;
    if (!ok) {
      ++failures;
      std::cerr << "  FAIL [" << name << "] " << what << "\n";
    }
  }
};

void selftest_gradients(Suite* s) {
  Rng rng(301);
  auto check_rel = [&](const char* what, const GradCheckReport& rep, double tol) {
    s->expect(rep.max_rel_err < tol,
              strcat_(what, ": rel err ", rep.max_rel_err, " >= ", tol));
  };
  {
    Tensor<double> x = rand_normal<double>(Shape{1, 2, 5, 5}, rng);
    Tensor<double> w = rand_normal<double>(Shape{3, 2, 3, 3}, rng);
    Tensor<double> b = rand_normal<double>(Shape{3}, rng);
    check_rel("conv2d",
              gradcheck<double>(
                  [](const std::vector<Var<double>>& v) {
                    return sum_all(tanh_op(conv2d(v[0], v[1], v[2], 2, 2)));
                  },
                  {x, w, b}),
              1e-6);
    check_rel("tconv2d",
              gradcheck<double>(
                  [](const std::vector<Var<double>>& v) {
                    return sum_all(tanh_op(tconv2d(v[0], v[1], v[2], 2, 2)));
                  },
                  {Tensor<double>(rand_normal<double>(Shape{1, 3, 3, 3}, rng)),
                   Tensor<double>(rand_normal<double>(Shape{3, 2, 3, 3}, rng)),
                   Tensor<double>(rand_normal<double>(Shape{2}, rng))}),
              1e-6);
  }
  {
    Tensor<double> x = rand_normal<double>(Shape{1, 2, 3, 4, 4}, rng);
    Tensor<double> w = rand_normal<double>(Shape{2, 2, 3, 3, 3}, rng);
    Tensor<double> b = rand_normal<double>(Shape{2}, rng);
    check_rel("conv3d",
              gradcheck<double>(
                  [](const std::vector<Var<double>>& v) {
                    return sum_all(tanh_op(conv3d(v[0], v[1], v[2], 2, 2)));
                  },
                  {x, w, b}),
              1e-6);
  }
  {
    Tensor<double> x = rand_normal<double>(Shape{3, 2, 4, 4}, rng);
    Tensor<double> gamma = rand_uniform<double>(Shape{2}, rng, 0.5, 1.5);
    Tensor<double> beta = rand_normal<double>(Shape{2}, rng);
    check_rel("batchnorm",
              gradcheck<double>(
                  [](const std::vector<Var<double>>& v) {
                    Tensor<double> rm(Shape{2}), rv(Shape{2}, 1.0);
                    return sum_all(
                        tanh_op(batchnorm(v[0], v[1], v[2], &rm, &rv, /*training=*/true)));
                  },
                  {x, gamma, beta}),
              1e-6);
  }
  {
    Tensor<double> x = rand_normal<double>(Shape{1, 2, 4, 4}, rng);
    Tensor<double> w = rand_normal<double>(Shape{2, 2, 3, 3}, rng);
    Tensor<double> b = rand_normal<double>(Shape{2}, rng);
    Tensor<double> mask(w.shape(), 1.0);
    Rng mr(5);
    for (int64_t i = 0; i < mask.numel(); ++i)
      if (mr.uniform() < 0.4) mask[i] = 0.0;
    check_rel("masked_conv2d",
              gradcheck<double>(
                  [&mask](const std::vector<Var<double>>& v) {
                    return sum_all(tanh_op(masked_conv2d(v[0], v[1], v[2], mask)));
                  },
                  {x, w, b}),
              1e-6);
    check_rel("gated_activation",
              gradcheck<double>(
                  [](const std::vector<Var<double>>& v) {
                    return sum_all(gated_activation(v[0]));
                  },
                  {Tensor<double>(rand_normal<double>(Shape{1, 4, 3, 3}, rng))}),
              1e-6);
  }
  {
    Tensor<double> x = rand_uniform<double>(Shape{1, 1, 16, 16}, rng, 0.0, 255.0);
    Tensor<double> y = rand_uniform<double>(Shape{1, 1, 16, 16}, rng, 0.0, 255.0);
    check_rel("ms_ssim",
              gradcheck<double>(
                  [](const std::vector<Var<double>>& v) { return ms_ssim(v[0], v[1], 2); },
                  {x, y}, 1e-3, 64),
              1e-4);
  }
  {
    const int l = 4;
    Tensor<double> q = rand_uniform<double>(Shape{1, 2 * l, 3, 3}, rng, 0.05, 1.0);
    Tensor<double> logits = rand_normal<double>(Shape{1, 2 * l, 3, 3}, rng);
    check_rel("rate_bits",
              gradcheck<double>(
                  [l](const std::vector<Var<double>>& v) {
                    return rate_bits(v[0], group_log_softmax(v[1], l));
                  },
                  {q, logits}),
              1e-6);
  }
}

void selftest_coder(Suite* s) {
  Rng rng(302);
  for (int l : {2, 8, 256}) {
    const int n = 20000;
    std::vector<int> symbols(n);
    std::vector<QuantizedPmf> pmfs(n);
    double ideal_bits = 0.0;
    for (int i = 0; i < n; ++i) {
      std::vector<float> p(static_cast<size_t>(l));
      float sum = 0.0f;
      for (float& v : p) {
        v = static_cast<float>(rng.uniform(0.01, 1.0));
        sum += v;
      }
      for (float& v : p) v /= sum;
      pmfs[i] = quantize_pmf(p);
      symbols[i] = static_cast<int>(rng.below(static_cast<uint64_t>(l)));
      ideal_bits += pmf_bits(pmfs[i], symbols[i]);
    }
    RangeEncoder enc;
    for (int i = 0; i < n; ++i) enc.encode_symbol(pmfs[i], symbols[i]);
    std::vector<uint8_t> stream = enc.finish();
    RangeDecoder dec(stream);
    bool exact = true;
    for (int i = 0; i < n; ++i)
      if (dec.decode_symbol(pmfs[i]) != symbols[i]) exact = false;
    s->expect(exact, strcat_("L=", l, ": decoded symbols differ"));
    s->expect(8.0 * static_cast<double>(stream.size()) <= ideal_bits + 64.0,
              strcat_("L=", l, ": stream exceeds ideal length + flush slack"));
  }
}

void selftest_causality(Suite* s) {
  for (PriorVariant v : {PriorVariant::kNone, PriorVariant::kFrame, PriorVariant::kGru}) {
    PriorConfig cfg;
    cfg.variant = v;
    cfg.groups = 2;
    cfg.codebook = 4;
    cfg.hidden = 2;
    cfg.layers = 2;
    cfg.kernel = 3;
    cfg.gru_hidden = 3;
    ParamStore<float> ps(303);
    LatentPrior<float> m(ps, cfg);
    Rng wr(304);
    for (auto& p : ps.params)
      for (int64_t i = 0; i < p->value.numel(); ++i)
        p->value[i] = static_cast<float>(0.3 * wr.normal());

    const Shape cs{2, cfg.groups, 3, 3};
    Tensor<int32_t> codes(cs);
    Rng cr(305);
    for (int64_t i = 0; i < codes.numel(); ++i)
      codes.data()[i] = static_cast<int32_t>(cr.below(static_cast<uint64_t>(cfg.codebook)));

    PriorEvaluator ev(m);
    Tensor<float> pm = ev.pmfs(codes);
    auto order_of = [&](int t, int g, int y, int x) {
      return ((static_cast<int64_t>(t) * cs[2] + y) * cs[3] + x) * cs[1] + g;
    };
    bool cond_ok = true, causal_ok = true;
    for (int t = 0; t < cs[0]; ++t)
      for (int y = 0; y < cs[2]; ++y)
        for (int x = 0; x < cs[3]; ++x)
          for (int g = 0; g < cs[1]; ++g) {
            std::vector<float> p = ev.conditional_at(codes, t, g, y, x);
            for (int sym = 0; sym < cfg.codebook; ++sym)
              if (p[static_cast<size_t>(sym)] != pm.at(t, g, y, x, sym)) cond_ok = false;
            // Scramble everything at or after this position in decode order.
            Tensor<int32_t> junk = codes;
            Rng jr(static_cast<uint64_t>(order_of(t, g, y, x)) + 99);
            for (int tt = 0; tt < cs[0]; ++tt)
              for (int yy = 0; yy < cs[2]; ++yy)
                for (int xx = 0; xx < cs[3]; ++xx)
                  for (int gg = 0; gg < cs[1]; ++gg)
                    if (order_of(tt, gg, yy, xx) >= order_of(t, g, y, x))
                      junk.at(tt, gg, yy, xx) =
                          static_cast<int32_t>(jr.below(static_cast<uint64_t>(cfg.codebook)));
            std::vector<float> pj = ev.conditional_at(junk, t, g, y, x);
            for (int sym = 0; sym < cfg.codebook; ++sym)
              if (pj[static_cast<size_t>(sym)] != p[static_cast<size_t>(sym)]) causal_ok = false;
          }
    const char* vn = prior_variant_name(v);
    s->expect(cond_ok, strcat_(vn, ": conditional_at != teacher-forced PMFs"));
    s->expect(causal_ok, strcat_(vn, ": PMFs depend on non-causal positions"));

    RangeEncoder enc;
    ev.encode(codes, enc);
    std::vector<uint8_t> stream = enc.finish();
    RangeDecoder dec(stream);
    Tensor<int32_t> back = ev.decode(cs[0], cs[2], cs[3], dec);
    bool rt = back.shape() == cs;
    for (int64_t i = 0; rt && i < codes.numel(); ++i)
      if (back.data()[i] != codes.data()[i]) rt = false;
    s->expect(rt, strcat_(vn, ": model-driven coding round trip failed"));
  }
}

void selftest_quantizer(Suite* s) {
  Rng rng(306);
  Tensor<float> centers = uniform_centers<float>(8);
  Tensor<float> z = rand_normal<float>(Shape{1, 4, 50, 50}, rng);
  for (int64_t i = 0; i < z.numel(); ++i) z.data()[i] *= 2.0f;
  Tensor<int32_t> hard = quantize_hard(z, centers);
  Tensor<float> soft = soft_assign(z, centers, 1e7f);
  bool agree = true;
  const int l = 8;
  // soft_assign appends the L axis: assignments for element i are flat at i*l.
  for (int64_t i = 0; i < z.numel() && agree; ++i) {
    int arg = 0;
    float best = soft[i * l];
    for (int sym = 1; sym < l; ++sym)
      if (soft[i * l + sym] > best) {
        best = soft[i * l + sym];
        arg = sym;
      }
    if (arg != hard[i]) agree = false;
  }
  s->expect(agree, "argmax(soft_assign, tau=1e7) disagrees with quantize_hard");
}

void selftest_container(Suite* s) {
  ContainerHeader h;
  h.t_frames = 10;
  h.channels = 3;
  h.height = 64;
  h.width = 48;
  h.groups = 4;
  h.codebook = 8;
  h.prior_tag = 1;
  h.chunk_t = 8;
  for (int i = 0; i < 8; ++i) h.model_hash[static_cast<size_t>(i)] = static_cast<uint8_t>(i);
  h.centers.assign(8, 0.0f);
  for (int i = 0; i < 8; ++i) h.centers[static_cast<size_t>(i)] = static_cast<float>(i) - 3.5f;
  std::vector<uint8_t> payload = {1, 2, 3, 4, 5};
  std::vector<uint8_t> bytes = write_container(h, payload);
  ParsedContainer pc = parse_container(bytes);
  s->expect(pc.header.t_frames == 10 && pc.header.width == 48 && pc.payload == payload,
            "container round trip mangled fields");
  bool caught = false;
  std::vector<uint8_t> bad = bytes;
  bad[bytes.size() - 6] ^= 0x40;  // payload byte (CRC trails by 4)
  try {
    parse_container(bad);
  } catch (const Error&) {
    caught = true;
  }
  s->expect(caught, "corrupted payload accepted");
}

int cmd_self_test() {
  struct Entry {
    const char* name;
    void (*fn)(Suite*);
  };
  const Entry entries[] = {
      {"gradient-checks", selftest_gradients}, {"coder-round-trip", selftest_coder},
      {"causality", selftest_causality},       {"quantizer-agreement", selftest_quantizer},
      {"container-integrity", selftest_container},
  };
  int passed = 0, total = 0;
  for (const Entry& e : entries) {
    Suite s;
    s.name = e.name;
    e.fn(&s);
    ++total;
    const bool ok = s.failures == 0;
    if (ok) ++passed;
    std::cout << "self-test " << e.name << ": " << (ok ? "PASS" : "FAIL") << " ("
              << (s.checks - s.failures) << "/" << s.checks << " checks)\n";
  }
  std::cout << "self-test: " << passed << "/" << total << " suites passed\n";
  return passed == total ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"nvc: learned video codec (train / code / evaluate)"};
  app.require_subcommand(1);

  TrainCli train_opts;
  CLI::App* train_cmd = app.add_subcommand("train", "train a model from scratch");
  add_train_flags(train_cmd, &train_opts, /*with_arch=*/true);

  TrainCli ft_opts;
  std::string ft_model;
  CLI::App* ft_cmd = app.add_subcommand("finetune", "continue training a checkpoint");
  ft_cmd->add_option("--model", ft_model, "input checkpoint")->required();
  add_train_flags(ft_cmd, &ft_opts, /*with_arch=*/false);

  CodecCli enc_opts;
  CLI::App* enc_cmd = app.add_subcommand("encode", "compress frames to a bitstream");
  enc_cmd->add_option("--model", enc_opts.model_path, "checkpoint")->required();
  enc_cmd->add_option("--in", enc_opts.in_path, "PPM directory or raw video file")->required();
  enc_cmd->add_option("--out", enc_opts.out_path, "bitstream output path")->required();
  enc_cmd->add_option("--chunk-t", enc_opts.chunk_t, "frames per coded chunk");
  enc_cmd->add_option("--threads", enc_opts.threads, "worker threads (1 = bitwise reproducible; all current paths are serial)")
      ->check(CLI::PositiveNumber);

  CodecCli dec_opts;
  std::string dec_format = "ppm";
  CLI::App* dec_cmd = app.add_subcommand("decode", "decompress a bitstream to frames");
  dec_cmd->add_option("--model", dec_opts.model_path, "checkpoint")->required();
  dec_cmd->add_option("--in", dec_opts.in_path, "bitstream path")->required();
  dec_cmd->add_option("--out", dec_opts.out_path, "output directory (ppm) or file (raw)")
      ->required();
  dec_cmd->add_option("--format", dec_format, "output format")
      ->check(CLI::IsMember({"ppm", "raw"}));
  dec_cmd->add_option("--threads", dec_opts.threads, "worker threads (1 = bitwise reproducible; all current paths are serial)")
      ->check(CLI::PositiveNumber);

  EvalCli eval_opts;
  CLI::App* eval_cmd = app.add_subcommand("eval", "rate/distortion report for one model");
  eval_cmd->add_option("--model", eval_opts.model_path, "checkpoint")->required();
  eval_cmd->add_option("--in", eval_opts.in_path, "evaluation frames")->required();
  eval_cmd->add_option("--beta", eval_opts.beta, "beta label for the CSV row");
  add_eval_data_flags(eval_cmd, &eval_opts);

  EvalCli rd_opts;
  std::string rd_models, rd_betas;
  CLI::App* rd_cmd = app.add_subcommand("rd-curve", "rate/distortion CSV across checkpoints");
  rd_cmd->add_option("--models", rd_models, "comma-separated checkpoint list")->required();
  rd_cmd->add_option("--data,--in", rd_opts.in_path, "evaluation frames")->required();
  rd_cmd->add_option("--betas", rd_betas, "comma-separated beta labels (one per model)");
  add_eval_data_flags(rd_cmd, &rd_opts);

  CLI::App* st_cmd = app.add_subcommand("self-test", "run the built-in invariant suite");

  try {
    app.parse(argc, argv);
    if (*train_cmd) return cmd_train(train_cmd, train_opts);
    if (*ft_cmd) return cmd_finetune(ft_cmd, ft_opts, ft_model);
    if (*enc_cmd) return cmd_encode(enc_opts);
    if (*dec_cmd) return cmd_decode(dec_opts, dec_format);
    if (*eval_cmd) return cmd_eval(eval_opts);
    if (*rd_cmd) return cmd_rd_curve(rd_opts, rd_models, rd_betas);
    if (*st_cmd) return cmd_self_test();
    return 2;
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 2;  // keep --help at 0, all usage errors at 2
  } catch (const Error& e) {
    std::cerr << "nvc: error: " << one_line(e.what()) << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "nvc: error: " << one_line(e.what()) << "\n";
    return 1;
  }
}
