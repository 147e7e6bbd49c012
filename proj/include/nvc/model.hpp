// Model bundle: autoencoder + scalar codebook + latent prior sharing one
// parameter store.  This is the unit that checkpoints serialize and the
// codec/trainer operate on.
#pragma once

#include <map>
#include <memory>
#include <string>

#include "nvc/autoencoder.hpp"
#include "nvc/codemodel.hpp"
#include "nvc/quantizer.hpp"

namespace nvc {

struct ModelConfig {
  AutoencoderConfig ae;
  PriorConfig prior;
  uint64_t seed = 1;

  void validate() const {
    ae.validate();
    prior.validate();
    NVC_CHECK(ae.latent_channels == prior.groups,
              "latent channel count must match prior group count");
  }

  // Flat key/value view used by checkpoints and reports.  Round-trips through
  // from_kv below.
  std::map<std::string, std::string> to_kv() const {
    std::map<std::string, std::string> kv;
    kv["ae.mode"] = ae_mode_name(ae.mode);
    kv["ae.input_channels"] = std::to_string(ae.input_channels);
    kv["ae.latent_channels"] = std::to_string(ae.latent_channels);
    kv["ae.front_channels"] = std::to_string(ae.front_channels);
    kv["ae.hidden_channels"] = std::to_string(ae.hidden_channels);
    kv["ae.res_blocks"] = std::to_string(ae.res_blocks);
    kv["prior.variant"] = prior_variant_name(prior.variant);
    kv["prior.codebook"] = std::to_string(prior.codebook);
    kv["prior.hidden"] = std::to_string(prior.hidden);
    kv["prior.layers"] = std::to_string(prior.layers);
    kv["prior.kernel"] = std::to_string(prior.kernel);
    kv["prior.cond_kernel"] = std::to_string(prior.cond_kernel);
    kv["prior.gru_hidden"] = std::to_string(prior.gru_hidden);
    kv["seed"] = std::to_string(seed);
    return kv;
  }

  static ModelConfig from_kv(const std::map<std::string, std::string>& kv) {
    auto get = [&](const char* key) -> const std::string& {
      auto it = kv.find(key);
      NVC_CHECK(it != kv.end(), strcat_("missing config key: ", key));
      return it->second;
    };
    ModelConfig c;
    c.ae.mode = ae_mode_from_name(get("ae.mode"));
    c.ae.input_channels = std::stoi(get("ae.input_channels"));
    c.ae.latent_channels = std::stoi(get("ae.latent_channels"));
    c.ae.front_channels = std::stoi(get("ae.front_channels"));
    c.ae.hidden_channels = std::stoi(get("ae.hidden_channels"));
    c.ae.res_blocks = std::stoi(get("ae.res_blocks"));
    c.prior.variant = prior_variant_from_name(get("prior.variant"));
    c.prior.groups = c.ae.latent_channels;
    c.prior.codebook = std::stoi(get("prior.codebook"));
    c.prior.hidden = std::stoi(get("prior.hidden"));
    c.prior.layers = std::stoi(get("prior.layers"));
    c.prior.kernel = std::stoi(get("prior.kernel"));
    c.prior.cond_kernel = std::stoi(get("prior.cond_kernel"));
    c.prior.gru_hidden = std::stoi(get("prior.gru_hidden"));
    c.seed = std::stoull(get("seed"));
    c.validate();
    return c;
  }
};

// A constructed model.  Parameter layout (names, shapes, order) is a pure
// function of the config, which is what makes flat checkpoints loadable.
struct Model {
  ModelConfig cfg;
  ParamStore<float> ps;
  Autoencoder<float> ae;
  Var<float> codebook;  // (L,) quantizer centers, trained with the rest
  LatentPrior<float> prior;

  explicit Model(const ModelConfig& c)
      : cfg(c),
        ps((c.validate(), c.seed)),
        ae(ps, c.ae),
        codebook(ps.add("cb.centers", uniform_centers<float>(c.prior.codebook))),
        prior(ps, c.prior) {}
};

}  // namespace nvc
