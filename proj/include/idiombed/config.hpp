#pragma once

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "idiombed/common.hpp"
#include "idiombed/model.hpp"
#include "idiombed/noising.hpp"
#include "idiombed/probes.hpp"
#include "idiombed/training.hpp"

namespace idiombed {

struct RunPaths {
  std::string corpus;
  std::string dictionary;
  std::string groups;
  std::string out_dir = "runs/run";
  std::string external_vectors;  // precomputed definition vectors (encoder=external)
};

// The experiment variants; each one pins the noising/loss fields it defines.
inline const std::vector<std::string>& variant_names() {
  static const std::vector<std::string> v = {"base",        "iti",       "iti+si",
                                             "iti+sf",      "iti+sf+copy", "iti+sf+si",
                                             "full-finetune"};
  return v;
}

struct RunConfig {
  RunPaths paths;
  BackboneConfig backbone;
  AdapterSpec adapter;
  NoisingPolicy noising;
  TrainConfig train;
  ProbeConfig probe_disambiguation = ProbeConfig::defaults_for("disambiguation");
  ProbeConfig probe_span = ProbeConfig::defaults_for("span");
  std::string variant = "iti+sf+si";
  uint64_t seed = 0;
  ExtractionSide extraction_side = ExtractionSide::decoder;
  bool freeze_backbone = true;
  std::string bank_split = "test";    // split used for IE banks
  std::string encoder = "backbone";   // definition encoder binding
  int n_clusters = 0;                 // 0: one cluster per meaning group

  uint64_t config_hash() const;
  nlohmann::json to_json() const;
};

namespace detail {

// Fields a variant pins. Checked after overrides so an inconsistent explicit
// setting is a validation error rather than silently honored.
struct VariantPin {
  std::optional<double> p_iti;
  std::optional<double> w_sf;
  std::optional<CompanionMode> companion;
  std::optional<bool> sf_on_iti;
  std::optional<double> template_mix;
  bool freeze = true;
  bool trains = true;
};

inline VariantPin variant_pin(const std::string& variant) {
  VariantPin pin;
  if (variant == "base") {
    pin.trains = false;
  } else if (variant == "iti") {
    pin.p_iti = 1.0;
    pin.w_sf = 0.0;
    pin.sf_on_iti = false;
    pin.template_mix = 0.0;
  } else if (variant == "iti+si") {
    pin.p_iti = 0.5;
    pin.w_sf = 0.0;
    pin.companion = CompanionMode::span_infilling;
    pin.sf_on_iti = false;
  } else if (variant == "iti+sf") {
    pin.p_iti = 1.0;
    pin.w_sf = 1.0;
    pin.sf_on_iti = true;  // sole similarity-forcing route when every example is ITI
    pin.template_mix = 0.0;
  } else if (variant == "iti+sf+copy") {
    pin.p_iti = 0.5;
    pin.w_sf = 1.0;
    pin.companion = CompanionMode::copy;
    pin.sf_on_iti = false;
  } else if (variant == "iti+sf+si") {
    pin.p_iti = 0.5;
    pin.w_sf = 1.0;
    pin.companion = CompanionMode::span_infilling;
    pin.sf_on_iti = false;
  } else if (variant == "full-finetune") {
    pin.p_iti = 0.5;
    pin.w_sf = 0.0;
    pin.companion = CompanionMode::span_infilling;
    pin.sf_on_iti = false;
    pin.freeze = false;
  } else {
    throw ValidationError("unknown variant: " + variant);
  }
  return pin;
}

inline nlohmann::json variant_patch(const std::string& variant) {
  const VariantPin pin = variant_pin(variant);
  nlohmann::json j;
  if (pin.p_iti) j["noising"]["p_iti"] = *pin.p_iti;
  if (pin.w_sf) j["train"]["w_sf"] = *pin.w_sf;
  if (pin.companion) j["noising"]["companion_mode"] = to_string(*pin.companion);
  if (pin.sf_on_iti) j["train"]["sf_on_iti"] = *pin.sf_on_iti;
  if (pin.template_mix) j["noising"]["template_mix"] = *pin.template_mix;
  j["freeze_backbone"] = pin.freeze;
  return j;
}

inline void merge_patch(nlohmann::json& base, const nlohmann::json& patch) {
  if (!patch.is_object()) {
    base = patch;
    return;
  }
  if (!base.is_object()) base = nlohmann::json::object();
  for (const auto& [key, value] : patch.items()) {
    if (value.is_object())
      merge_patch(base[key], value);
    else
      base[key] = value;
  }
}

// Parses a --set override "section.key=value" into a one-key patch; values
// parse as JSON when possible, else as strings.
inline nlohmann::json override_patch(const std::string& spec) {
  const size_t eq = spec.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ValidationError("override must look like key.path=value: " + spec);
  const std::string path = spec.substr(0, eq);
  const std::string raw = spec.substr(eq + 1);
  nlohmann::json value;
  try {
    value = nlohmann::json::parse(raw);
  } catch (const nlohmann::json::exception&) {
    value = raw;
  }
  nlohmann::json patch;
  nlohmann::json* at = &patch;
  size_t from = 0;
  while (true) {
    const size_t dot = path.find('.', from);
    const std::string key = path.substr(from, dot == std::string::npos ? dot : dot - from);
    if (key.empty()) throw ValidationError("empty key segment in override: " + spec);
    if (dot == std::string::npos) {
      (*at)[key] = value;
      break;
    }
    at = &(*at)[key];
    from = dot + 1;
  }
  return patch;
}

}  // namespace detail

inline nlohmann::json RunConfig::to_json() const {
  nlohmann::json j;
  j["paths"] = {{"corpus", paths.corpus},
                {"dictionary", paths.dictionary},
                {"groups", paths.groups},
                {"out_dir", paths.out_dir},
                {"external_vectors", paths.external_vectors}};
  j["backbone"] = {{"vocab_size", backbone.vocab_size},   {"num_layers", backbone.num_layers},
                   {"hidden_dim", backbone.hidden_dim},   {"num_heads", backbone.num_heads},
                   {"max_positions", backbone.max_positions}, {"checkpoint", backbone.checkpoint},
                   {"tiny_mode", backbone.tiny_mode}};
  j["adapter"] = {{"reduction_factor", adapter.reduction_factor},
                  {"nonlinearity", adapter.nonlinearity},
                  {"init_scale", adapter.init_scale}};
  j["noising"] = {{"p_iti", noising.p_iti},
                  {"span_lambda", noising.span_lambda},
                  {"mask_sentinel", noising.mask_sentinel},
                  {"companion_mode", to_string(noising.companion_mode)},
                  {"template_mix", noising.template_mix}};
  j["train"] = {{"epochs", train.epochs},
                {"batch_size", train.batch_size},
                {"learning_rate", train.learning_rate},
                {"w_rec", train.w_rec},
                {"w_sf", train.w_sf},
                {"checkpoint_cadence", train.checkpoint_cadence},
                {"validation_fraction", train.validation_fraction},
                {"sf_on_iti", train.sf_on_iti}};
  auto probe_json = [](const ProbeConfig& p) {
    return nlohmann::json{{"epochs", p.epochs},
                          {"batch_size", p.batch_size},
                          {"dropout", p.dropout},
                          {"learning_rate", p.learning_rate}};
  };
  j["probe_disambiguation"] = probe_json(probe_disambiguation);
  j["probe_span"] = probe_json(probe_span);
  j["variant"] = variant;
  j["seed"] = seed;
  j["extraction_side"] = to_string(extraction_side);
  j["freeze_backbone"] = freeze_backbone;
  j["bank_split"] = bank_split;
  j["encoder"] = encoder;
  j["n_clusters"] = n_clusters;
  return j;
}

inline uint64_t RunConfig::config_hash() const { return hash_string(to_json().dump()); }

inline RunConfig config_from_json(const nlohmann::json& j) {
  RunConfig cfg;
  if (j.contains("paths")) {
    const auto& p = j.at("paths");
    cfg.paths.corpus = p.value("corpus", cfg.paths.corpus);
    cfg.paths.dictionary = p.value("dictionary", cfg.paths.dictionary);
    cfg.paths.groups = p.value("groups", cfg.paths.groups);
    cfg.paths.out_dir = p.value("out_dir", cfg.paths.out_dir);
    cfg.paths.external_vectors = p.value("external_vectors", cfg.paths.external_vectors);
  }
  if (j.contains("backbone")) {
    const auto& b = j.at("backbone");
    cfg.backbone.vocab_size = b.value("vocab_size", cfg.backbone.vocab_size);
    cfg.backbone.num_layers = b.value("num_layers", cfg.backbone.num_layers);
    cfg.backbone.hidden_dim = b.value("hidden_dim", cfg.backbone.hidden_dim);
    cfg.backbone.num_heads = b.value("num_heads", cfg.backbone.num_heads);
    cfg.backbone.max_positions = b.value("max_positions", cfg.backbone.max_positions);
    cfg.backbone.checkpoint = b.value("checkpoint", cfg.backbone.checkpoint);
    cfg.backbone.tiny_mode = b.value("tiny_mode", cfg.backbone.tiny_mode);
  }
  if (j.contains("adapter")) {
    const auto& a = j.at("adapter");
    cfg.adapter.reduction_factor = a.value("reduction_factor", cfg.adapter.reduction_factor);
    cfg.adapter.nonlinearity = a.value("nonlinearity", cfg.adapter.nonlinearity);
    cfg.adapter.init_scale = a.value("init_scale", cfg.adapter.init_scale);
  }
  if (j.contains("noising")) {
    const auto& n = j.at("noising");
    cfg.noising.p_iti = n.value("p_iti", cfg.noising.p_iti);
    cfg.noising.span_lambda = n.value("span_lambda", cfg.noising.span_lambda);
    cfg.noising.mask_sentinel = n.value("mask_sentinel", cfg.noising.mask_sentinel);
    if (n.contains("companion_mode"))
      cfg.noising.companion_mode = companion_mode_from_string(n.at("companion_mode").get<std::string>());
    cfg.noising.template_mix = n.value("template_mix", cfg.noising.template_mix);
  }
  if (j.contains("train")) {
    const auto& t = j.at("train");
    cfg.train.epochs = t.value("epochs", cfg.train.epochs);
    cfg.train.batch_size = t.value("batch_size", cfg.train.batch_size);
    cfg.train.learning_rate = t.value("learning_rate", cfg.train.learning_rate);
    cfg.train.w_rec = t.value("w_rec", cfg.train.w_rec);
    cfg.train.w_sf = t.value("w_sf", cfg.train.w_sf);
    cfg.train.checkpoint_cadence = t.value("checkpoint_cadence", cfg.train.checkpoint_cadence);
    cfg.train.validation_fraction = t.value("validation_fraction", cfg.train.validation_fraction);
    cfg.train.sf_on_iti = t.value("sf_on_iti", cfg.train.sf_on_iti);
  }
  auto read_probe = [&](const char* key, ProbeConfig& p) {
    if (!j.contains(key)) return;
    const auto& q = j.at(key);
    p.epochs = q.value("epochs", p.epochs);
    p.batch_size = q.value("batch_size", p.batch_size);
    p.dropout = q.value("dropout", p.dropout);
    p.learning_rate = q.value("learning_rate", p.learning_rate);
  };
  read_probe("probe_disambiguation", cfg.probe_disambiguation);
  read_probe("probe_span", cfg.probe_span);
  cfg.variant = j.value("variant", cfg.variant);
  cfg.seed = j.value("seed", cfg.seed);
  if (j.contains("extraction_side"))
    cfg.extraction_side = extraction_side_from_string(j.at("extraction_side").get<std::string>());
  cfg.freeze_backbone = j.value("freeze_backbone", cfg.freeze_backbone);
  cfg.bank_split = j.value("bank_split", cfg.bank_split);
  cfg.encoder = j.value("encoder", cfg.encoder);
  cfg.n_clusters = j.value("n_clusters", cfg.n_clusters);
  return cfg;
}

// Checks that preset-pinned fields were not overridden inconsistently.
inline void validate_variant_consistency(const RunConfig& cfg) {
  const detail::VariantPin pin = detail::variant_pin(cfg.variant);
  auto mismatch = [&](const std::string& what) {
    throw ValidationError("variant " + cfg.variant + " requires " + what);
  };
  if (pin.p_iti && cfg.noising.p_iti != *pin.p_iti)
    mismatch("noising.p_iti = " + std::to_string(*pin.p_iti));
  if (pin.w_sf && cfg.train.w_sf != *pin.w_sf)
    mismatch("train.w_sf = " + std::to_string(*pin.w_sf));
  if (pin.companion && cfg.noising.companion_mode != *pin.companion)
    mismatch("noising.companion_mode = " + to_string(*pin.companion));
  if (pin.sf_on_iti && cfg.train.sf_on_iti != *pin.sf_on_iti) mismatch("train.sf_on_iti = true");
  if (cfg.freeze_backbone != pin.freeze)
    mismatch(std::string("freeze_backbone = ") + (pin.freeze ? "true" : "false"));
  cfg.noising.validate();
  cfg.train.validate();
  cfg.backbone.validate();
  cfg.probe_disambiguation.validate();
  cfg.probe_span.validate();
  if (cfg.bank_split != "train" && cfg.bank_split != "test" && cfg.bank_split != "all")
    throw ValidationError("bank_split must be train, test or all");
  if (cfg.encoder != "backbone" && cfg.encoder != "external")
    throw ValidationError("encoder must be backbone or external");
}

inline bool variant_trains(const std::string& variant) {
  return detail::variant_pin(variant).trains;
}

// Load order: defaults <- variant preset <- config file <- --set overrides;
// the CLI-level --variant/--seed/--out flags are applied as overrides too.
inline RunConfig load_run_config(const fs::path& config_path,
                                 const std::vector<std::string>& overrides,
                                 const std::optional<std::string>& variant_flag = std::nullopt,
                                 const std::optional<uint64_t>& seed_flag = std::nullopt,
                                 const std::optional<std::string>& out_flag = std::nullopt) {
  nlohmann::json file = nlohmann::json::object();
  if (!config_path.empty()) {
    try {
      file = nlohmann::json::parse(read_file(config_path));
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("config parse error in " + config_path.string() + ": " + e.what());
    }
  }
  std::string variant = file.value("variant", std::string("iti+sf+si"));
  if (variant_flag) variant = *variant_flag;

  nlohmann::json merged = detail::variant_patch(variant);
  merged["variant"] = variant;
  detail::merge_patch(merged, file);
  merged["variant"] = variant;  // the flag wins over the file tag
  for (const auto& o : overrides) detail::merge_patch(merged, detail::override_patch(o));
  if (seed_flag) merged["seed"] = *seed_flag;
  if (out_flag) merged["paths"]["out_dir"] = *out_flag;

  RunConfig cfg = config_from_json(merged);
  validate_variant_consistency(cfg);
  return cfg;
}

}  // namespace idiombed
