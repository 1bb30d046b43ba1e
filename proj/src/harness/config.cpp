#include "rfrp/harness/config.hpp"

#include "json.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace rfrp::harness {

using nlohmann::json;

void DatasetConfig::validate() const {
  require(pretrain_scenes >= 1 && test_scenes >= 1, "dataset: scene counts must be >= 1");
  require(samples_per_scene >= 10 && test_samples_per_scene >= 10, "dataset: need >= 10 samples per scene");
  require(pretrain_label_fraction >= 0.0 && pretrain_label_fraction <= 1.0 && test_label_fraction >= 0.0 &&
              test_label_fraction <= 1.0,
          "dataset: label fractions must lie in [0, 1]");
  require(noise_std >= 0.0 && wavelength > 0.0 && array_side >= 2, "dataset: invalid radio parameters");
  require(min_arrays >= 2 && max_arrays <= 4 && min_arrays <= max_arrays, "dataset: arrays per scene must be 2..4");
  require(min_reflectors >= 0 && min_reflectors <= max_reflectors, "dataset: invalid reflector range");
}

void ExperimentConfig::validate() const {
  require(!seeds.empty(), "config: at least one seed is required");
  dataset.validate();
  encoder.validate();
  field.validate();
  pretrain.validate();
  finetune.validate();
  require(field.latent_dim == encoder.feature_dim, "config: field.latent_dim must equal encoder.feature_dim");
  require(holdout_fraction >= 0.0 && holdout_fraction < 1.0, "config: holdout_fraction outside [0, 1)");
  for (double f : label_fractions) require(f > 0.0 && f <= 0.8, "config: label fractions must lie in (0, 0.8]");
  for (double r : ablation.mask_ratios) pretrain::masked_count(r);
  require(ablation.pretrain_steps >= 0, "config: ablation.pretrain_steps must be >= 0");
}

ExperimentConfig desk_config() { return ExperimentConfig{}; }

namespace {

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  require(j.is_object(), "config: '" + where + "' must be an object");
  for (const auto& [key, value] : j.items()) {
    require(allowed.count(key) != 0, "config: unknown key '" + where + (where.empty() ? "" : ".") + key + "'");
  }
}

template <class T>
void get(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

json to_json(const optim::AdamConfig& a) {
  return {{"beta1", a.beta1}, {"beta2", a.beta2}, {"eps", a.eps}, {"weight_decay", a.weight_decay},
          {"clip_norm", a.clip_norm}};
}

void from_json_adam(const json& j, optim::AdamConfig& a, const std::string& where) {
  check_keys(j, {"beta1", "beta2", "eps", "weight_decay", "clip_norm"}, where);
  get(j, "beta1", a.beta1);
  get(j, "beta2", a.beta2);
  get(j, "eps", a.eps);
  get(j, "weight_decay", a.weight_decay);
  get(j, "clip_norm", a.clip_norm);
}

json to_json(const ExperimentConfig& c) {
  json j;
  j["seeds"] = c.seeds;
  j["data_seed"] = c.data_seed;
  j["output_dir"] = c.output_dir;
  j["data_dir"] = c.data_dir;
  const auto& d = c.dataset;
  j["dataset"] = {{"pretrain_scenes", d.pretrain_scenes},
                  {"test_scenes", d.test_scenes},
                  {"samples_per_scene", d.samples_per_scene},
                  {"test_samples_per_scene", d.test_samples_per_scene},
                  {"pretrain_label_fraction", d.pretrain_label_fraction},
                  {"test_label_fraction", d.test_label_fraction},
                  {"noise_std", d.noise_std},
                  {"wavelength", d.wavelength},
                  {"array_side", d.array_side},
                  {"min_arrays", d.min_arrays},
                  {"max_arrays", d.max_arrays},
                  {"min_reflectors", d.min_reflectors},
                  {"max_reflectors", d.max_reflectors}};
  const auto& e = c.encoder;
  j["encoder"] = {{"layers", e.layers},       {"embed_dim", e.embed_dim},     {"heads", e.heads},
                  {"ffn_dim", e.ffn_dim},     {"moe_layers", e.moe_layers},   {"feature_dim", e.feature_dim},
                  {"mlp_dim", e.mlp_dim}};
  j["moe"] = {{"experts", e.moe.experts}, {"shared", e.moe.shared}, {"top_k", e.moe.top_k}};
  const auto& f = c.field;
  j["field"] = {{"pe_dim", f.pe_dim},
                {"attenuation_layers", f.attenuation_layers},
                {"attenuation_width", f.attenuation_width},
                {"feature_dim", f.feature_dim},
                {"radiance_hidden", f.radiance_hidden},
                {"radiance_hidden2", f.radiance_hidden2},
                {"latent_dim", f.latent_dim},
                {"samples", f.samples}};
  const auto& p = c.pretrain;
  j["pretrain"] = {{"mask_ratio", p.mask_ratio},
                   {"lambda_cons", p.weights.cons},
                   {"lambda_bal", p.weights.bal},
                   {"lambda_lat", p.weights.lat},
                   {"adam", to_json(p.adam)},
                   {"lr_min", p.lr_min},
                   {"lr_max", p.lr_max},
                   {"warmup_fraction", p.warmup_fraction},
                   {"steps", p.total_steps},
                   {"batch_size", p.batch_size},
                   {"ray_samples", p.ray_samples},
                   {"holdout_fraction", c.holdout_fraction}};
  if (p.max_range) j["pretrain"]["max_range"] = *p.max_range;
  const auto& t = c.finetune;
  j["finetune"] = {{"label_fractions", c.label_fractions},
                   {"test_fraction", t.test_fraction},
                   {"steps", t.steps},
                   {"batch_size", t.batch_size},
                   {"lr_min", t.lr_min},
                   {"lr_max", t.lr_max},
                   {"warmup_fraction", t.warmup_fraction},
                   {"adam", to_json(t.adam)}};
  j["ablation"] = {{"mask_ratios", c.ablation.mask_ratios},
                   {"pretrain_steps", c.ablation.pretrain_steps},
                   {"label_fraction", c.ablation.label_fraction}};
  return j;
}

ExperimentConfig from_json(const json& j, ExperimentConfig c) {
  check_keys(j, {"seeds", "data_seed", "output_dir", "data_dir", "dataset", "encoder", "moe", "field", "pretrain", "finetune",
                 "ablation"},
             "");
  get(j, "seeds", c.seeds);
  get(j, "data_seed", c.data_seed);
  get(j, "output_dir", c.output_dir);
  get(j, "data_dir", c.data_dir);
  if (j.contains("dataset")) {
    const json& d = j.at("dataset");
    check_keys(d, {"pretrain_scenes", "test_scenes", "samples_per_scene", "test_samples_per_scene",
                   "pretrain_label_fraction", "test_label_fraction", "noise_std", "wavelength", "array_side",
                   "min_arrays", "max_arrays", "min_reflectors", "max_reflectors"},
               "dataset");
    auto& o = c.dataset;
    get(d, "pretrain_scenes", o.pretrain_scenes);
    get(d, "test_scenes", o.test_scenes);
    get(d, "samples_per_scene", o.samples_per_scene);
    get(d, "test_samples_per_scene", o.test_samples_per_scene);
    get(d, "pretrain_label_fraction", o.pretrain_label_fraction);
    get(d, "test_label_fraction", o.test_label_fraction);
    get(d, "noise_std", o.noise_std);
    get(d, "wavelength", o.wavelength);
    get(d, "array_side", o.array_side);
    get(d, "min_arrays", o.min_arrays);
    get(d, "max_arrays", o.max_arrays);
    get(d, "min_reflectors", o.min_reflectors);
    get(d, "max_reflectors", o.max_reflectors);
  }
  if (j.contains("encoder")) {
    const json& e = j.at("encoder");
    check_keys(e, {"layers", "embed_dim", "heads", "ffn_dim", "moe_layers", "feature_dim", "mlp_dim"}, "encoder");
    auto& o = c.encoder;
    get(e, "layers", o.layers);
    get(e, "embed_dim", o.embed_dim);
    get(e, "heads", o.heads);
    get(e, "ffn_dim", o.ffn_dim);
    get(e, "moe_layers", o.moe_layers);
    get(e, "feature_dim", o.feature_dim);
    get(e, "mlp_dim", o.mlp_dim);
  }
  if (j.contains("moe")) {
    const json& m = j.at("moe");
    check_keys(m, {"experts", "shared", "top_k"}, "moe");
    get(m, "experts", c.encoder.moe.experts);
    get(m, "shared", c.encoder.moe.shared);
    get(m, "top_k", c.encoder.moe.top_k);
  }
  if (j.contains("field")) {
    const json& f = j.at("field");
    check_keys(f, {"pe_dim", "attenuation_layers", "attenuation_width", "feature_dim", "radiance_hidden",
                   "radiance_hidden2", "latent_dim", "samples"},
               "field");
    auto& o = c.field;
    get(f, "pe_dim", o.pe_dim);
    get(f, "attenuation_layers", o.attenuation_layers);
    get(f, "attenuation_width", o.attenuation_width);
    get(f, "feature_dim", o.feature_dim);
    get(f, "radiance_hidden", o.radiance_hidden);
    get(f, "radiance_hidden2", o.radiance_hidden2);
    get(f, "latent_dim", o.latent_dim);
    get(f, "samples", o.samples);
  }
  if (j.contains("pretrain")) {
    const json& p = j.at("pretrain");
    check_keys(p, {"mask_ratio", "lambda_cons", "lambda_bal", "lambda_lat", "adam", "lr_min", "lr_max",
                   "warmup_fraction", "steps", "batch_size", "ray_samples", "holdout_fraction", "max_range"},
               "pretrain");
    auto& o = c.pretrain;
    get(p, "mask_ratio", o.mask_ratio);
    get(p, "lambda_cons", o.weights.cons);
    get(p, "lambda_bal", o.weights.bal);
    get(p, "lambda_lat", o.weights.lat);
    if (p.contains("adam")) from_json_adam(p.at("adam"), o.adam, "pretrain.adam");
    get(p, "lr_min", o.lr_min);
    get(p, "lr_max", o.lr_max);
    get(p, "warmup_fraction", o.warmup_fraction);
    get(p, "steps", o.total_steps);
    get(p, "batch_size", o.batch_size);
    get(p, "ray_samples", o.ray_samples);
    get(p, "holdout_fraction", c.holdout_fraction);
    if (p.contains("max_range")) {
      if (p.at("max_range").is_null()) {
        o.max_range.reset();
      } else {
        o.max_range = p.at("max_range").get<double>();
      }
    }
  }
  if (j.contains("finetune")) {
    const json& t = j.at("finetune");
    check_keys(t, {"label_fractions", "test_fraction", "steps", "batch_size", "lr_min", "lr_max", "warmup_fraction",
                   "adam"},
               "finetune");
    auto& o = c.finetune;
    get(t, "label_fractions", c.label_fractions);
    get(t, "test_fraction", o.test_fraction);
    get(t, "steps", o.steps);
    get(t, "batch_size", o.batch_size);
    get(t, "lr_min", o.lr_min);
    get(t, "lr_max", o.lr_max);
    get(t, "warmup_fraction", o.warmup_fraction);
    if (t.contains("adam")) from_json_adam(t.at("adam"), o.adam, "finetune.adam");
  }
  if (j.contains("ablation")) {
    const json& a = j.at("ablation");
    check_keys(a, {"mask_ratios", "pretrain_steps", "label_fraction"}, "ablation");
    get(a, "mask_ratios", c.ablation.mask_ratios);
    get(a, "pretrain_steps", c.ablation.pretrain_steps);
    get(a, "label_fraction", c.ablation.label_fraction);
  }
  c.validate();
  return c;
}

json parse_json(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("config: malformed JSON: ") + e.what());
  }
}

}  // namespace

ExperimentConfig merge_config(const ExperimentConfig& base, const std::string& json_text) {
  try {
    return from_json(parse_json(json_text), base);
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("config: ") + e.what());
  }
}

ExperimentConfig parse_config(const std::string& json_text) { return merge_config(desk_config(), json_text); }

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("config: cannot open '" + path + "'");
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str());
}

std::string config_to_json(const ExperimentConfig& config) { return to_json(config).dump(2) + "\n"; }

}  // namespace rfrp::harness
