#pragma once

// Declarative experiment description. Together with the seed list it fully
// determines every run; it round-trips through JSON.

#include "rfrp/encoder.hpp"
#include "rfrp/finetune.hpp"
#include "rfrp/pretrain.hpp"
#include "rfrp/rfnerf.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace rfrp::harness {

struct DatasetConfig {
  int pretrain_scenes = 8;
  int test_scenes = 2;
  int samples_per_scene = 2000;
  int test_samples_per_scene = 1000;
  double pretrain_label_fraction = 0.213;
  double test_label_fraction = 1.0;
  double noise_std = 0.01;
  double wavelength = 0.125;
  int array_side = 4;
  int min_arrays = 2;
  int max_arrays = 3;
  int min_reflectors = 1;
  int max_reflectors = 4;

  void validate() const;
};

struct AblationConfig {
  std::vector<double> mask_ratios{0.10, 0.25, 0.50, 0.75, 0.90};
  long pretrain_steps = 0;  // 0 keeps pretrain.total_steps
  double label_fraction = 0.2;
};

struct ExperimentConfig {
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::uint64_t data_seed = 7;  // corpus generation; model seeds vary independently
  std::string output_dir = "runs/default";
  std::string data_dir;  // defaults to <output_dir>/data
  DatasetConfig dataset;
  encoder::EncoderConfig encoder;
  rfnerf::FieldConfig field;
  pretrain::PretrainConfig pretrain;
  double holdout_fraction = 0.1;  // tail of each pretrain scene kept out of pretraining
  finetune::FinetuneConfig finetune;
  std::vector<double> label_fractions{0.2, 0.4, 0.6, 0.8};
  AblationConfig ablation;

  std::string dataset_dir() const { return data_dir.empty() ? output_dir + "/data" : data_dir; }
  void validate() const;
};

/// Defaults used by the acceptance suite.
ExperimentConfig desk_config();

ExperimentConfig parse_config(const std::string& json_text);
/// Applies the keys present in json_text on top of base.
ExperimentConfig merge_config(const ExperimentConfig& base, const std::string& json_text);
ExperimentConfig load_config(const std::string& path);
std::string config_to_json(const ExperimentConfig& config);

}  // namespace rfrp::harness
