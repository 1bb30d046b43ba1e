#pragma once

// Experiment runners: pretraining with per-step metrics, fine-tuning cells,
// and the ablation matrices. Every CSV carries a header and the seed of each row.

#include "rfrp/finetune.hpp"
#include "rfrp/harness/checkpoint.hpp"
#include "rfrp/harness/config.hpp"
#include "rfrp/harness/dataset.hpp"

#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

namespace rfrp::harness {

/// Shortest text that reads back to the same double.
std::string format_double(double v);

class CsvWriter {
 public:
  /// Truncates when append is false or the file is new; writes the header then.
  CsvWriter(const std::string& path, const std::vector<std::string>& header, bool append = false);
  void row(const std::vector<std::string>& cells);

 private:
  std::string path_;
  std::size_t columns_;
};

inline const std::vector<std::string> kPretrainCsvHeader{"step", "scene_id", "lr",  "cons",
                                                          "bal",  "lat",      "total", "expert_counts"};
std::vector<std::string> pretrain_csv_row(const pretrain::StepResult& r);

using StepCallback = std::function<void(const pretrain::StepResult&)>;

/// Training samples of a pretrain scene (the held-out tail excluded).
std::vector<const data::Sample*> pretrain_pool(const data::SceneData& scene, double holdout_fraction);
std::vector<const data::Sample*> holdout_pool(const data::SceneData& scene, double holdout_fraction);

/// Advances state to step `until` (capped at total steps). Scenes rotate
/// round-robin by step; batches and masks draw from state.rng.
void pretrain_steps(const ExperimentConfig& config, const Dataset& dataset, ModelState& state, long until,
                    const StepCallback& on_step = {});

/// Fresh state from seed, full pretraining budget; rows go to metrics_csv when non-empty.
ModelState run_pretrain(const ExperimentConfig& config, const Dataset& dataset, std::uint64_t seed,
                        const std::string& metrics_csv = "");

struct SsimRow {
  std::uint64_t seed = 0;
  std::string scene_id;
  std::size_t samples = 0;
  double mean_ssim = 0.0;
  double min_ssim = 0.0;
};
/// SSIM of masked-input reconstructions on the held-out tail of every pretrain scene.
std::vector<SsimRow> ssim_eval(const ExperimentConfig& config, const Dataset& dataset, ModelState& state,
                               std::uint64_t seed);

struct ErrorRow {
  std::string kind;
  std::string variant;  // pretrained, scratch, triangulation, mask ratio, or MoE variant
  std::string scene_id;
  double label_fraction = 0.0;
  std::uint64_t seed = 0;
  finetune::ErrorStats stats;  // meters
};

/// Fine-tunes `encoder` on every test scene at `fraction`.
std::vector<ErrorRow> finetune_cells(const ExperimentConfig& config, const Dataset& dataset,
                                     const encoder::EncoderParams& encoder, std::uint64_t seed, double fraction,
                                     const std::string& kind, const std::string& variant);
/// Direction-intersection baseline on the same test splits.
std::vector<ErrorRow> triangulation_cells(const ExperimentConfig& config, const Dataset& dataset, std::uint64_t seed,
                                          double fraction);

inline const std::vector<std::string> kErrorCsvHeader{"kind",    "variant", "scene_id", "label_fraction", "seed",
                                                       "mean_cm", "median_cm", "p25_cm", "p75_cm", "p90_cm"};
std::vector<std::string> error_csv_row(const ErrorRow& r);

struct MoeVariant {
  std::string name;
  bool enabled = true;
  moe::MoeConfig moe;
};
/// none, top1, top2, shared_top1, shared_top2.
std::vector<MoeVariant> moe_variants();

struct AblationResult {
  std::vector<ErrorRow> errors;
  std::vector<SsimRow> ssim;
  std::string csv_path;
};

/// kind: pretrain_vs_scratch, mask_sweep, moe_configs, ssim_eval. Writes
/// <output_dir>/ablation_<kind>.csv. `log` receives progress lines.
AblationResult run_ablation(const std::string& kind, const ExperimentConfig& config, const Dataset& dataset,
                            const std::function<void(const std::string&)>& log = {});

}  // namespace rfrp::harness
