#include "rfrp/harness/experiments.hpp"

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <numeric>

namespace rfrp::harness {

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

CsvWriter::CsvWriter(const std::string& path, const std::vector<std::string>& header, bool append)
    : path_(path), columns_(header.size()) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  const bool exists = std::filesystem::exists(path) && std::filesystem::file_size(path) > 0;
  if (!append || !exists) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("csv: cannot write '" + path + "'");
    for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
    out << '\n';
  }
}

void CsvWriter::row(const std::vector<std::string>& cells) {
  require(cells.size() == columns_, "csv: row has " + std::to_string(cells.size()) + " cells, header has " +
                                        std::to_string(columns_));
  std::ofstream out(path_, std::ios::binary | std::ios::app);
  if (!out) throw std::runtime_error("csv: cannot append to '" + path_ + "'");
  for (std::size_t i = 0; i < cells.size(); ++i) out << (i ? "," : "") << cells[i];
  out << '\n';
}

std::vector<std::string> pretrain_csv_row(const pretrain::StepResult& r) {
  std::string counts;
  for (std::size_t l = 0; l < r.expert_counts.size(); ++l) {
    if (l) counts += ';';
    for (std::size_t i = 0; i < r.expert_counts[l].size(); ++i) {
      if (i) counts += '/';
      counts += std::to_string(r.expert_counts[l][i]);
    }
  }
  return {std::to_string(r.step),        r.scene_id,
          format_double(r.lr),           format_double(r.loss.cons),
          format_double(r.loss.bal),     format_double(r.loss.lat),
          format_double(r.loss.total),   counts};
}

std::vector<const data::Sample*> pretrain_pool(const data::SceneData& scene, double holdout_fraction) {
  const std::size_t n = scene.samples.size();
  const auto keep = n - static_cast<std::size_t>(std::lround(holdout_fraction * static_cast<double>(n)));
  std::vector<const data::Sample*> out;
  for (std::size_t i = 0; i < keep; ++i) out.push_back(&scene.samples[i]);
  return out;
}

std::vector<const data::Sample*> holdout_pool(const data::SceneData& scene, double holdout_fraction) {
  const std::size_t n = scene.samples.size();
  const auto keep = n - static_cast<std::size_t>(std::lround(holdout_fraction * static_cast<double>(n)));
  std::vector<const data::Sample*> out;
  for (std::size_t i = keep; i < n; ++i) out.push_back(&scene.samples[i]);
  return out;
}

void pretrain_steps(const ExperimentConfig& config, const Dataset& dataset, ModelState& state, long until,
                    const StepCallback& on_step) {
  require(!dataset.pretrain.empty(), "pretrain: dataset has no pretrain scenes");
  until = std::min(until, config.pretrain.total_steps);
  pretrain::Pretrainer trainer(config.pretrain, state.encoder, state.registry, state.optimizer, state.rng);
  trainer.set_steps_done(state.step);
  std::vector<std::vector<const data::Sample*>> pools;
  for (const auto& s : dataset.pretrain) {
    pools.push_back(pretrain_pool(s, config.holdout_fraction));
    require(!pools.back().empty(), "pretrain: scene '" + s.scene.scene_id + "' has no training samples");
  }
  while (state.step < until) {
    const std::size_t k = static_cast<std::size_t>(state.step) % dataset.pretrain.size();
    const auto& pool = pools[k];
    const std::size_t batch = std::min(pool.size(), static_cast<std::size_t>(config.pretrain.batch_size));
    std::vector<std::size_t> order(pool.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<const data::Sample*> chosen;
    for (std::size_t i = 0; i < batch; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(state.rng.below(pool.size() - i));
      std::swap(order[i], order[j]);
      chosen.push_back(pool[order[i]]);
    }
    const auto result = trainer.step(chosen, dataset.pretrain[k].scene);
    state.step = trainer.steps_done();
    if (on_step) on_step(result);
  }
}

ModelState run_pretrain(const ExperimentConfig& config, const Dataset& dataset, std::uint64_t seed,
                        const std::string& metrics_csv) {
  config.validate();
  ModelState state = ModelState::fresh(config.encoder, config.field, seed);
  if (metrics_csv.empty()) {
    pretrain_steps(config, dataset, state, config.pretrain.total_steps);
  } else {
    CsvWriter csv(metrics_csv, kPretrainCsvHeader);
    pretrain_steps(config, dataset, state, config.pretrain.total_steps,
                   [&csv](const pretrain::StepResult& r) { csv.row(pretrain_csv_row(r)); });
  }
  return state;
}

std::vector<SsimRow> ssim_eval(const ExperimentConfig& config, const Dataset& dataset, ModelState& state,
                               std::uint64_t seed) {
  pretrain::Pretrainer trainer(config.pretrain, state.encoder, state.registry, state.optimizer, state.rng);
  std::vector<SsimRow> rows;
  for (const auto& scene : dataset.pretrain) {
    const auto pool = holdout_pool(scene, config.holdout_fraction);
    if (pool.empty()) continue;
    Rng mask_rng(mix_seed(seed, stable_hash("ssim/" + scene.scene.scene_id)));
    SsimRow row;
    row.seed = seed;
    row.scene_id = scene.scene.scene_id;
    row.min_ssim = 1.0;
    double total = 0.0;
    for (const auto* s : pool) {
      const auto recon = trainer.reconstruct(*s, scene.scene, mask_rng);
      for (std::size_t g = 0; g < recon.size(); ++g) {
        const double v = pretrain::ssim(s->spectra[g], recon[g]);
        total += v;
        row.min_ssim = std::min(row.min_ssim, v);
        ++row.samples;
      }
    }
    row.mean_ssim = total / static_cast<double>(row.samples);
    rows.push_back(row);
  }
  return rows;
}

namespace {

std::vector<const data::Sample*> labeled_samples(const data::SceneData& scene) {
  std::vector<const data::Sample*> out;
  for (const auto& s : scene.samples) {
    if (s.tx) out.push_back(&s);
  }
  return out;
}

std::uint64_t cell_seed(std::uint64_t seed, const std::string& scene_id) {
  return mix_seed(seed, stable_hash(scene_id));
}

}  // namespace

std::vector<ErrorRow> finetune_cells(const ExperimentConfig& config, const Dataset& dataset,
                                     const encoder::EncoderParams& encoder, std::uint64_t seed, double fraction,
                                     const std::string& kind, const std::string& variant) {
  std::vector<ErrorRow> rows;
  finetune::FinetuneConfig fc = config.finetune;
  fc.label_fraction = fraction;
  for (const auto& scene : dataset.test) {
    const auto result = finetune::finetune_run(scene, encoder, fc, cell_seed(seed, scene.scene.scene_id));
    rows.push_back({kind, variant, scene.scene.scene_id, fraction, seed, result.stats});
  }
  return rows;
}

std::vector<ErrorRow> triangulation_cells(const ExperimentConfig& config, const Dataset& dataset, std::uint64_t seed,
                                          double fraction) {
  std::vector<ErrorRow> rows;
  for (const auto& scene : dataset.test) {
    const auto labeled = labeled_samples(scene);
    const auto split = finetune::make_split(static_cast<int>(labeled.size()), fraction,
                                            cell_seed(seed, scene.scene.scene_id), config.finetune.test_fraction);
    std::vector<double> errors;
    for (int i : split.test) {
      const auto* s = labeled[static_cast<std::size_t>(i)];
      try {
        errors.push_back((finetune::triangulate_spectra(scene.scene, s->spectra) - *s->tx).norm());
      } catch (const DegenerateInput&) {
        // parallel rays: no estimate for this sample
      }
    }
    rows.push_back({"triangulation", "triangulation", scene.scene.scene_id, fraction, seed,
                    finetune::error_stats(errors)});
  }
  return rows;
}

std::vector<std::string> error_csv_row(const ErrorRow& r) {
  return {r.kind,
          r.variant,
          r.scene_id,
          format_double(r.label_fraction),
          std::to_string(r.seed),
          format_double(100.0 * r.stats.mean),
          format_double(100.0 * r.stats.median),
          format_double(100.0 * r.stats.p25),
          format_double(100.0 * r.stats.p75),
          format_double(100.0 * r.stats.p90)};
}

std::vector<MoeVariant> moe_variants() {
  return {{"none", false, {4, 1, 2}},
          {"top1", true, {3, 0, 1}},
          {"top2", true, {3, 0, 2}},
          {"shared_top1", true, {4, 1, 1}},
          {"shared_top2", true, {4, 1, 2}}};
}

AblationResult run_ablation(const std::string& kind, const ExperimentConfig& config, const Dataset& dataset,
                            const std::function<void(const std::string&)>& log) {
  config.validate();
  auto say = [&log](const std::string& s) {
    if (log) log(s);
  };
  AblationResult out;
  out.csv_path = config.output_dir + "/ablation_" + kind + ".csv";
  ExperimentConfig sweep = config;
  if (config.ablation.pretrain_steps > 0) sweep.pretrain.total_steps = config.ablation.pretrain_steps;

  if (kind == "pretrain_vs_scratch") {
    CsvWriter csv(out.csv_path, kErrorCsvHeader);
    for (auto seed : config.seeds) {
      say("pretraining seed " + std::to_string(seed));
      ModelState state = run_pretrain(config, dataset, seed,
                                      config.output_dir + "/pretrain_metrics_seed" + std::to_string(seed) + ".csv");
      save_checkpoint(state, config.output_dir + "/pretrain_seed" + std::to_string(seed) + ".ckpt");
      const ModelState scratch = ModelState::fresh(config.encoder, config.field, seed);
      for (double f : config.label_fractions) {
        say("fine-tuning seed " + std::to_string(seed) + " at fraction " + format_double(f));
        for (const auto& batch : {finetune_cells(config, dataset, state.encoder, seed, f, kind, "pretrained"),
                                  finetune_cells(config, dataset, scratch.encoder, seed, f, kind, "scratch"),
                                  triangulation_cells(config, dataset, seed, f)}) {
          for (auto row : batch) {
            row.kind = kind;
            csv.row(error_csv_row(row));
            out.errors.push_back(row);
          }
        }
      }
    }
  } else if (kind == "mask_sweep") {
    CsvWriter csv(out.csv_path, kErrorCsvHeader);
    for (double ratio : config.ablation.mask_ratios) {
      for (auto seed : config.seeds) {
        say("mask ratio " + format_double(ratio) + " seed " + std::to_string(seed));
        ExperimentConfig cell = sweep;
        cell.pretrain.mask_ratio = ratio;
        ModelState state = run_pretrain(cell, dataset, seed);
        for (const auto& row : finetune_cells(cell, dataset, state.encoder, seed, config.ablation.label_fraction, kind,
                                              format_double(ratio))) {
          csv.row(error_csv_row(row));
          out.errors.push_back(row);
        }
      }
    }
  } else if (kind == "moe_configs") {
    CsvWriter csv(out.csv_path, kErrorCsvHeader);
    for (const auto& v : moe_variants()) {
      for (auto seed : config.seeds) {
        say("MoE variant " + v.name + " seed " + std::to_string(seed));
        ExperimentConfig cell = sweep;
        cell.encoder.moe = v.moe;
        if (!v.enabled) cell.encoder.moe_layers.clear();
        ModelState state = run_pretrain(cell, dataset, seed);
        for (const auto& row :
             finetune_cells(cell, dataset, state.encoder, seed, config.ablation.label_fraction, kind, v.name)) {
          csv.row(error_csv_row(row));
          out.errors.push_back(row);
        }
      }
    }
  } else if (kind == "ssim_eval") {
    CsvWriter csv(out.csv_path, {"seed", "scene_id", "samples", "mean_ssim", "min_ssim"});
    for (auto seed : config.seeds) {
      say("pretraining seed " + std::to_string(seed));
      ModelState state = run_pretrain(config, dataset, seed);
      for (const auto& r : ssim_eval(config, dataset, state, seed)) {
        csv.row({std::to_string(r.seed), r.scene_id, std::to_string(r.samples), format_double(r.mean_ssim),
                 format_double(r.min_ssim)});
        out.ssim.push_back(r);
      }
    }
  } else {
    throw InvalidArgument("ablate: unknown kind '" + kind +
                          "' (expected pretrain_vs_scratch, mask_sweep, moe_configs, ssim_eval)");
  }
  return out;
}

}  // namespace rfrp::harness
