// rfrp: dataset generation, pretraining, fine-tuning, evaluation, ablations.
//
// Flags set individual config fields; a --config file is applied on top of
// them. RFRP_SEED, when set, is the default seed list (comma separated).
// Failures print one line `{"error": ..., "kind": ...}` to stderr and exit 1
// (2 for usage errors).

#include "CLI11.hpp"
#include "json.hpp"

#include "rfrp/harness/checkpoint.hpp"
#include "rfrp/harness/config.hpp"
#include "rfrp/harness/dataset.hpp"
#include "rfrp/harness/experiments.hpp"
#include "rfrp/harness/runtime.hpp"

#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

using namespace rfrp;
using namespace rfrp::harness;
namespace fs = std::filesystem;

namespace {

struct Flags {
  std::string config_path;
  std::vector<std::uint64_t> seeds;
  std::optional<std::string> output_dir;
  std::optional<std::string> data_dir;
  std::optional<int> pretrain_scenes, test_scenes, samples_per_scene, test_samples_per_scene;
  std::optional<int> layers, embed_dim;
  std::optional<double> mask_ratio;
  std::optional<long> pretrain_steps, finetune_steps;
  std::optional<int> batch_size;
  std::optional<double> lr_max;
  std::vector<double> label_fractions;
};

void add_common(CLI::App* cmd, Flags& f) {
  cmd->add_option("--config", f.config_path, "JSON config applied on top of the flags");
  cmd->add_option("--seeds", f.seeds, "model seeds (default: RFRP_SEED or the config)")->delimiter(',');
  cmd->add_option("--output-dir", f.output_dir, "output directory");
  cmd->add_option("--data-dir", f.data_dir, "dataset directory (default <output-dir>/data)");
  cmd->add_option("--pretrain-scenes", f.pretrain_scenes);
  cmd->add_option("--test-scenes", f.test_scenes);
  cmd->add_option("--samples-per-scene", f.samples_per_scene);
  cmd->add_option("--test-samples-per-scene", f.test_samples_per_scene);
  cmd->add_option("--layers", f.layers, "encoder layers");
  cmd->add_option("--embed-dim", f.embed_dim, "encoder width");
  cmd->add_option("--mask-ratio", f.mask_ratio);
  cmd->add_option("--pretrain-steps", f.pretrain_steps);
  cmd->add_option("--finetune-steps", f.finetune_steps);
  cmd->add_option("--batch-size", f.batch_size, "pretraining batch size");
  cmd->add_option("--lr-max", f.lr_max, "pretraining peak learning rate");
  cmd->add_option("--label-fractions", f.label_fractions)->delimiter(',');
}

std::vector<std::uint64_t> env_seeds() {
  const char* v = std::getenv("RFRP_SEED");
  if (v == nullptr || *v == '\0') return {};
  std::vector<std::uint64_t> out;
  std::stringstream s(v);
  for (std::string part; std::getline(s, part, ',');) {
    std::uint64_t seed = 0;
    const auto [end, ec] = std::from_chars(part.data(), part.data() + part.size(), seed);
    if (ec != std::errc{} || end != part.data() + part.size()) {
      throw InvalidArgument("RFRP_SEED: '" + part + "' is not an unsigned integer");
    }
    out.push_back(seed);
  }
  return out;
}

ExperimentConfig resolve(const Flags& f) {
  ExperimentConfig c = desk_config();
  if (auto s = env_seeds(); !s.empty()) c.seeds = s;
  if (!f.seeds.empty()) c.seeds = f.seeds;
  if (f.output_dir) c.output_dir = *f.output_dir;
  if (f.data_dir) c.data_dir = *f.data_dir;
  if (f.pretrain_scenes) c.dataset.pretrain_scenes = *f.pretrain_scenes;
  if (f.test_scenes) c.dataset.test_scenes = *f.test_scenes;
  if (f.samples_per_scene) c.dataset.samples_per_scene = *f.samples_per_scene;
  if (f.test_samples_per_scene) c.dataset.test_samples_per_scene = *f.test_samples_per_scene;
  if (f.layers) {
    c.encoder.layers = *f.layers;
    std::erase_if(c.encoder.moe_layers, [&](int l) { return l > *f.layers; });
  }
  if (f.embed_dim) c.encoder.embed_dim = *f.embed_dim;
  if (f.mask_ratio) c.pretrain.mask_ratio = *f.mask_ratio;
  if (f.pretrain_steps) c.pretrain.total_steps = *f.pretrain_steps;
  if (f.finetune_steps) c.finetune.steps = *f.finetune_steps;
  if (f.batch_size) c.pretrain.batch_size = *f.batch_size;
  if (f.lr_max) c.pretrain.lr_max = *f.lr_max;
  if (!f.label_fractions.empty()) c.label_fractions = f.label_fractions;
  if (!f.config_path.empty()) {
    std::ifstream in(f.config_path);
    if (!in) throw InvalidArgument("config: cannot open '" + f.config_path + "'");
    std::ostringstream text;
    text << in.rdbuf();
    c = merge_config(c, text.str());
  }
  c.validate();
  return c;
}

void say(const std::string& s) { std::cerr << s << std::endl; }

Dataset open_dataset(const ExperimentConfig& c) {
  const std::string dir = c.dataset_dir();
  if (!fs::exists(fs::path(dir) / "scenes.json")) {
    throw InvalidArgument("dataset not found in '" + dir + "' (run gen-data first)");
  }
  return read_dataset(dir);
}

std::string checkpoint_path(const ExperimentConfig& c, std::uint64_t seed) {
  return c.output_dir + "/pretrain_seed" + std::to_string(seed) + ".ckpt";
}

int gen_data(const ExperimentConfig& c) {
  const Dataset ds = generate_dataset(c.dataset, c.data_seed);
  write_dataset(ds, c.dataset_dir());
  std::ofstream(c.output_dir + "/config.json") << config_to_json(c);
  say("wrote " + std::to_string(ds.pretrain.size()) + " pretrain and " + std::to_string(ds.test.size()) +
      " test scenes to " + c.dataset_dir());
  return 0;
}

int pretrain_cmd(const ExperimentConfig& c, const std::string& resume, long until) {
  const Dataset ds = open_dataset(c);
  fs::create_directories(c.output_dir);
  for (auto seed : c.seeds) {
    const std::string csv_path = c.output_dir + "/pretrain_metrics_seed" + std::to_string(seed) + ".csv";
    ModelState state = resume.empty() ? ModelState::fresh(c.encoder, c.field, seed) : load_checkpoint(resume);
    const long target = until > 0 ? until : c.pretrain.total_steps;
    CsvWriter csv(csv_path, kPretrainCsvHeader, !resume.empty());
    const long every = std::max<long>(1, c.pretrain.total_steps / 20);
    pretrain_steps(c, ds, state, target, [&](const pretrain::StepResult& r) {
      csv.row(pretrain_csv_row(r));
      if (r.step % every == 0) {
        say("seed " + std::to_string(seed) + " step " + std::to_string(r.step) + " cons " + format_double(r.loss.cons));
      }
    });
    save_checkpoint(state, checkpoint_path(c, seed));
    say("seed " + std::to_string(seed) + ": " + std::to_string(state.step) + " steps, checkpoint " +
        checkpoint_path(c, seed));
    if (!resume.empty()) break;  // a checkpoint carries one seed's state
  }
  return 0;
}

int finetune_cmd(const ExperimentConfig& c, const std::string& checkpoint, bool scratch) {
  const Dataset ds = open_dataset(c);
  fs::create_directories(c.output_dir);
  const std::string variant = scratch ? "scratch" : "pretrained";
  CsvWriter csv(c.output_dir + "/finetune_" + variant + ".csv", kErrorCsvHeader);
  for (auto seed : c.seeds) {
    ModelState state = scratch ? ModelState::fresh(c.encoder, c.field, seed)
                               : load_checkpoint(checkpoint.empty() ? checkpoint_path(c, seed) : checkpoint);
    for (double f : c.label_fractions) {
      for (const auto& row : finetune_cells(c, ds, state.encoder, seed, f, "finetune", variant)) {
        csv.row(error_csv_row(row));
        say(row.scene_id + " seed " + std::to_string(seed) + " fraction " + format_double(f) + ": median " +
            format_double(row.stats.median * 100) + " cm");
      }
    }
  }
  return 0;
}

int eval_cmd(const ExperimentConfig& c, const std::string& checkpoint) {
  const Dataset ds = open_dataset(c);
  fs::create_directories(c.output_dir);
  CsvWriter ssim_csv(c.output_dir + "/eval_ssim.csv", {"seed", "scene_id", "samples", "mean_ssim", "min_ssim"});
  CsvWriter tri_csv(c.output_dir + "/eval_triangulation.csv", kErrorCsvHeader);
  for (auto seed : c.seeds) {
    ModelState state = load_checkpoint(checkpoint.empty() ? checkpoint_path(c, seed) : checkpoint);
    for (const auto& r : ssim_eval(c, ds, state, seed)) {
      ssim_csv.row({std::to_string(r.seed), r.scene_id, std::to_string(r.samples), format_double(r.mean_ssim),
                    format_double(r.min_ssim)});
      say(r.scene_id + " seed " + std::to_string(seed) + ": mean SSIM " + format_double(r.mean_ssim));
    }
    for (double f : c.label_fractions) {
      for (const auto& row : triangulation_cells(c, ds, seed, f)) tri_csv.row(error_csv_row(row));
    }
    if (!checkpoint.empty()) break;
  }
  return 0;
}

int inspect(const std::string& path) {
  ModelState state = load_checkpoint(path);
  const auto s = summarize(state);
  nlohmann::json j;
  j["version"] = s.version;
  j["step"] = s.step;
  j["encoder_parameters"] = s.encoder_parameters;
  j["encoder"] = {{"layers", state.encoder.config.layers},
                  {"embed_dim", state.encoder.config.embed_dim},
                  {"heads", state.encoder.config.heads},
                  {"moe_layers", state.encoder.config.moe_layers}};
  for (const auto& [id, n] : s.decoders) j["decoders"][id] = n;
  j["optimizer_entries"] = s.optimizer_entries;
  std::cout << j.dump(2) << std::endl;
  return 0;
}

std::string kind_of(const std::exception& e) {
  if (dynamic_cast<const CheckpointVersionError*>(&e)) return "checkpoint_version";
  if (dynamic_cast<const CheckpointError*>(&e)) return "checkpoint";
  if (dynamic_cast<const DegenerateInput*>(&e)) return "degenerate_input";
  if (dynamic_cast<const InvalidArgument*>(&e)) return "invalid_argument";
  return "runtime";
}

}  // namespace

int main(int argc, char** argv) {
  rfrp::harness::tune_allocator();
  CLI::App app{"rfrp: radiance-field pretraining for RF localization"};
  app.require_subcommand(1);
  Flags flags;
  std::string checkpoint, resume, kind;
  long until = 0;
  bool scratch = false;

  auto* gen = app.add_subcommand("gen-data", "generate the synthetic scene corpus");
  auto* pre = app.add_subcommand("pretrain", "masked pretraining; writes metrics CSV and checkpoint per seed");
  auto* fine = app.add_subcommand("finetune", "fine-tune on the test scenes at each label fraction");
  auto* ev = app.add_subcommand("eval", "held-out reconstruction SSIM and the triangulation baseline");
  auto* abl = app.add_subcommand("ablate", "run an ablation matrix");
  auto* ins = app.add_subcommand("inspect-checkpoint", "print a checkpoint summary as JSON");
  for (auto* cmd : {gen, pre, fine, ev, abl}) add_common(cmd, flags);
  pre->add_option("--resume", resume, "continue from a checkpoint");
  pre->add_option("--until", until, "stop after this many total steps");
  fine->add_option("--checkpoint", checkpoint, "encoder checkpoint (default <output-dir>/pretrain_seed<S>.ckpt)");
  fine->add_flag("--scratch", scratch, "fine-tune a freshly initialized encoder");
  ev->add_option("--checkpoint", checkpoint, "checkpoint (default <output-dir>/pretrain_seed<S>.ckpt)");
  abl->add_option("--kind", kind, "pretrain_vs_scratch | mask_sweep | moe_configs | ssim_eval")->required();
  ins->add_option("path", checkpoint, "checkpoint file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << nlohmann::json{{"error", e.what()}, {"kind", "usage"}}.dump() << std::endl;
    return 2;
  }

  try {
    if (ins->parsed()) return inspect(checkpoint);
    const ExperimentConfig c = resolve(flags);
    fs::create_directories(c.output_dir);
    if (gen->parsed()) return gen_data(c);
    if (pre->parsed()) return pretrain_cmd(c, resume, until);
    if (fine->parsed()) return finetune_cmd(c, checkpoint, scratch);
    if (ev->parsed()) return eval_cmd(c, checkpoint);
    if (abl->parsed()) {
      const auto r = run_ablation(kind, c, open_dataset(c), say);
      say("wrote " + r.csv_path);
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << nlohmann::json{{"error", e.what()}, {"kind", kind_of(e)}}.dump() << std::endl;
    return 1;
  }
  return 0;
}
