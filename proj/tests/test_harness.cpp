#include "doctest.h"

#include "rfrp/harness/checkpoint.hpp"
#include "rfrp/harness/config.hpp"
#include "rfrp/harness/dataset.hpp"
#include "rfrp/harness/experiments.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace rfrp;
using namespace rfrp::harness;
namespace fs = std::filesystem;

namespace {

ExperimentConfig tiny_config(const std::string& out) {
  ExperimentConfig c;
  c.seeds = {4, 5};
  c.output_dir = out;
  c.dataset.pretrain_scenes = 2;
  c.dataset.test_scenes = 1;
  c.dataset.samples_per_scene = 12;
  c.dataset.test_samples_per_scene = 20;
  c.encoder.layers = 1;
  c.encoder.embed_dim = 16;
  c.encoder.heads = 2;
  c.encoder.ffn_dim = 16;
  c.encoder.mlp_dim = 8;
  c.encoder.feature_dim = 4;
  c.encoder.moe_layers = {1};
  c.encoder.moe = {3, 1, 1};
  c.field.pe_dim = 4;
  c.field.attenuation_layers = 1;
  c.field.attenuation_width = 8;
  c.field.feature_dim = 4;
  c.field.radiance_hidden = 8;
  c.field.radiance_hidden2 = 4;
  c.field.latent_dim = 4;
  c.field.samples = 4;
  c.pretrain.total_steps = 6;
  c.pretrain.batch_size = 2;
  c.pretrain.ray_samples = 4;
  c.finetune.steps = 4;
  c.finetune.batch_size = 4;
  c.label_fractions = {0.4};
  c.ablation.label_fraction = 0.4;
  return c;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("rfrp_test_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string str() const { return path.string(); }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

}  // namespace

TEST_CASE("config json round trip and strict keys") {
  ExperimentConfig c = tiny_config("runs/x");
  c.pretrain.max_range = 7.5;
  const std::string text = config_to_json(c);
  const ExperimentConfig back = parse_config(text);
  CHECK(config_to_json(back) == text);
  CHECK(back.encoder.embed_dim == 16);
  CHECK(back.pretrain.max_range.value() == 7.5);

  const ExperimentConfig merged = merge_config(c, R"({"pretrain": {"steps": 99}, "seeds": [8]})");
  CHECK(merged.pretrain.total_steps == 99);
  CHECK(merged.seeds == std::vector<std::uint64_t>{8});
  CHECK(merged.encoder.embed_dim == 16);

  CHECK_THROWS(merge_config(c, R"({"pretrian": {}})"));
  CHECK_THROWS(merge_config(c, R"({"encoder": {"depth": 3}})"));
  CHECK_THROWS(merge_config(c, R"({"dataset": {"pretrain_scenes": 0}})"));
  CHECK_THROWS(parse_config("{not json"));
}

TEST_CASE("desk config defaults") {
  const ExperimentConfig c = desk_config();
  CHECK(c.dataset.pretrain_scenes == 8);
  CHECK(c.dataset.samples_per_scene == 2000);
  CHECK(c.dataset.test_scenes == 2);
  CHECK(c.dataset.test_samples_per_scene == 1000);
  CHECK(c.dataset.pretrain_label_fraction == doctest::Approx(0.213));
  CHECK(c.encoder.layers == 4);
  CHECK(c.encoder.embed_dim == 64);
  CHECK(c.seeds.size() == 3);
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("dataset generation is deterministic and round trips through files") {
  const ExperimentConfig c = tiny_config("unused");
  const Dataset a = generate_dataset(c.dataset, 7);
  const Dataset b = generate_dataset(c.dataset, 7);
  REQUIRE(a.pretrain.size() == 2);
  REQUIRE(a.test.size() == 1);
  CHECK(a.pretrain[0].samples.size() == 12);
  CHECK(a.test[0].samples.size() == 20);

  int labeled = 0;
  for (const auto& s : a.pretrain[0].samples) labeled += s.tx.has_value() ? 1 : 0;
  CHECK(labeled == static_cast<int>(std::lround(0.213 * 12)));
  for (const auto& s : a.test[0].samples) CHECK(s.tx.has_value());
  for (const auto& sd : a.pretrain) {
    const auto g = sd.scene.arrays.size();
    CHECK((g == 2 || g == 3));
    CHECK(sd.scene.reflectors.size() >= 1);
    CHECK(sd.scene.reflectors.size() <= 4);
  }

  TempDir d1("ds1"), d2("ds2");
  write_dataset(a, d1.str());
  write_dataset(b, d2.str());
  for (const auto& entry : fs::directory_iterator(d1.path)) {
    CHECK(slurp(entry.path()) == slurp(d2.path / entry.path().filename()));
  }

  const Dataset r = read_dataset(d1.str());
  REQUIRE(r.pretrain.size() == a.pretrain.size());
  REQUIRE(r.test.size() == a.test.size());
  for (std::size_t s = 0; s < a.pretrain.size(); ++s) {
    const auto& x = a.pretrain[s];
    const auto& y = r.pretrain[s];
    CHECK(x.scene.scene_id == y.scene.scene_id);
    REQUIRE(x.samples.size() == y.samples.size());
    for (std::size_t i = 0; i < x.samples.size(); ++i) {
      CHECK(x.samples[i].tx.has_value() == y.samples[i].tx.has_value());
      if (x.samples[i].tx) CHECK(*x.samples[i].tx == *y.samples[i].tx);
      for (std::size_t g = 0; g < x.samples[i].spectra.size(); ++g) {
        CHECK(x.samples[i].spectra[g].magnitudes == y.samples[i].spectra[g].magnitudes);
      }
    }
  }
  TempDir d3("ds3");
  write_dataset(r, d3.str());
  for (const auto& entry : fs::directory_iterator(d1.path)) {
    CHECK(slurp(entry.path()) == slurp(d3.path / entry.path().filename()));
  }

  CHECK_THROWS(read_dataset((d1.path / "missing").string()));
  const Dataset other = generate_dataset(c.dataset, 8);
  CHECK(other.pretrain[0].samples[0].spectra[0].magnitudes != a.pretrain[0].samples[0].spectra[0].magnitudes);
}

TEST_CASE("sample json lines carry the documented fields") {
  const ExperimentConfig c = tiny_config("unused");
  const Dataset a = generate_dataset(c.dataset, 7);
  const auto& sd = a.test[0];
  const auto lines = sample_to_json_lines(sd.samples[0], sd.scene);
  CHECK(lines.size() == sd.scene.arrays.size());
  for (const char* key : {"\"scene_id\"", "\"sample_index\"", "\"array_index\"", "\"origin\"", "\"rotation\"",
                          "\"spectrum\"", "\"tx_pos\""}) {
    CHECK(lines[0].find(key) != std::string::npos);
  }
}

TEST_CASE("checkpoint round trip, version and truncation") {
  ExperimentConfig c = tiny_config("unused");
  const Dataset ds = generate_dataset(c.dataset, 7);
  ModelState state = ModelState::fresh(c.encoder, c.field, 4);
  pretrain_steps(c, ds, state, 2);
  REQUIRE(state.step == 2);

  const std::string bytes = serialize_checkpoint(state);
  CHECK(bytes.substr(0, 5) == "RFRP1");
  ModelState back = deserialize_checkpoint(bytes);
  CHECK(serialize_checkpoint(back) == bytes);
  CHECK(back.step == 2);
  CHECK(back.registry.size() == 2);

  TempDir dir("ckpt");
  const std::string path = (dir.path / "a.ckpt").string();
  save_checkpoint(state, path);
  ModelState loaded = load_checkpoint(path);
  CHECK(serialize_checkpoint(loaded) == bytes);

  std::string bumped = bytes;
  bumped[5] = 9;
  try {
    deserialize_checkpoint(bumped);
    FAIL("expected a version error");
  } catch (const CheckpointVersionError& e) {
    CHECK(e.found_version == 9);
    CHECK(e.expected_version == kCheckpointVersion);
    CHECK(std::string(e.what()).find("found 9") != std::string::npos);
    CHECK(std::string(e.what()).find("expected 1") != std::string::npos);
  }

  for (std::size_t cut : {std::size_t{0}, std::size_t{3}, std::size_t{40}, bytes.size() / 2, bytes.size() - 1}) {
    CHECK_THROWS_AS(deserialize_checkpoint(bytes.substr(0, cut)), CheckpointError);
  }
  CHECK_THROWS_AS(deserialize_checkpoint("XXXXX" + bytes.substr(5)), CheckpointError);
  CHECK_THROWS_AS(deserialize_checkpoint(bytes + "z"), CheckpointError);
  CHECK_THROWS_AS(load_checkpoint((dir.path / "none.ckpt").string()), CheckpointError);

  const auto summary = summarize(loaded);
  CHECK(summary.step == 2);
  CHECK(summary.decoders.size() == 2);
  CHECK(summary.encoder_parameters > 0);
}

TEST_CASE("resume from a checkpoint equals uninterrupted training") {
  ExperimentConfig c = tiny_config("unused");
  const Dataset ds = generate_dataset(c.dataset, 7);

  std::vector<std::vector<std::string>> straight_rows, resumed_rows;
  ModelState straight = ModelState::fresh(c.encoder, c.field, 4);
  pretrain_steps(c, ds, straight, 2);
  const std::string mid = serialize_checkpoint(straight);
  pretrain_steps(c, ds, straight, 5, [&](const pretrain::StepResult& r) { straight_rows.push_back(pretrain_csv_row(r)); });

  ModelState resumed = deserialize_checkpoint(mid);
  pretrain_steps(c, ds, resumed, 5, [&](const pretrain::StepResult& r) { resumed_rows.push_back(pretrain_csv_row(r)); });

  CHECK(straight_rows.size() == 3);
  CHECK(straight_rows == resumed_rows);
  CHECK(serialize_checkpoint(straight) == serialize_checkpoint(resumed));
}

TEST_CASE("pretrain metrics csv is one row per step and reproducible") {
  TempDir dir("csv");
  ExperimentConfig c = tiny_config(dir.str());
  const Dataset ds = generate_dataset(c.dataset, 7);
  const auto p1 = dir.path / "m1.csv";
  const auto p2 = dir.path / "m2.csv";
  ModelState a = run_pretrain(c, ds, 4, p1.string());
  ModelState b = run_pretrain(c, ds, 4, p2.string());
  const std::string t1 = slurp(p1);
  CHECK(t1 == slurp(p2));
  const auto rows = lines_of(t1);
  REQUIRE(rows.size() == 1 + static_cast<std::size_t>(c.pretrain.total_steps));
  CHECK(rows[0] == "step,scene_id,lr,cons,bal,lat,total,expert_counts");
  CHECK(serialize_checkpoint(a) == serialize_checkpoint(b));

  ModelState other = run_pretrain(c, ds, 5, (dir.path / "m3.csv").string());
  CHECK(slurp(dir.path / "m3.csv") != t1);
}

TEST_CASE("csv writer") {
  TempDir dir("writer");
  const auto p = (dir.path / "x.csv").string();
  {
    CsvWriter w(p, {"a", "b"});
    w.row({"1", "2"});
    CHECK_THROWS(w.row({"1"}));
  }
  {
    CsvWriter w(p, {"a", "b"}, true);
    w.row({"3", "4"});
  }
  CHECK(slurp(p) == "a,b\n1,2\n3,4\n");
  CHECK(format_double(0.1) == "0.1");
  CHECK(std::stod(format_double(1.0 / 3.0)) == 1.0 / 3.0);
}

TEST_CASE("holdout pools split the tail") {
  const ExperimentConfig c = tiny_config("unused");
  const Dataset ds = generate_dataset(c.dataset, 7);
  const auto& sd = ds.pretrain[0];
  const auto train = pretrain_pool(sd, 0.25);
  const auto hold = holdout_pool(sd, 0.25);
  CHECK(train.size() == 9);
  CHECK(hold.size() == 3);
  CHECK(hold.front() == &sd.samples[9]);
}

TEST_CASE("ablation matrix plumbing") {
  const auto variants = moe_variants();
  REQUIRE(variants.size() == 5);
  CHECK(variants[0].name == "none");
  CHECK_FALSE(variants[0].enabled);
  CHECK(variants[4].name == "shared_top2");
  CHECK(variants[4].moe.shared == 1);
  CHECK(variants[4].moe.top_k == 2);
  CHECK(desk_config().ablation.mask_ratios == std::vector<double>{0.10, 0.25, 0.50, 0.75, 0.90});

  TempDir dir("ablate");
  ExperimentConfig c = tiny_config(dir.str());
  c.seeds = {4};
  c.ablation.mask_ratios = {0.5};
  const Dataset ds = generate_dataset(c.dataset, 7);
  CHECK_THROWS_AS(run_ablation("bogus", c, ds), InvalidArgument);

  const AblationResult r = run_ablation("mask_sweep", c, ds);
  CHECK(r.errors.size() == 1);
  const auto rows = lines_of(slurp(r.csv_path));
  REQUIRE(rows.size() == 2);
  CHECK(rows[0] == "kind,variant,scene_id,label_fraction,seed,mean_cm,median_cm,p25_cm,p75_cm,p90_cm");
  CHECK(rows[1].rfind("mask_sweep,0.5,", 0) == 0);
  CHECK(rows[1].find(",4,") != std::string::npos);

  const AblationResult s = run_ablation("ssim_eval", c, ds);
  REQUIRE(s.ssim.size() == 2);
  for (const auto& row : s.ssim) {
    CHECK(row.seed == 4);
    CHECK(row.samples > 0);
    CHECK(row.mean_ssim <= 1.0);
  }
  const auto ssim_rows = lines_of(slurp(s.csv_path));
  CHECK(ssim_rows.size() == 3);
  for (std::size_t i = 1; i < ssim_rows.size(); ++i) CHECK(ssim_rows[i].rfind("4,", 0) == 0);
}
