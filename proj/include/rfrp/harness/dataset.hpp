#pragma once

// Synthetic scene corpus: random rooms with wall-mounted arrays, point
// reflectors, and uniformly placed transmitters, persisted as JSON lines.

#include "rfrp/data.hpp"
#include "rfrp/harness/config.hpp"

#include <string>
#include <vector>

namespace rfrp::harness {

struct Dataset {
  std::vector<data::SceneData> pretrain;
  std::vector<data::SceneData> test;

  const data::SceneData& find(const std::string& scene_id) const;
};

/// One random room; arrays sit on distinct walls facing inward.
spectrum::Scene generate_scene(const DatasetConfig& config, const std::string& scene_id, Rng& rng);
/// Uniform transmitter placements with the given labeled fraction (exact count).
data::SceneData generate_samples(const DatasetConfig& config, const spectrum::Scene& scene, int count,
                                 double label_fraction, Rng& rng);
Dataset generate_dataset(const DatasetConfig& config, std::uint64_t seed);

/// Writes scenes.json plus one <scene_id>.jsonl per scene into dir.
void write_dataset(const Dataset& dataset, const std::string& dir);
Dataset read_dataset(const std::string& dir);

std::string scene_to_json(const spectrum::Scene& scene);
/// One JSON line per (sample, array): scene_id, sample_index, array_index,
/// origin, rotation (row-major), spectrum (324 row-major), tx_pos or null.
std::vector<std::string> sample_to_json_lines(const data::Sample& sample, const spectrum::Scene& scene);

}  // namespace rfrp::harness
