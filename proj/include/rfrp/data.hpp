#pragma once

#include "rfrp/spectrum.hpp"

#include <optional>
#include <string>
#include <vector>

namespace rfrp::data {

/// One transmitter placement observed by every array of a scene.
struct Sample {
  std::string scene_id;
  int index = 0;
  std::optional<Vec3> tx;  // present only on labeled records
  std::vector<spectrum::SpatialSpectrum> spectra;  // one per array, in array order
};

struct SceneData {
  spectrum::Scene scene;
  std::vector<Sample> samples;
};

}  // namespace rfrp::data
