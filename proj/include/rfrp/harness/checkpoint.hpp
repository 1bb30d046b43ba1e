#pragma once

// Binary checkpoint of the complete pretraining state. Layout, all integers
// and floats little-endian:
//   "RFRP1" | u32 version | encoder config | field config | u64 registry seed
//   | i64 step | str rng state | encoder blocks | decoders | optimizer
// where a block is (str name, u32 rows, u32 cols, f64 values row-major) and a
// str is (u32 length, bytes).

#include "rfrp/encoder.hpp"
#include "rfrp/optim.hpp"
#include "rfrp/pretrain.hpp"

#include <stdexcept>
#include <string>

namespace rfrp::harness {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct ModelState {
  encoder::EncoderParams encoder;
  pretrain::DecoderRegistry registry;
  optim::OptimizerState optimizer;
  Rng rng;
  long step = 0;

  static ModelState fresh(const encoder::EncoderConfig& encoder_config, const rfnerf::FieldConfig& field_config,
                          std::uint64_t seed);
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class CheckpointVersionError : public CheckpointError {
 public:
  CheckpointVersionError(std::uint32_t found, std::uint32_t expected)
      : CheckpointError("checkpoint version mismatch: found " + std::to_string(found) + ", expected " +
                        std::to_string(expected)),
        found_version(found),
        expected_version(expected) {}
  std::uint32_t found_version;
  std::uint32_t expected_version;
};

std::string serialize_checkpoint(ModelState& state);
ModelState deserialize_checkpoint(const std::string& bytes);
void save_checkpoint(ModelState& state, const std::string& path);
ModelState load_checkpoint(const std::string& path);

struct CheckpointSummary {
  std::uint32_t version = 0;
  long step = 0;
  std::size_t encoder_parameters = 0;
  std::vector<std::pair<std::string, std::size_t>> decoders;  // scene_id, parameter count
  std::size_t optimizer_entries = 0;
};
CheckpointSummary summarize(ModelState& state);

}  // namespace rfrp::harness
