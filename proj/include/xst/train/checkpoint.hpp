// Checkpoint files: named float32 tensors plus key=value metadata.
//
// Layout (little-endian): "XSTCKPT1", u32 version, u32 metadata byte count,
// metadata as "key=value\n" lines, u32 tensor count, then per tensor the
// length-prefixed name, u32 rank, u32 dims and float32 data. Optimizer
// moments, when present, are stored as tensors named "optimizer.m/<param>"
// and "optimizer.v/<param>".

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "xst/model/model.hpp"
#include "xst/train/optimizer.hpp"

namespace xst {

inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CheckpointTensor {
  std::string name;
  Shape shape;
  std::vector<float> data;
  bool operator==(const CheckpointTensor&) const = default;
};

struct OptimizerState {
  std::uint64_t step = 0;
  std::vector<std::uint64_t> parameter_steps;
  std::vector<CheckpointTensor> first_moments;
  std::vector<CheckpointTensor> second_moments;
  bool operator==(const OptimizerState&) const = default;
};

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  // Includes "step" and the model configuration under "model.*".
  std::map<std::string, std::string> metadata;
  std::vector<CheckpointTensor> parameters;
  std::optional<OptimizerState> optimizer;

  std::uint64_t step() const;
  ModelConfig model_config() const;
  bool operator==(const Checkpoint&) const = default;
};

Checkpoint make_checkpoint(const XstNetModel<float>& model, std::uint64_t step,
                           const std::map<std::string, std::string>& extra_metadata = {},
                           const Adam* optimizer = nullptr);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
// Throws CheckpointError on a bad magic, unsupported version or truncation.
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Copies parameters into `model`. Every parameter must be present with the
// model's shape; the model is left untouched if any check fails.
void apply_checkpoint(const Checkpoint& ckpt, XstNetModel<float>& model);
// Builds a model from the checkpoint's own configuration.
XstNetModel<float> model_from_checkpoint(const Checkpoint& ckpt);

// Element-wise mean of the parameters; metadata comes from the last input
// (plus "averaged_from"), optimizer state is dropped.
Checkpoint average_checkpoints(const std::vector<Checkpoint>& ckpts);

}  // namespace xst
