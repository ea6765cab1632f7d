// Run configuration: a `key = value` file (with '#' comments) merged with
// command-line overrides. Keys are grouped as corpus.*, model.*, train.*,
// decode.*, ablate.*, sweep.* plus `data` and `out`; unknown keys are
// rejected.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "xst/data/corpus.hpp"
#include "xst/infer/decode.hpp"
#include "xst/model/config.hpp"
#include "xst/train/recipe.hpp"
#include "xst/train/trainer.hpp"

namespace xst {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct RunConfig {
  SynthSpec corpus;
  // vocab_size, n_languages and acoustic.frame_dim are taken from the data.
  ModelConfig model = ModelConfig::desk(0);
  std::string recipe = "EXP_I";
  // Inline stages replace the recipe when non-empty.
  std::vector<Stage> stages;
  StageBudget budget;
  TrainOptions train;
  DecodeOptions decode;
  std::vector<std::uint64_t> ablate_seeds = {17, 18, 19};
  std::vector<std::string> ablate_recipes;  // empty means every preset
  std::vector<std::size_t> sweep_sizes = {2000, 5000, 10000, 20000};
  std::filesystem::path data;  // corpus directory; empty means generate
  std::filesystem::path out;

  // Applies one key; throws ConfigError for unknown keys or bad values.
  void set(const std::string& key, const std::string& value);
  // Every key with its current value, in a stable order.
  std::map<std::string, std::string> to_map() const;
  // The resolved configuration in the file format; parsing it reproduces
  // this configuration.
  std::string render() const;

  TrainingRecipe training_recipe() const;
  ModelConfig model_for(const Vocabulary& vocab, std::size_t frame_dim) const;
};

// Parses `key = value` lines; blank lines and '#' comments are ignored.
std::vector<std::pair<std::string, std::string>> parse_config_text(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);
void apply_config_text(RunConfig& config, const std::string& text);

// Stage syntax: TASK[*WEIGHT][+TASK[*WEIGHT]...]:STEPS, for example
// "MT_EXT:1000" or "ST+ASR+MT*2:4000". Stages in a list are separated by ';'.
Stage parse_stage(const std::string& text, std::size_t index, std::size_t patience);
std::string format_stage(const Stage& stage);

}  // namespace xst
