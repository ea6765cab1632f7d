#include "xst/cli/run_config.hpp"

#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

namespace xst {

namespace {

const std::set<std::string> kDerivedModelKeys = {"vocab_size", "n_languages", "acoustic.frame_dim"};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) {
    cur = trim(cur);
    if (!cur.empty()) out.push_back(cur);
  }
  return out;
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || res.ec != std::errc() || res.ptr != v.data() + v.size()) {
    throw ConfigError("bad value for " + key + ": '" + v + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "no") return false;
  throw ConfigError("bad boolean for " + key + ": '" + v + "'");
}

std::string number(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

template <typename T>
std::string join(const std::vector<T>& values) {
  std::string s;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) s += ",";
    if constexpr (std::is_same_v<T, std::string>) s += values[i];
    else s += std::to_string(values[i]);
  }
  return s;
}

}  // namespace

Stage parse_stage(const std::string& text, std::size_t index, std::size_t patience) {
  const auto colon = text.rfind(':');
  if (colon == std::string::npos) throw ConfigError("stage '" + text + "' needs ':STEPS'");
  Stage s;
  s.name = "stage" + std::to_string(index + 1);
  s.patience = patience;
  s.max_steps = parse_number<std::uint64_t>("stage steps", trim(text.substr(colon + 1)));
  bool weighted = false;
  std::vector<double> weights;
  for (const auto& part : split(text.substr(0, colon), '+')) {
    const auto star = part.find('*');
    try {
      s.tasks.push_back(parse_task(trim(part.substr(0, star))));
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    if (star != std::string::npos) {
      weighted = true;
      weights.push_back(parse_number<double>("stage weight", trim(part.substr(star + 1))));
    } else {
      weights.push_back(1.0);
    }
  }
  if (weighted) s.weights = weights;
  s.dev_metric = default_dev_metric(s.tasks);
  try {
    s.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return s;
}

std::string format_stage(const Stage& stage) {
  std::string out;
  for (std::size_t i = 0; i < stage.tasks.size(); ++i) {
    if (i) out += "+";
    out += task_name(stage.tasks[i]);
    if (!stage.weights.empty()) out += "*" + number(stage.weights[i]);
  }
  return out + ":" + std::to_string(stage.max_steps);
}

void RunConfig::set(const std::string& key, const std::string& value) {
  try {
    if (key.rfind("corpus.", 0) == 0) {
      const auto sub = key.substr(7);
      if (!SynthSpec{}.to_map().count(sub)) throw ConfigError("unknown config key '" + key + "'");
      auto m = corpus.to_map();
      m[sub] = value;
      corpus = SynthSpec::from_map(m);
    } else if (key.rfind("model.", 0) == 0) {
      const auto sub = key.substr(6);
      if (!model.to_map().count(sub) || kDerivedModelKeys.count(sub)) {
        throw ConfigError("unknown config key '" + key + "'");
      }
      auto m = model.to_map();
      m[sub] = value;
      model = ModelConfig::from_map(m);
    } else if (key == "train.recipe") {
      preset_recipe(value);  // validates the name
      recipe = value;
    } else if (key == "train.stages") {
      stages.clear();
      for (const auto& part : split(value, ';')) stages.push_back(parse_stage(part, stages.size(), budget.patience));
    } else if (key == "train.seed") {
      train.seed = parse_number<std::uint64_t>(key, value);
    } else if (key == "train.pretrain_steps") {
      budget.pretrain_steps = parse_number<std::uint64_t>(key, value);
    } else if (key == "train.finetune_steps") {
      budget.finetune_steps = parse_number<std::uint64_t>(key, value);
    } else if (key == "train.patience") {
      budget.patience = parse_number<std::size_t>(key, value);
      for (auto& s : stages) s.patience = budget.patience;
    } else if (key == "train.batch_size") {
      train.batch_size = parse_number<std::size_t>(key, value);
    } else if (key == "train.label_smoothing") {
      train.label_smoothing = parse_number<double>(key, value);
    } else if (key == "train.base_lr") {
      train.adam.base_lr = parse_number<double>(key, value);
    } else if (key == "train.warmup_steps") {
      train.adam.warmup_steps = parse_number<std::uint64_t>(key, value);
    } else if (key == "train.eval_interval") {
      train.eval_interval = parse_number<std::uint64_t>(key, value);
    } else if (key == "train.average_last") {
      train.average_last = parse_number<std::size_t>(key, value);
    } else if (key == "train.dev_limit") {
      train.dev_limit = parse_number<std::size_t>(key, value);
    } else if (key == "decode.beam") {
      decode.beam_size = parse_number<std::size_t>(key, value);
    } else if (key == "decode.greedy") {
      decode.greedy = parse_bool(key, value);
    } else if (key == "decode.length_penalty") {
      decode.length_penalty = parse_number<double>(key, value);
    } else if (key == "decode.max_len") {
      const auto v = parse_number<std::size_t>(key, value);
      decode.max_len = v == 0 ? std::nullopt : std::optional<std::size_t>(v);
    } else if (key == "ablate.seeds") {
      ablate_seeds.clear();
      for (const auto& s : split(value, ',')) ablate_seeds.push_back(parse_number<std::uint64_t>(key, s));
      if (ablate_seeds.empty()) throw ConfigError("ablate.seeds must list at least one seed");
    } else if (key == "ablate.recipes") {
      ablate_recipes.clear();
      for (const auto& r : split(value, ',')) ablate_recipes.push_back(preset_recipe(r).name);
    } else if (key == "sweep.sizes") {
      sweep_sizes.clear();
      for (const auto& s : split(value, ',')) sweep_sizes.push_back(parse_number<std::size_t>(key, s));
      for (std::size_t i = 1; i < sweep_sizes.size(); ++i) {
        if (sweep_sizes[i] <= sweep_sizes[i - 1]) throw ConfigError("sweep.sizes must be strictly ascending");
      }
    } else if (key == "data") {
      data = value;
    } else if (key == "out") {
      out = value;
    } else {
      throw ConfigError("unknown config key '" + key + "'");
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(key + ": " + e.what());
  }
}

std::map<std::string, std::string> RunConfig::to_map() const {
  std::map<std::string, std::string> m;
  for (const auto& [k, v] : corpus.to_map()) m["corpus." + k] = v;
  for (const auto& [k, v] : model.to_map()) {
    if (!kDerivedModelKeys.count(k)) m["model." + k] = v;
  }
  m["train.recipe"] = recipe;
  std::string st;
  for (std::size_t i = 0; i < stages.size(); ++i) st += (i ? "; " : "") + format_stage(stages[i]);
  m["train.stages"] = st;
  m["train.seed"] = std::to_string(train.seed);
  m["train.pretrain_steps"] = std::to_string(budget.pretrain_steps);
  m["train.finetune_steps"] = std::to_string(budget.finetune_steps);
  m["train.patience"] = std::to_string(budget.patience);
  m["train.batch_size"] = std::to_string(train.batch_size);
  m["train.label_smoothing"] = number(train.label_smoothing);
  m["train.base_lr"] = number(train.adam.base_lr);
  m["train.warmup_steps"] = std::to_string(train.adam.warmup_steps);
  m["train.eval_interval"] = std::to_string(train.eval_interval);
  m["train.average_last"] = std::to_string(train.average_last);
  m["train.dev_limit"] = std::to_string(train.dev_limit);
  m["decode.beam"] = std::to_string(decode.beam_size);
  m["decode.greedy"] = decode.greedy ? "1" : "0";
  m["decode.length_penalty"] = number(decode.length_penalty);
  m["decode.max_len"] = decode.max_len ? std::to_string(*decode.max_len) : "0";
  m["ablate.seeds"] = join(ablate_seeds);
  m["ablate.recipes"] = join(ablate_recipes);
  m["sweep.sizes"] = join(sweep_sizes);
  m["data"] = data.string();
  m["out"] = out.string();
  return m;
}

std::string RunConfig::render() const {
  std::string s;
  for (const auto& [k, v] : to_map()) s += k + " = " + v + "\n";
  return s;
}

TrainingRecipe RunConfig::training_recipe() const {
  if (!stages.empty()) return {"CUSTOM", stages};
  return preset_recipe(recipe, budget);
}

ModelConfig RunConfig::model_for(const Vocabulary& vocab, std::size_t frame_dim) const {
  ModelConfig c = model;
  c.vocab_size = vocab.size();
  c.n_languages = vocab.n_languages();
  c.acoustic.frame_dim = frame_dim;
  c.validate();
  return c;
}

std::vector<std::pair<std::string, std::string>> parse_config_text(const std::string& text) {
  std::vector<std::pair<std::string, std::string>> out;
  std::istringstream in(text);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(n) + ": expected 'key = value'");
    auto key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError("config line " + std::to_string(n) + ": empty key");
    out.emplace_back(std::move(key), trim(line.substr(eq + 1)));
  }
  return out;
}

void apply_config_text(RunConfig& config, const std::string& text) {
  auto entries = parse_config_text(text);
  // Patience first so inline stages pick it up regardless of order.
  for (const auto& [k, v] : entries)
    if (k == "train.patience") config.set(k, v);
  for (const auto& [k, v] : entries)
    if (k != "train.patience") config.set(k, v);
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  RunConfig c;
  apply_config_text(c, buf.str());
  return c;
}

}  // namespace xst
