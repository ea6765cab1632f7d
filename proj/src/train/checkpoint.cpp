#include "xst/train/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <set>

#include "util/binary_io.hpp"

namespace xst {

namespace {

constexpr char kMagic[8] = {'X', 'S', 'T', 'C', 'K', 'P', 'T', '1'};
const std::string kFirstMoment = "optimizer.m/";
const std::string kSecondMoment = "optimizer.v/";

CheckpointTensor to_record(const std::string& name, const Shape& shape, std::span<const float> data) {
  return {name, shape, std::vector<float>(data.begin(), data.end())};
}

std::string encode_metadata(const std::map<std::string, std::string>& metadata) {
  std::string out;
  for (const auto& [k, v] : metadata) {
    if (k.empty() || k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos) {
      throw CheckpointError("checkpoint metadata entry '" + k + "' contains '=' or a newline");
    }
    out += k + "=" + v + "\n";
  }
  return out;
}

std::map<std::string, std::string> decode_metadata(const std::string& text) {
  std::map<std::string, std::string> out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) throw CheckpointError("checkpoint metadata is not newline-terminated");
    const std::string line = text.substr(pos, end - pos);
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos || eq == 0) throw CheckpointError("bad checkpoint metadata line '" + line + "'");
    out[line.substr(0, eq)] = line.substr(eq + 1);
    pos = end + 1;
  }
  return out;
}

void write_tensor(std::ostream& out, const CheckpointTensor& t) {
  if (shape_numel(t.shape) != t.data.size()) throw CheckpointError("tensor " + t.name + " has inconsistent size");
  binio::write_string(out, t.name);
  binio::write_u32(out, static_cast<std::uint32_t>(t.shape.size()));
  for (std::size_t d : t.shape) binio::write_u32(out, static_cast<std::uint32_t>(d));
  binio::write_floats(out, t.data.data(), t.data.size());
}

CheckpointTensor read_tensor(std::istream& in) {
  CheckpointTensor t;
  t.name = binio::read_string(in, "tensor name", 4096);
  const std::uint32_t rank = binio::read_u32(in, "tensor rank");
  if (rank > 8) throw CheckpointError("tensor " + t.name + " has implausible rank " + std::to_string(rank));
  std::size_t numel = 1;
  for (std::uint32_t i = 0; i < rank; ++i) {
    t.shape.push_back(binio::read_u32(in, "tensor dims"));
    numel *= t.shape.back();
    if (numel > (std::size_t{1} << 32)) throw CheckpointError("tensor " + t.name + " is implausibly large");
  }
  t.data = binio::read_floats(in, numel, "tensor data");
  return t;
}

std::string join_steps(const std::vector<std::uint64_t>& steps) {
  std::string s;
  for (std::size_t i = 0; i < steps.size(); ++i) s += (i ? "," : "") + std::to_string(steps[i]);
  return s;
}

std::vector<std::uint64_t> split_steps(const std::string& s) {
  std::vector<std::uint64_t> out;
  std::size_t pos = 0;
  while (pos < s.size()) {
    std::size_t end = s.find(',', pos);
    if (end == std::string::npos) end = s.size();
    out.push_back(std::stoull(s.substr(pos, end - pos)));
    pos = end + 1;
  }
  return out;
}

}  // namespace

std::uint64_t Checkpoint::step() const {
  auto it = metadata.find("step");
  if (it == metadata.end()) return 0;
  return std::stoull(it->second);
}

ModelConfig Checkpoint::model_config() const {
  std::map<std::string, std::string> values;
  const std::string prefix = "model.";
  for (const auto& [k, v] : metadata) {
    if (k.rfind(prefix, 0) == 0) values[k.substr(prefix.size())] = v;
  }
  if (values.empty()) throw CheckpointError("checkpoint carries no model configuration");
  return ModelConfig::from_map(values);
}

Checkpoint make_checkpoint(const XstNetModel<float>& model, std::uint64_t step,
                           const std::map<std::string, std::string>& extra_metadata, const Adam* optimizer) {
  Checkpoint c;
  c.metadata = extra_metadata;
  c.metadata["step"] = std::to_string(step);
  for (const auto& [k, v] : model.config().to_map()) c.metadata["model." + k] = v;
  for (const auto& p : model.parameters()) c.parameters.push_back(to_record(p.name, p.tensor.shape(), p.tensor.data()));
  if (optimizer) {
    OptimizerState s;
    s.step = optimizer->step_count();
    s.parameter_steps = optimizer->parameter_steps();
    const auto& params = model.parameters();
    if (optimizer->first_moments().size() != params.size()) {
      throw std::invalid_argument("make_checkpoint: optimizer does not belong to this model");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      s.first_moments.push_back(to_record(params[i].name, params[i].tensor.shape(), optimizer->first_moments()[i]));
      s.second_moments.push_back(to_record(params[i].name, params[i].tensor.shape(), optimizer->second_moments()[i]));
    }
    c.optimizer = std::move(s);
  }
  return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  auto meta = ckpt.metadata;
  std::size_t n_tensors = ckpt.parameters.size();
  if (ckpt.optimizer) {
    meta["optimizer.step"] = std::to_string(ckpt.optimizer->step);
    meta["optimizer.parameter_steps"] = join_steps(ckpt.optimizer->parameter_steps);
    n_tensors += ckpt.optimizer->first_moments.size() + ckpt.optimizer->second_moments.size();
  }
  // Write beside the target and rename so a crash never leaves a partial file.
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
    out.write(kMagic, sizeof(kMagic));
    binio::write_u32(out, ckpt.version);
    binio::write_string(out, encode_metadata(meta));
    binio::write_u32(out, static_cast<std::uint32_t>(n_tensors));
    for (const auto& t : ckpt.parameters) write_tensor(out, t);
    if (ckpt.optimizer) {
      for (auto t : ckpt.optimizer->first_moments) {
        t.name = kFirstMoment + t.name;
        write_tensor(out, t);
      }
      for (auto t : ckpt.optimizer->second_moments) {
        t.name = kSecondMoment + t.name;
        write_tensor(out, t);
      }
    }
    if (!out) throw CheckpointError("failed writing checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  try {
    char magic[8];
    binio::read_exact(in, magic, sizeof(magic), "magic");
    if (std::memcmp(magic, kMagic, sizeof(magic)) != 0) throw CheckpointError("not a checkpoint (bad magic)");
    Checkpoint c;
    c.version = binio::read_u32(in, "version");
    if (c.version != kCheckpointVersion) {
      throw CheckpointError("unsupported checkpoint version " + std::to_string(c.version));
    }
    c.metadata = decode_metadata(binio::read_string(in, "metadata"));
    const std::uint32_t n = binio::read_u32(in, "tensor count");
    OptimizerState opt;
    for (std::uint32_t i = 0; i < n; ++i) {
      auto t = read_tensor(in);
      if (t.name.rfind(kFirstMoment, 0) == 0) {
        t.name.erase(0, kFirstMoment.size());
        opt.first_moments.push_back(std::move(t));
      } else if (t.name.rfind(kSecondMoment, 0) == 0) {
        t.name.erase(0, kSecondMoment.size());
        opt.second_moments.push_back(std::move(t));
      } else {
        c.parameters.push_back(std::move(t));
      }
    }
    if (in.peek() != std::char_traits<char>::eof()) throw CheckpointError("trailing bytes after last tensor");
    auto step_it = c.metadata.find("optimizer.step");
    if (step_it != c.metadata.end()) {
      opt.step = std::stoull(step_it->second);
      opt.parameter_steps = split_steps(c.metadata.at("optimizer.parameter_steps"));
      c.metadata.erase("optimizer.step");
      c.metadata.erase("optimizer.parameter_steps");
      c.optimizer = std::move(opt);
    } else if (!opt.first_moments.empty() || !opt.second_moments.empty()) {
      throw CheckpointError("optimizer moments without optimizer metadata");
    }
    return c;
  } catch (const binio::FormatError& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  } catch (const CheckpointError& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  } catch (const std::out_of_range&) {
    throw CheckpointError(path.string() + ": incomplete optimizer metadata");
  }
}

void apply_checkpoint(const Checkpoint& ckpt, XstNetModel<float>& model) {
  std::map<std::string, const CheckpointTensor*> by_name;
  for (const auto& t : ckpt.parameters) {
    if (!by_name.emplace(t.name, &t).second) throw CheckpointError("checkpoint repeats tensor " + t.name);
  }
  std::set<std::string> expected;
  for (const auto& p : model.parameters()) {
    expected.insert(p.name);
    auto it = by_name.find(p.name);
    if (it == by_name.end()) throw CheckpointError("checkpoint lacks parameter " + p.name);
    if (it->second->shape != p.tensor.shape()) {
      throw CheckpointError("shape mismatch for " + p.name + ": checkpoint " + shape_str(it->second->shape) +
                            ", model " + shape_str(p.tensor.shape()));
    }
  }
  for (const auto& t : ckpt.parameters) {
    if (!expected.count(t.name)) throw CheckpointError("unknown parameter " + t.name + " in checkpoint");
  }
  for (auto& p : model.parameters()) {
    const auto& src = by_name.at(p.name)->data;
    auto dst = p.tensor.mutable_data();
    std::copy(src.begin(), src.end(), dst.begin());
  }
}

XstNetModel<float> model_from_checkpoint(const Checkpoint& ckpt) {
  XstNetModel<float> model(ckpt.model_config(), 0);
  apply_checkpoint(ckpt, model);
  return model;
}

Checkpoint average_checkpoints(const std::vector<Checkpoint>& ckpts) {
  if (ckpts.empty()) throw std::invalid_argument("average_checkpoints: no checkpoints");
  const auto& first = ckpts.front();
  for (std::size_t c = 1; c < ckpts.size(); ++c) {
    const auto& other = ckpts[c];
    if (other.parameters.size() != first.parameters.size()) {
      throw CheckpointError("checkpoints " + std::to_string(c) + " and 0 hold different tensor sets");
    }
    for (std::size_t i = 0; i < first.parameters.size(); ++i) {
      if (other.parameters[i].name != first.parameters[i].name) {
        throw CheckpointError("tensor name mismatch: " + other.parameters[i].name + " vs " + first.parameters[i].name);
      }
      if (other.parameters[i].shape != first.parameters[i].shape) {
        throw CheckpointError("shape mismatch for " + first.parameters[i].name + " across checkpoints");
      }
    }
  }
  Checkpoint out;
  out.metadata = ckpts.back().metadata;
  out.metadata["averaged_from"] = std::to_string(ckpts.size());
  const double k = static_cast<double>(ckpts.size());
  for (std::size_t i = 0; i < first.parameters.size(); ++i) {
    CheckpointTensor t{first.parameters[i].name, first.parameters[i].shape, {}};
    t.data.resize(first.parameters[i].data.size());
    for (std::size_t e = 0; e < t.data.size(); ++e) {
      double sum = 0.0;
      for (const auto& c : ckpts) sum += c.parameters[i].data[e];
      t.data[e] = static_cast<float>(sum / k);
    }
    out.parameters.push_back(std::move(t));
  }
  return out;
}

}  // namespace xst
