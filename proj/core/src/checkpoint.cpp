// SPDX-License-Identifier: Apache-2.0
#include <cstring>
#include <fstream>
#include <iterator>

#include <nlohmann/json.hpp>

#include "sqe/error.hpp"
#include "sqe/model.hpp"

namespace sqe {
namespace {

constexpr std::array<char, 4> kCheckpointMagic = {'S', 'Q', 'M', '1'};
constexpr std::uint32_t kCheckpointVersion = 1;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

void put_string(std::vector<std::uint8_t>& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out.insert(out.end(), s.begin(), s.end());
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }

  std::string string(const char* what) {
    const std::uint32_t n = u32(what);
    need(n, what);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  float f32(const char* what) {
    const std::uint32_t v = u32(what);
    float f;
    std::memcpy(&f, &v, sizeof f);
    return f;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      throw Error(ErrorKind::kIntegrity, std::string("checkpoint ends inside ") + what);
    }
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string config_to_json(const ModelConfig& config) {
  nlohmann::ordered_json j;
  j["variant"] = std::string(to_string(config.variant));
  j["input_dim"] = config.input_dim;
  j["hidden_dim"] = config.hidden_dim;
  j["n_transformer_layers"] = config.n_transformer_layers;
  j["n_heads"] = config.n_heads;
  j["ff_dim"] = config.ff_dim;
  j["n_bilstm_layers"] = config.n_bilstm_layers;
  j["bilstm_units_per_dir"] = config.bilstm_units_per_dir;
  std::vector<std::string> tasks;
  for (Task t : config.tasks) tasks.emplace_back(task_name(t));
  j["tasks"] = tasks;
  j["positional_encoding"] = config.positional_encoding;
  j["dropout_p"] = config.dropout_p;
  nlohmann::ordered_json scaling;
  for (Task t : kAllTasks) {
    const Affine& a = config.target_scaling[static_cast<std::size_t>(t)];
    scaling[std::string(task_name(t))] = {{"shift", a.shift}, {"scale", a.scale}};
  }
  j["target_scaling"] = scaling;
  return j.dump();
}

ModelConfig config_from_json(const std::string& text) {
  ModelConfig c;
  try {
    const nlohmann::json j = nlohmann::json::parse(text);
    c.variant = parse_variant(j.at("variant").get<std::string>());
    c.input_dim = j.at("input_dim").get<std::size_t>();
    c.hidden_dim = j.at("hidden_dim").get<std::size_t>();
    c.n_transformer_layers = j.at("n_transformer_layers").get<std::size_t>();
    c.n_heads = j.at("n_heads").get<std::size_t>();
    c.ff_dim = j.at("ff_dim").get<std::size_t>();
    c.n_bilstm_layers = j.at("n_bilstm_layers").get<std::size_t>();
    c.bilstm_units_per_dir = j.at("bilstm_units_per_dir").get<std::size_t>();
    c.tasks.clear();
    for (const auto& name : j.at("tasks")) {
      auto t = parse_task(name.get<std::string>());
      if (!t) throw Error(ErrorKind::kIntegrity, "unknown task in checkpoint config");
      c.tasks.push_back(*t);
    }
    c.positional_encoding = j.at("positional_encoding").get<bool>();
    c.dropout_p = j.at("dropout_p").get<double>();
    if (j.contains("target_scaling")) {
      for (Task t : kAllTasks) {
        const auto& a = j.at("target_scaling").at(std::string(task_name(t)));
        c.target_scaling[static_cast<std::size_t>(t)] = {a.at("shift").get<double>(),
                                                         a.at("scale").get<double>()};
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kIntegrity, std::string("invalid model config JSON: ") + e.what());
  }
  c.validate();
  return c;
}

std::vector<std::uint8_t> encode_checkpoint(const DownstreamModel& model) {
  std::vector<std::uint8_t> out(kCheckpointMagic.begin(), kCheckpointMagic.end());
  put_u32(out, kCheckpointVersion);
  put_string(out, config_to_json(model.config()));
  put_u32(out, static_cast<std::uint32_t>(model.parameters().size()));
  for (const auto& [name, tensor] : model.parameters()) {
    put_string(out, name);
    put_u32(out, static_cast<std::uint32_t>(tensor.rank()));
    for (std::size_t d : tensor.shape()) put_u32(out, static_cast<std::uint32_t>(d));
    for (double v : tensor.values()) {
      const float f = static_cast<float>(v);
      std::uint32_t bits;
      std::memcpy(&bits, &f, sizeof bits);
      put_u32(out, bits);
    }
  }
  return out;
}

DownstreamModel decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8 || !std::equal(kCheckpointMagic.begin(), kCheckpointMagic.end(), bytes.begin())) {
    throw Error(ErrorKind::kFormat, "not an SQM1 checkpoint (bad magic)");
  }
  Reader r(bytes.subspan(4));
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion) {
    throw Error(ErrorKind::kVersion, "unsupported checkpoint version " + std::to_string(version) +
                                         " (expected " + std::to_string(kCheckpointVersion) + ")");
  }
  ModelConfig config = config_from_json(r.string("config block"));
  const ParameterTable table = describe_parameters(config);

  const std::uint32_t count = r.u32("tensor count");
  if (count != table.tensors.size()) {
    throw Error(ErrorKind::kIntegrity, "checkpoint holds " + std::to_string(count) +
                                           " tensors, configuration requires " +
                                           std::to_string(table.tensors.size()));
  }
  ParameterMap params;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.string("tensor name");
    const std::uint32_t rank = r.u32("tensor rank");
    if (rank == 0 || rank > 8) {
      throw Error(ErrorKind::kIntegrity, "tensor '" + name + "' has invalid rank " + std::to_string(rank));
    }
    Shape shape;
    for (std::uint32_t k = 0; k < rank; ++k) shape.push_back(r.u32("tensor dims"));
    auto spec = std::find_if(table.tensors.begin(), table.tensors.end(),
                             [&](const ParameterSpec& s) { return s.name == name; });
    if (spec == table.tensors.end()) {
      throw Error(ErrorKind::kIntegrity, "unexpected tensor '" + name + "' in checkpoint");
    }
    if (spec->shape != shape) {
      throw Error(ErrorKind::kIntegrity, "tensor '" + name + "' has shape " + shape_string(shape) +
                                             ", configuration requires " + shape_string(spec->shape));
    }
    Tensor t(shape);
    for (double& v : t.values()) v = r.f32("tensor payload");
    params.emplace(std::move(name), std::move(t));
  }
  if (!r.done()) throw Error(ErrorKind::kIntegrity, "trailing bytes after last tensor");
  return DownstreamModel(std::move(config), std::move(params));
}

void save_checkpoint(const DownstreamModel& model, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(model);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::kIo, "cannot write checkpoint '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::kIo, "write failed for '" + path.string() + "'");
}

DownstreamModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot open checkpoint '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_checkpoint(bytes);
  } catch (const Error& e) {
    throw Error(e.kind(), path.string() + ": " + e.what());
  }
}

DownstreamModel load_checkpoint(const std::filesystem::path& path, const std::vector<Task>& expected_tasks) {
  DownstreamModel model = load_checkpoint(path);
  if (model.config().tasks != expected_tasks) {
    throw Error(ErrorKind::kTaskMismatch, path.string() + ": checkpoint predicts {" +
                                              format_task_list(model.config().tasks) +
                                              "}, requested {" + format_task_list(expected_tasks) + "}");
  }
  return model;
}

}  // namespace sqe
