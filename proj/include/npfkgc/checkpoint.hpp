#pragma once

// Binary checkpoint container:
//   magic "NPFKGCKP", u32 format version, u64 header length, JSON header,
//   parameter values, Adam moments (all little-endian f64), u64 FNV-1a
//   checksum over everything before it.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "npfkgc/trainer.hpp"

namespace npfkgc {

inline constexpr char kCheckpointMagic[8] = {'N', 'P', 'F', 'K', 'G', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigConflictError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Checkpoint {
  TrainConfig config;
  std::vector<std::string> entity_names;
  std::vector<std::string> relation_names;
  nlohmann::json split;
  TrainState state;

  friend bool operator==(const Checkpoint& a, const Checkpoint& b) {
    return a.config == b.config && a.entity_names == b.entity_names && a.relation_names == b.relation_names &&
           a.split == b.split && a.state.params == b.state.params && a.state.epoch == b.state.epoch &&
           a.state.best_valid_mrr == b.state.best_valid_mrr && a.state.adam.step == b.state.adam.step &&
           a.state.adam.first_moment == b.state.adam.first_moment &&
           a.state.adam.second_moment == b.state.adam.second_moment;
  }
};

inline Checkpoint make_checkpoint(const KnowledgeGraph& kg, const TaskSplit& split, const TrainConfig& cfg,
                                  const TrainState& state) {
  return {cfg, kg.entities().names(), kg.relations().names(), split_to_json(split, kg), state};
}

namespace detail {

inline std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

template <class T>
void put(std::string& out, T v) {
  static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  Reader(const std::string& data, std::size_t end) : data_(data), end_(end) {}

  template <class T>
  T get() {
    T v;
    need(sizeof(T));
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string bytes(std::size_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::vector<double> doubles(std::size_t n) {
    if (n > (end_ - pos_) / sizeof(double)) throw CheckpointError("corrupt checkpoint: truncated parameter data");
    std::vector<double> v(n);
    std::memcpy(v.data(), data_.data() + pos_, n * sizeof(double));
    pos_ += n * sizeof(double);
    return v;
  }

  std::size_t position() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (n > end_ - pos_) throw CheckpointError("corrupt checkpoint: unexpected end of data");
  }
  const std::string& data_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& ck) {
  nlohmann::json header;
  header["config"] = ck.config;
  header["entities"] = ck.entity_names;
  header["relations"] = ck.relation_names;
  header["split"] = ck.split;
  header["epoch"] = ck.state.epoch;
  header["best_valid_mrr"] = ck.state.best_valid_mrr;
  header["adam_step"] = ck.state.adam.step;
  header["adam_moments"] = !ck.state.adam.first_moment.empty();
  header["parameters"] = nlohmann::json::array();
  for (std::size_t i = 0; i < ck.state.params.names.size(); ++i)
    header["parameters"].push_back({{"name", ck.state.params.names[i]}, {"shape", ck.state.params.shapes[i]}});
  const std::string text = header.dump();

  std::string out(kCheckpointMagic, sizeof kCheckpointMagic);
  detail::put<std::uint32_t>(out, kCheckpointVersion);
  detail::put<std::uint64_t>(out, text.size());
  out += text;
  auto put_all = [&](const std::vector<std::vector<double>>& arrays) {
    for (const auto& a : arrays)
      out.append(reinterpret_cast<const char*>(a.data()), a.size() * sizeof(double));
  };
  put_all(ck.state.params.values);
  if (!ck.state.adam.first_moment.empty()) {
    put_all(ck.state.adam.first_moment);
    put_all(ck.state.adam.second_moment);
  }
  detail::put<std::uint64_t>(out, detail::fnv1a(out));
  return out;
}

inline Checkpoint deserialize_checkpoint(const std::string& data) {
  if (data.size() < sizeof kCheckpointMagic + 4 + 8 + 8) throw CheckpointError("corrupt checkpoint: file too short");
  if (std::memcmp(data.data(), kCheckpointMagic, sizeof kCheckpointMagic) != 0)
    throw CheckpointError("not a checkpoint file (bad magic)");
  const std::size_t body = data.size() - 8;
  std::uint64_t stored = 0;
  std::memcpy(&stored, data.data() + body, 8);
  detail::Reader in(data, body);
  in.bytes(sizeof kCheckpointMagic);
  const auto version = in.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  }
  if (stored != detail::fnv1a(data.substr(0, body))) throw CheckpointError("corrupt checkpoint: checksum mismatch");
  const auto header_len = in.get<std::uint64_t>();
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(in.bytes(header_len));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("corrupt checkpoint header: ") + e.what());
  }

  Checkpoint ck;
  try {
    ck.config = header.at("config").get<TrainConfig>();
    ck.entity_names = header.at("entities").get<std::vector<std::string>>();
    ck.relation_names = header.at("relations").get<std::vector<std::string>>();
    ck.split = header.at("split");
    ck.state.epoch = header.at("epoch").get<std::size_t>();
    ck.state.best_valid_mrr = header.at("best_valid_mrr").get<double>();
    ck.state.adam.step = header.at("adam_step").get<std::int64_t>();
    ck.state.adam.config.lr = ck.config.lr;
    for (const auto& p : header.at("parameters")) {
      ck.state.params.names.push_back(p.at("name").get<std::string>());
      ck.state.params.shapes.push_back(p.at("shape").get<Shape>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("corrupt checkpoint header: ") + e.what());
  }
  for (const auto& shape : ck.state.params.shapes) ck.state.params.values.push_back(in.doubles(shape_size(shape)));
  if (header.value("adam_moments", false)) {
    for (const auto& shape : ck.state.params.shapes) ck.state.adam.first_moment.push_back(in.doubles(shape_size(shape)));
    for (const auto& shape : ck.state.params.shapes) ck.state.adam.second_moment.push_back(in.doubles(shape_size(shape)));
  }
  if (in.position() != body) throw CheckpointError("corrupt checkpoint: trailing bytes");
  return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  const std::string bytes = serialize_checkpoint(ck);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write checkpoint: " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("failed writing checkpoint: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint: " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

// Model fields of `override_cfg` that differ from the checkpoint.
inline std::vector<std::string> config_conflicts(const ModelConfig& stored, const ModelConfig& requested) {
  std::vector<std::string> out;
  auto check = [&](const char* name, auto a, auto b) {
    if (a != b) out.push_back(std::string(name) + ": checkpoint has " + std::to_string(a) + ", requested " + std::to_string(b));
  };
  check("dim", stored.dim, requested.dim);
  check("latent_dim", stored.latent_dim, requested.latent_dim);
  check("gnn_layers", stored.gnn_layers, requested.gnn_layers);
  check("flow_steps", stored.flow_steps, requested.flow_steps);
  check("lstm_hidden", stored.lstm_hidden, requested.lstm_hidden);
  check("lstm_layers", stored.lstm_layers, requested.lstm_layers);
  check("neighbor_cap", stored.neighbor_cap, requested.neighbor_cap);
  if (stored.flow != requested.flow)
    out.push_back(std::string("flow: checkpoint has ") + to_string(stored.flow) + ", requested " + to_string(requested.flow));
  return out;
}

inline void check_config(const ModelConfig& stored, const ModelConfig& requested) {
  auto conflicts = config_conflicts(stored, requested);
  if (conflicts.empty()) return;
  std::string msg = "config conflicts with checkpoint:";
  for (const auto& c : conflicts) msg += "\n  " + c;
  throw ConfigConflictError(msg);
}

// Rebuilds the model a checkpoint describes over `kg`, whose vocabularies
// must match the stored ones.
inline std::unique_ptr<NpFkgcModel> restore_model(const Checkpoint& ck, const KnowledgeGraph& kg) {
  if (ck.entity_names != kg.entities().names() || ck.relation_names != kg.relations().names())
    throw ConfigConflictError("checkpoint vocabulary does not match the loaded triples");
  const TaskSplit split = split_from_json(ck.split, kg);
  EmbeddingTable init;
  init.entity = {kg.num_entities(), ck.config.model.dim, std::vector<double>(kg.num_entities() * ck.config.model.dim)};
  init.relation = {kg.num_relations(), ck.config.model.dim, std::vector<double>(kg.num_relations() * ck.config.model.dim)};
  auto model = make_model(kg, split, init, ck.config);
  restore(model->params, ck.state.params);
  return model;
}

}  // namespace npfkgc
