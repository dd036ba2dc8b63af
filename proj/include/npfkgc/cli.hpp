#pragma once

// Command-line driver. Configuration is layered: built-in defaults, then a
// JSON config file, then command-line flags. The resolved configuration is
// written to the output directory of every command.
//
//   npfkgc train  --triples T --split S [--entity-embeddings E --relation-embeddings R]
//   npfkgc eval   --triples T --checkpoint C [--k-sweep 1,3,5]
//   npfkgc sweep  --triples T --split S --flow-steps-list 0,10 --seeds 1,2,3
//   npfkgc synth  --entities 100 --test-relations 4
//   npfkgc inspect-checkpoint --checkpoint C
//
// Exit codes: 0 success, 1 validation error, 2 runtime error.

#include <algorithm>
#include <cstdlib>
#include <deque>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "npfkgc/checkpoint.hpp"
#include "npfkgc/eval.hpp"
#include "npfkgc/synth.hpp"
#include "npfkgc/trainer.hpp"
#include "npfkgc/transe.hpp"

namespace npfkgc::cli {

inline constexpr const char* kOutputDirEnv = "NPFKGC_OUTPUT_DIR";

enum ExitCode : int { kSuccess = 0, kValidationError = 1, kRuntimeError = 2 };

class ValidationError : public std::invalid_argument {
 public:
  explicit ValidationError(std::vector<std::string> errors)
      : std::invalid_argument(join(errors)), errors_(std::move(errors)) {}
  const std::vector<std::string>& errors() const { return errors_; }

 private:
  static std::string join(const std::vector<std::string>& errors) {
    std::string s = "invalid configuration:";
    for (const auto& e : errors) s += "\n  " + e;
    return s;
  }
  std::vector<std::string> errors_;
};

struct DataPaths {
  std::string triples;
  std::string split;
  std::string entity_embeddings;
  std::string relation_embeddings;
  std::string init = "transe";  // used when no embedding files are given: transe | random
};

struct EvalSettings {
  std::size_t k = 0;  // 0: the training K
  bool filtered = true;
  std::vector<std::size_t> hits_at = default_hits_at();
  std::string candidates;  // JSON {relation: [entity, ...]}; empty ranks all entities
  bool sample_latent = false;
  std::size_t entropy_samples = kDefaultEntropySamples;
  std::vector<std::size_t> k_sweep;
  std::string split_part = "test";
};

struct SweepSettings {
  std::vector<std::size_t> flow_steps{0, 10};
  std::vector<std::uint64_t> seeds{1};
};

struct RunConfig {
  std::string command;
  TrainConfig train;
  DataPaths data;
  std::string output_dir = "out";
  std::string checkpoint;
  EvalSettings eval;
  SweepSettings sweep;
  SynthOptions synth;
};

inline void to_json(nlohmann::json& j, const DataPaths& d) {
  j = {{"triples", d.triples},
       {"split", d.split},
       {"entity_embeddings", d.entity_embeddings},
       {"relation_embeddings", d.relation_embeddings},
       {"init", d.init}};
}

inline void from_json(const nlohmann::json& j, DataPaths& d) {
  d.triples = j.value("triples", d.triples);
  d.split = j.value("split", d.split);
  d.entity_embeddings = j.value("entity_embeddings", d.entity_embeddings);
  d.relation_embeddings = j.value("relation_embeddings", d.relation_embeddings);
  d.init = j.value("init", d.init);
}

inline void to_json(nlohmann::json& j, const EvalSettings& e) {
  j = {{"k", e.k},
       {"filtered", e.filtered},
       {"hits_at", e.hits_at},
       {"candidates", e.candidates},
       {"sample_latent", e.sample_latent},
       {"entropy_samples", e.entropy_samples},
       {"k_sweep", e.k_sweep},
       {"split_part", e.split_part}};
}

inline void from_json(const nlohmann::json& j, EvalSettings& e) {
  e.k = j.value("k", e.k);
  e.filtered = j.value("filtered", e.filtered);
  e.hits_at = j.value("hits_at", e.hits_at);
  e.candidates = j.value("candidates", e.candidates);
  e.sample_latent = j.value("sample_latent", e.sample_latent);
  e.entropy_samples = j.value("entropy_samples", e.entropy_samples);
  e.k_sweep = j.value("k_sweep", e.k_sweep);
  e.split_part = j.value("split_part", e.split_part);
}

inline void to_json(nlohmann::json& j, const SweepSettings& s) {
  j = {{"flow_steps", s.flow_steps}, {"seeds", s.seeds}};
}

inline void from_json(const nlohmann::json& j, SweepSettings& s) {
  s.flow_steps = j.value("flow_steps", s.flow_steps);
  s.seeds = j.value("seeds", s.seeds);
}

inline void to_json(nlohmann::json& j, const RunConfig& c) {
  j = {{"command", c.command}, {"train", c.train},     {"data", c.data},   {"output_dir", c.output_dir},
       {"checkpoint", c.checkpoint}, {"eval", c.eval}, {"sweep", c.sweep}, {"synth", c.synth}};
}

inline void from_json(const nlohmann::json& j, RunConfig& c) {
  c.command = j.value("command", c.command);
  if (j.contains("train")) c.train = j.at("train").get<TrainConfig>();
  if (j.contains("data")) c.data = j.at("data").get<DataPaths>();
  c.output_dir = j.value("output_dir", c.output_dir);
  c.checkpoint = j.value("checkpoint", c.checkpoint);
  if (j.contains("eval")) c.eval = j.at("eval").get<EvalSettings>();
  if (j.contains("sweep")) c.sweep = j.at("sweep").get<SweepSettings>();
  if (j.contains("synth")) c.synth = j.at("synth").get<SynthOptions>();
}

inline const std::vector<std::string>& commands() {
  static const std::vector<std::string> v{"train", "eval", "sweep", "synth", "inspect-checkpoint"};
  return v;
}

namespace detail {

template <class T>
std::vector<T> parse_list(const std::string& text, const char* field) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      std::size_t used = 0;
      const auto v = std::stoull(item, &used);
      if (used != item.size()) throw std::invalid_argument(item);
      out.push_back(static_cast<T>(v));
    } catch (const std::exception&) {
      throw ValidationError({std::string(field) + ": not a list of non-negative integers: " + text});
    }
  }
  return out;
}

inline bool file_exists(const std::string& path) { return std::filesystem::is_regular_file(path); }

inline void require_file(std::vector<std::string>& errors, const char* field, const std::string& path) {
  if (path.empty())
    errors.push_back(std::string(field) + ": required");
  else if (!file_exists(path))
    errors.push_back(std::string(field) + ": file not found: " + path);
}

inline nlohmann::json read_json(const std::string& path, const char* what) {
  std::ifstream in(path);
  if (!in) throw ValidationError({std::string(what) + ": cannot open " + path});
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError({std::string(what) + ": " + path + ": " + e.what()});
  }
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

}  // namespace detail

// Errors that make the resolved config unusable for its command.
inline std::vector<std::string> validate(const RunConfig& c) {
  std::vector<std::string> errors;
  const auto& cmd = c.command;
  if (std::find(commands().begin(), commands().end(), cmd) == commands().end())
    errors.push_back("command: unknown command '" + cmd + "'");
  if (c.output_dir.empty() && cmd != "inspect-checkpoint") errors.push_back("output_dir: required");
  if (cmd == "train" || cmd == "sweep") {
    detail::require_file(errors, "data.triples", c.data.triples);
    detail::require_file(errors, "data.split", c.data.split);
    for (const auto& e : npfkgc::validate(c.train)) errors.push_back("train." + e);
    const bool ent = !c.data.entity_embeddings.empty(), rel = !c.data.relation_embeddings.empty();
    if (ent != rel) errors.push_back("data.entity_embeddings and data.relation_embeddings must be given together");
    if (ent) {
      detail::require_file(errors, "data.entity_embeddings", c.data.entity_embeddings);
      detail::require_file(errors, "data.relation_embeddings", c.data.relation_embeddings);
    }
    if (c.data.init != "transe" && c.data.init != "random") errors.push_back("data.init: must be transe or random");
  }
  if (cmd == "sweep") {
    if (c.sweep.flow_steps.empty()) errors.push_back("sweep.flow_steps: must be nonempty");
    if (c.sweep.seeds.empty()) errors.push_back("sweep.seeds: must be nonempty");
  }
  if (cmd == "eval" || cmd == "inspect-checkpoint") detail::require_file(errors, "checkpoint", c.checkpoint);
  if (cmd == "eval") {
    detail::require_file(errors, "data.triples", c.data.triples);
    if (!c.data.split.empty() && !detail::file_exists(c.data.split))
      errors.push_back("data.split: file not found: " + c.data.split);
    if (!c.eval.candidates.empty() && !detail::file_exists(c.eval.candidates))
      errors.push_back("eval.candidates: file not found: " + c.eval.candidates);
    for (auto k : c.eval.k_sweep)
      if (k == 0) errors.push_back("eval.k_sweep: K must be positive");
  }
  if (cmd == "eval" || cmd == "sweep") {
    if (c.eval.hits_at.empty()) errors.push_back("eval.hits_at: must be nonempty");
    for (auto n : c.eval.hits_at)
      if (n == 0) errors.push_back("eval.hits_at: N must be positive");
    if (c.eval.split_part != "test" && c.eval.split_part != "valid" && c.eval.split_part != "train")
      errors.push_back("eval.split_part: must be train, valid or test");
  }
  if (cmd == "synth") {
    try {
      check_feasible(c.synth);
    } catch (const std::invalid_argument& e) {
      std::string msg = e.what();
      std::stringstream ss(msg);
      std::string line;
      std::getline(ss, line);
      while (std::getline(ss, line)) errors.push_back("synth." + line.substr(line.find_first_not_of(' ')));
    }
  }
  return errors;
}

struct Parsed {
  RunConfig config;
  nlohmann::json model_patch;  // model fields set explicitly by file or flags
  bool help = false;
  std::string help_text;
};

// Parses argv into a resolved config. Throws ValidationError.
inline Parsed parse_args(const std::vector<std::string>& args) {
  CLI::App app{"NP-FKGC few-shot knowledge graph completion"};
  app.require_subcommand(0, 1);
  std::string config_file;
  app.add_option("--config", config_file, "JSON config file (flags override it)");

  // Flag values are collected as JSON pointers into the config.
  struct FlagValue {
    std::string pointer;
    std::string text;
    enum Kind { uint, real, text_value, uint_list } kind;
    CLI::Option* opt = nullptr;
  };
  std::deque<FlagValue> flags;
  auto add = [&](CLI::App* sub, const std::string& name, const std::string& pointer, FlagValue::Kind kind,
                 const std::string& help) {
    flags.push_back({pointer, "", kind});
    flags.back().opt = sub->add_option(name, flags.back().text, help);
  };

  auto model_flags = [&](CLI::App* s) {
    add(s, "--dim", "/train/model/dim", FlagValue::uint, "embedding dimension d");
    add(s, "--latent-dim", "/train/model/latent_dim", FlagValue::uint, "latent dimension d_z");
    add(s, "--gnn-layers", "/train/model/gnn_layers", FlagValue::uint, "ARP-GNN layers L");
    add(s, "--flow", "/train/model/flow", FlagValue::text_value, "planar | radial | realnvp");
    add(s, "--flow-steps", "/train/model/flow_steps", FlagValue::uint, "flow stages T");
    add(s, "--lstm-hidden", "/train/model/lstm_hidden", FlagValue::uint, "Bi-LSTM hidden size H");
    add(s, "--lstm-layers", "/train/model/lstm_layers", FlagValue::uint, "Bi-LSTM layers");
    add(s, "--neighbor-cap", "/train/model/neighbor_cap", FlagValue::uint, "max neighbors per entity");
  };
  auto train_flags = [&](CLI::App* s) {
    model_flags(s);
    add(s, "--k", "/train/k", FlagValue::uint, "support size K");
    add(s, "--negatives", "/train/negatives", FlagValue::uint, "negatives per support triple n");
    add(s, "--query-negatives", "/train/query_negatives", FlagValue::uint, "negatives per query triple");
    add(s, "--max-queries", "/train/max_queries", FlagValue::uint, "queries per training task (0 = all)");
    add(s, "--margin", "/train/margin", FlagValue::real, "ranking margin gamma");
    add(s, "--lr", "/train/lr", FlagValue::real, "Adam learning rate");
    add(s, "--mc-samples", "/train/mc_samples", FlagValue::uint, "Monte-Carlo samples per episode");
    add(s, "--batch", "/train/batch", FlagValue::uint, "episodes per step");
    add(s, "--steps-per-epoch", "/train/steps_per_epoch", FlagValue::uint, "steps per epoch (0 = auto)");
    add(s, "--epochs", "/train/max_epochs", FlagValue::uint, "maximum epochs");
    add(s, "--patience", "/train/patience", FlagValue::uint, "early-stopping patience");
    add(s, "--seed", "/train/seed", FlagValue::uint, "master seed");
    add(s, "--loss-orientation", "/train/loss_orientation", FlagValue::text_value, "corrected | literal");
    add(s, "--init", "/data/init", FlagValue::text_value, "embedding init without files: transe | random");
    add(s, "--entity-embeddings", "/data/entity_embeddings", FlagValue::text_value, "entity embedding file");
    add(s, "--relation-embeddings", "/data/relation_embeddings", FlagValue::text_value, "relation embedding file");
  };
  auto data_flags = [&](CLI::App* s) {
    add(s, "--triples", "/data/triples", FlagValue::text_value, "tab-separated triple file");
    add(s, "--split", "/data/split", FlagValue::text_value, "split JSON file");
    add(s, "--output-dir", "/output_dir", FlagValue::text_value, "output directory");
  };
  auto eval_flags = [&](CLI::App* s) {
    add(s, "--eval-k", "/eval/k", FlagValue::uint, "support size for evaluation (0 = training K)");
    add(s, "--hits-at", "/eval/hits_at", FlagValue::uint_list, "comma-separated Hits@N cutoffs");
    add(s, "--entropy-samples", "/eval/entropy_samples", FlagValue::uint, "latent entropy samples (0 = off)");
    add(s, "--part", "/eval/split_part", FlagValue::text_value, "split part to evaluate: train | valid | test");
  };

  auto* train = app.add_subcommand("train", "train a model");
  data_flags(train);
  train_flags(train);

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  data_flags(eval);
  model_flags(eval);
  eval_flags(eval);
  add(eval, "--checkpoint", "/checkpoint", FlagValue::text_value, "checkpoint file");
  add(eval, "--candidates", "/eval/candidates", FlagValue::text_value, "candidate list JSON");
  add(eval, "--k-sweep", "/eval/k_sweep", FlagValue::uint_list, "comma-separated K values");

  auto* sweep = app.add_subcommand("sweep", "train and evaluate over flow steps and seeds");
  data_flags(sweep);
  train_flags(sweep);
  eval_flags(sweep);
  add(sweep, "--flow-steps-list", "/sweep/flow_steps", FlagValue::uint_list, "comma-separated T values");
  add(sweep, "--seeds", "/sweep/seeds", FlagValue::uint_list, "comma-separated seeds");

  auto* synth = app.add_subcommand("synth", "generate a synthetic compositional graph");
  add(synth, "--output-dir", "/output_dir", FlagValue::text_value, "output directory");
  add(synth, "--entities", "/synth/entities", FlagValue::uint, "entity count");
  add(synth, "--train-relations", "/synth/train", FlagValue::uint, "training few-shot relations");
  add(synth, "--valid-relations", "/synth/valid", FlagValue::uint, "validation few-shot relations");
  add(synth, "--test-relations", "/synth/test", FlagValue::uint, "test few-shot relations");
  add(synth, "--heads", "/synth/heads_per_relation", FlagValue::uint, "heads per few-shot relation");
  add(synth, "--arity", "/synth/arity", FlagValue::uint, "tails per head of one-to-many relations");
  add(synth, "--one-to-many-fraction", "/synth/one_to_many_fraction", FlagValue::real,
      "share of one-to-many relations per split part");
  add(synth, "--seed", "/synth/seed", FlagValue::uint, "generator seed");
  add(synth, "--dim", "/synth/transe/dim", FlagValue::uint, "TransE dimension");
  add(synth, "--transe-epochs", "/synth/transe/epochs", FlagValue::uint, "TransE epochs");

  auto* inspect = app.add_subcommand("inspect-checkpoint", "describe a checkpoint");
  add(inspect, "--checkpoint", "/checkpoint", FlagValue::text_value, "checkpoint file");

  bool freeze = false, enrich = false, raw = false, sample = false;
  for (auto* s : {train, sweep}) {
    s->add_flag("--freeze-embeddings", freeze, "keep e0 fixed during training");
    s->add_flag("--enrich", enrich, "also train on non-split relations with more than K+1 triples");
  }
  for (auto* s : {eval, sweep}) {
    s->add_flag("--raw", raw, "unfiltered ranking");
    s->add_flag("--sample-latent", sample, "rank with a sampled latent instead of the mean");
  }

  Parsed parsed;
  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    parsed.help = true;
    parsed.help_text = app.help();
    return parsed;
  } catch (const CLI::CallForAllHelp&) {
    parsed.help = true;
    parsed.help_text = app.help("", CLI::AppFormatMode::All);
    return parsed;
  } catch (const CLI::ParseError& e) {
    throw ValidationError({e.what()});
  }

  nlohmann::json patch = nlohmann::json::object();
  if (!config_file.empty()) {
    patch = detail::read_json(config_file, "--config");
    if (!patch.is_object()) throw ValidationError({"--config: top level must be an object"});
  }
  for (auto* s : {train, eval, sweep, synth, inspect})
    if (s->parsed()) patch["command"] = s->get_name();
  if (!patch.contains("command")) throw ValidationError({"command: one of train, eval, sweep, synth, inspect-checkpoint is required"});

  std::vector<std::string> errors;
  for (const auto& f : flags) {
    if (!f.opt || f.opt->count() == 0) continue;
    const nlohmann::json::json_pointer ptr(f.pointer);
    try {
      switch (f.kind) {
        case FlagValue::uint: {
          std::size_t used = 0;
          const auto v = std::stoull(f.text, &used);
          if (used != f.text.size() || f.text.find('-') != std::string::npos) throw std::invalid_argument(f.text);
          patch[ptr] = v;
          break;
        }
        case FlagValue::real: {
          std::size_t used = 0;
          const double v = std::stod(f.text, &used);
          if (used != f.text.size()) throw std::invalid_argument(f.text);
          patch[ptr] = v;
          break;
        }
        case FlagValue::text_value:
          patch[ptr] = f.text;
          break;
        case FlagValue::uint_list:
          patch[ptr] = detail::parse_list<std::size_t>(f.text, f.opt->get_name().c_str());
          break;
      }
    } catch (const ValidationError& e) {
      errors.insert(errors.end(), e.errors().begin(), e.errors().end());
    } catch (const std::exception&) {
      errors.push_back(f.opt->get_name() + ": invalid value '" + f.text + "'");
    }
  }
  if (freeze) patch["train"]["freeze_embeddings"] = true;
  if (enrich) patch["train"]["enrich"] = true;
  if (raw) patch["eval"]["filtered"] = false;
  if (sample) patch["eval"]["sample_latent"] = true;
  if (const char* env = std::getenv(kOutputDirEnv); env && *env) patch["output_dir"] = env;
  if (!errors.empty()) throw ValidationError(errors);

  if (patch.contains("train") && patch["train"].is_object() && patch["train"].contains("model"))
    parsed.model_patch = patch["train"]["model"];
  try {
    parsed.config = patch.get<RunConfig>();
  } catch (const std::exception& e) {
    throw ValidationError({std::string("config: ") + e.what()});
  }
  return parsed;
}

// Resolved config written next to every command's outputs.
inline void echo_config(const RunConfig& c, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  detail::write_text(dir / "config.resolved.json", nlohmann::json(c).dump(2) + "\n");
}

struct LoadedData {
  KnowledgeGraph kg;
  TaskSplit split;
};

inline LoadedData load_data(const RunConfig& c) {
  LoadedData d;
  d.kg = load_triples(c.data.triples);
  if (!c.data.split.empty()) d.split = load_split(c.data.split, d.kg);
  return d;
}

inline EmbeddingTable initial_embeddings(const RunConfig& c, const KnowledgeGraph& kg, const TaskSplit& split) {
  if (!c.data.entity_embeddings.empty()) {
    EmbeddingTable t = load_embeddings(c.data.entity_embeddings, c.data.relation_embeddings, kg);
    if (t.dim() != c.train.model.dim) {
      throw ValidationError({"train.model.dim: embedding files have dimension " + std::to_string(t.dim()) +
                             ", config asks for " + std::to_string(c.train.model.dim)});
    }
    return t;
  }
  if (c.data.init == "random") {
    Rng rng = make_stream(c.train.seed, Stream::transe);
    return init_embeddings(kg, c.train.model.dim, rng);
  }
  TransEOptions opt;
  opt.dim = c.train.model.dim;
  Rng rng = make_stream(c.train.seed, Stream::transe);
  return pretrain_transe(kg, opt, rng, split.all()).embeddings;
}

inline const std::vector<RelationId>& split_part(const TaskSplit& split, const std::string& part) {
  if (part == "train") return split.train;
  if (part == "valid") return split.valid;
  return split.test;
}

inline EvalOptions eval_options(const RunConfig& c, const TrainConfig& trained) {
  EvalOptions opt;
  opt.k = c.eval.k ? c.eval.k : trained.k;
  opt.negatives_per_support = trained.negatives;
  opt.hits_at = c.eval.hits_at;
  std::sort(opt.hits_at.begin(), opt.hits_at.end());
  opt.filtered = c.eval.filtered;
  opt.sample_latent = c.eval.sample_latent;
  opt.entropy_samples = c.eval.entropy_samples;
  opt.seed = trained.seed;
  if (c.eval.split_part == "valid") opt.stream = Stream::validation;
  return opt;
}

inline std::string summary_line(const EvalReport& r) {
  std::string s = "k=" + std::to_string(r.k) + " queries=" + std::to_string(r.query_count());
  if (r.empty()) return s + " mrr=nan";
  s += " mrr=" + npfkgc::detail::format_double(r.overall.mrr);
  for (const auto& [n, v] : r.overall.hits) s += " hits@" + std::to_string(n) + "=" + npfkgc::detail::format_double(v);
  return s;
}

struct TrainArtifacts {
  TrainResult result;
  std::filesystem::path best;
  std::filesystem::path last;
  std::filesystem::path log;
};

// Trains one model and writes best.ckpt, final.ckpt, train.log and kl.tsv.
inline TrainArtifacts train_to(const RunConfig& c, const LoadedData& data, const std::filesystem::path& dir,
                               std::ostream& out) {
  std::filesystem::create_directories(dir);
  EmbeddingTable init = initial_embeddings(c, data.kg, data.split);
  auto model = make_model(data.kg, data.split, init, c.train);
  Trainer trainer(data.kg, data.split, c.train, *model);
  TrainArtifacts a;
  a.log = dir / "train.log";
  std::ofstream log(a.log);
  if (!log) throw DataError("cannot write " + a.log.string());
  a.result = trainer.run([&](const std::string& line) {
    log << line << '\n';
    log.flush();
    out << line << '\n';
  });
  log.close();
  a.best = dir / "best.ckpt";
  a.last = dir / "final.ckpt";
  save_checkpoint(make_checkpoint(data.kg, data.split, c.train, a.result.best), a.best.string());
  save_checkpoint(make_checkpoint(data.kg, data.split, c.train, a.result.last), a.last.string());
  std::ifstream in(a.log);
  detail::write_text(dir / "kl.tsv", kl_tsv(kl_trajectory(in)));
  return a;
}

inline int cmd_train(const RunConfig& c, std::ostream& out) {
  const std::filesystem::path dir(c.output_dir);
  echo_config(c, dir);
  LoadedData data = load_data(c);
  if (data.kg.duplicates_dropped()) out << "dropped " << data.kg.duplicates_dropped() << " duplicate triples\n";
  auto a = train_to(c, data, dir, out);
  out << "best epoch " << a.result.best.epoch << " valid_mrr="
      << npfkgc::detail::format_double(a.result.best.best_valid_mrr) << '\n';
  out << "wrote " << a.best.string() << " and " << a.last.string() << '\n';
  return kSuccess;
}

inline std::map<RelationId, std::vector<EntityId>> load_candidates(const std::string& path, const KnowledgeGraph& kg) {
  const nlohmann::json j = detail::read_json(path, "eval.candidates");
  std::map<RelationId, std::vector<EntityId>> out;
  for (const auto& [rel, ents] : j.items()) {
    const RelationId r = kg.relations().at(rel);
    for (const auto& e : ents) out[r].push_back(kg.entities().at(e.get<std::string>()));
  }
  return out;
}

// Model config requested for a checkpoint: the stored one with explicitly
// given fields replaced.
inline ModelConfig requested_model(const ModelConfig& stored, const nlohmann::json& patch) {
  nlohmann::json j = stored;
  if (patch.is_object()) j.merge_patch(patch);
  return j.get<ModelConfig>();
}

inline int cmd_eval(RunConfig c, const nlohmann::json& model_patch, std::ostream& out, std::ostream& err) {
  const std::filesystem::path dir(c.output_dir);
  Checkpoint ck = load_checkpoint(c.checkpoint);
  check_config(ck.config.model, requested_model(ck.config.model, model_patch));
  c.train = ck.config;
  echo_config(c, dir);

  KnowledgeGraph kg = load_triples(c.data.triples);
  auto model = restore_model(ck, kg);
  const TaskSplit split = c.data.split.empty() ? split_from_json(ck.split, kg) : load_split(c.data.split, kg);
  const auto& relations = split_part(split, c.eval.split_part);
  EvalOptions opt = eval_options(c, ck.config);
  if (!c.eval.candidates.empty()) {
    opt.policy = CandidatePolicy::provided_list;
    opt.candidates = load_candidates(c.eval.candidates, kg);
  }

  if (!c.eval.k_sweep.empty()) {
    const auto rows = kshot_sweep(*model, kg, relations, c.eval.k_sweep, opt);
    const std::string tsv = sweep_tsv(rows, opt.hits_at);
    detail::write_text(dir / "sweep.tsv", tsv);
    nlohmann::json reports = nlohmann::json::array();
    for (const auto& row : rows) reports.push_back(report_json(row.report));
    detail::write_text(dir / "sweep.json", reports.dump(2) + "\n");
    out << tsv;
    const bool any = std::any_of(rows.begin(), rows.end(), [](const SweepRow& r) { return !r.report.empty(); });
    if (!any) {
      err << "error: no " << c.eval.split_part << " relation has more than K triples for any K in the sweep\n";
      return kRuntimeError;
    }
    return kSuccess;
  }

  const EvalReport report = evaluate(*model, kg, relations, opt);
  detail::write_text(dir / "report.json", report_json(report).dump(2) + "\n");
  for (const auto& s : report.skipped) err << "warning: skipped " << s << " (at most K triples)\n";
  out << summary_line(report) << '\n';
  if (report.empty()) {
    err << "error: no " << c.eval.split_part << " relation has more than K=" << opt.k << " triples\n";
    return kRuntimeError;
  }
  return kSuccess;
}

struct FlowSweepRow {
  std::size_t flow_steps = 0;
  std::uint64_t seed = 0;
  EvalReport report;
};

inline std::string flow_sweep_tsv(const std::vector<FlowSweepRow>& rows, const std::vector<std::size_t>& hits_at) {
  using npfkgc::detail::format_double;
  std::ostringstream out;
  out << "flow_steps\tseed\tqueries\tmrr";
  for (auto n : hits_at) out << "\thits@" << n;
  out << "\tmrr_one_to_one\tmrr_one_to_many\n";
  auto cat = [](const EvalReport& r, RelationCategory c) {
    auto it = r.by_category.find(c);
    return it == r.by_category.end() ? std::string("nan") : format_double(it->second.mrr);
  };
  for (const auto& row : rows) {
    const auto& m = row.report.overall;
    out << row.flow_steps << '\t' << row.seed << '\t' << m.count << '\t' << format_double(m.mrr);
    for (auto n : hits_at) out << '\t' << format_double(m.hits.count(n) ? m.hits.at(n) : 0.0);
    out << '\t' << cat(row.report, RelationCategory::one_to_one) << '\t'
        << cat(row.report, RelationCategory::one_to_many) << '\n';
  }
  return out.str();
}

// Trains one model per (T, seed) and evaluates each best checkpoint.
inline std::vector<FlowSweepRow> flow_sweep(const RunConfig& c, const LoadedData& data, const std::filesystem::path& dir,
                                            std::ostream& out) {
  std::vector<FlowSweepRow> rows;
  for (auto t : c.sweep.flow_steps) {
    for (auto seed : c.sweep.seeds) {
      RunConfig run = c;
      run.train.model.flow_steps = t;
      run.train.seed = seed;
      const auto sub = dir / ("T" + std::to_string(t) + "_seed" + std::to_string(seed));
      std::ostringstream quiet;
      auto a = train_to(run, data, sub, quiet);
      EmbeddingTable blank = initial_embeddings(run, data.kg, data.split);
      auto model = make_model(data.kg, data.split, blank, run.train);
      restore(model->params, a.result.best.params);
      FlowSweepRow row{t, seed, evaluate(*model, data.kg, split_part(data.split, c.eval.split_part), eval_options(run, run.train))};
      out << "T=" << t << " seed=" << seed << ' ' << summary_line(row.report) << '\n';
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

inline int cmd_sweep(const RunConfig& c, std::ostream& out) {
  const std::filesystem::path dir(c.output_dir);
  echo_config(c, dir);
  LoadedData data = load_data(c);
  auto rows = flow_sweep(c, data, dir, out);
  std::vector<std::size_t> hits = c.eval.hits_at;
  std::sort(hits.begin(), hits.end());
  const std::string tsv = flow_sweep_tsv(rows, hits);
  detail::write_text(dir / "sweep_flow.tsv", tsv);
  out << tsv;
  return kSuccess;
}

inline int cmd_synth(const RunConfig& c, std::ostream& out) {
  const std::filesystem::path dir(c.output_dir);
  echo_config(c, dir);
  SynthData data = generate_synthetic(c.synth);
  const SynthPaths paths = write_synthetic(data, dir.string());
  out << "entities=" << data.kg.num_entities() << " relations=" << data.kg.num_relations()
      << " triples=" << data.kg.triples().size() << '\n';
  for (const auto& p : {paths.triples, paths.split, paths.entity_embeddings, paths.relation_embeddings})
    out << "wrote " << p << '\n';
  return kSuccess;
}

inline nlohmann::json describe_checkpoint(const Checkpoint& ck) {
  nlohmann::json j;
  j["format_version"] = kCheckpointVersion;
  j["config"] = ck.config;
  j["epoch"] = ck.state.epoch;
  j["best_valid_mrr"] = ck.state.best_valid_mrr;
  j["entities"] = ck.entity_names.size();
  j["relations"] = ck.relation_names.size();
  j["split"] = ck.split;
  j["adam_step"] = ck.state.adam.step;
  std::size_t total = 0;
  j["parameters"] = nlohmann::json::array();
  for (std::size_t i = 0; i < ck.state.params.names.size(); ++i) {
    const std::size_t n = shape_size(ck.state.params.shapes[i]);
    total += n;
    j["parameters"].push_back({{"name", ck.state.params.names[i]}, {"shape", ck.state.params.shapes[i]}, {"size", n}});
  }
  j["parameter_count"] = total;
  return j;
}

inline int cmd_inspect(const RunConfig& c, std::ostream& out) {
  out << describe_checkpoint(load_checkpoint(c.checkpoint)).dump(2) << '\n';
  return kSuccess;
}

// Full command-line entry point; `args` excludes the program name.
inline int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  try {
    Parsed p = parse_args(args);
    if (p.help) {
      out << p.help_text;
      return kSuccess;
    }
    const auto errors = validate(p.config);
    if (!errors.empty()) throw ValidationError(errors);
    const auto& cmd = p.config.command;
    if (cmd == "train") return cmd_train(p.config, out);
    if (cmd == "eval") return cmd_eval(p.config, p.model_patch, out, err);
    if (cmd == "sweep") return cmd_sweep(p.config, out);
    if (cmd == "synth") return cmd_synth(p.config, out);
    return cmd_inspect(p.config, out);
  } catch (const ValidationError& e) {
    for (const auto& msg : e.errors()) err << "error: " << msg << '\n';
    return kValidationError;
  } catch (const ConfigConflictError& e) {
    err << "error: " << e.what() << '\n';
    return kValidationError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kRuntimeError;
  }
}

inline int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace npfkgc::cli
