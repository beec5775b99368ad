#include "cif/cli.h"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>

#include "CLI11.hpp"
#include "cif/checkpoint.h"
#include "cif/config.h"
#include "cif/data.h"
#include "cif/inference.h"
#include "cif/labels.h"
#include "cif/ngram_lm.h"
#include "cif/trainer.h"
#include "json.hpp"

namespace cif {
namespace {

constexpr int kRuntimeFailure = 1;
constexpr int kUsageError = 2;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct GenDataArgs {
  std::string task = "easy";
  std::string out_dir;
  std::size_t train = 2000, dev = 200, test = 200;
  std::uint64_t seed = 1;
};

struct TrainArgs {
  std::string config_path, train_path, vocab_path, out_path, log_path;
  bool resume = false;
  std::map<std::string, std::string> overrides;
};

struct DecodeArgs {
  std::string checkpoint, data, vocab, lm_path, nbest_path, out_path;
  std::size_t beam = 1;
  double gamma = 0.0;
  std::size_t lm_order = 3;
  bool online = false;
  std::size_t tolerance = 1;
  std::string metric = "cer";
};

std::vector<std::vector<int>> read_label_corpus(const std::string& path, const Vocabulary& vocab) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open LM corpus '" + path + "'");
  std::vector<std::vector<int>> corpus;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    std::istringstream words(line);
    std::vector<int> ids;
    std::string w;
    try {
      while (words >> w) ids.push_back(vocab.id(w));
    } catch (const DataError& e) {
      throw DataError(path + ":" + std::to_string(number) + ": " + e.what());
    }
    corpus.push_back(std::move(ids));
  }
  return corpus;
}

void check_output(std::ostream& out, const std::string& what) {
  if (!out) throw DataError("failed writing " + what);
}

int cmd_gen_data(const GenDataArgs& a, std::ostream& out) {
  const TaskSpec spec = TaskSpec::named(a.task);
  std::filesystem::create_directories(a.out_dir);
  const std::filesystem::path dir(a.out_dir);
  const Vocabulary vocab = Vocabulary::with_symbols(spec.symbols);
  vocab.save((dir / "vocab.txt").string());
  const struct {
    const char* name;
    std::size_t count;
    std::uint64_t offset;
  } splits[] = {{"train", a.train, 0}, {"dev", a.dev, 1}, {"test", a.test, 2}};
  std::ofstream corpus(dir / "lm.txt");
  for (const auto& s : splits) {
    const auto samples = gen_grouped_symbols(spec, s.count, a.seed * 3 + s.offset,
                                             std::string(s.name) + "-");
    write_dataset((dir / (std::string(s.name) + ".jsonl")).string(), samples);
    if (s.offset == 0)
      for (const auto& x : samples) corpus << vocab.render(x.symbols()) << '\n';
    out << s.name << "\t" << samples.size() << "\n";
  }
  check_output(corpus, "LM corpus");
  return 0;
}

int cmd_train(const TrainArgs& a, std::ostream& out) {
  ExperimentConfig config;
  if (!a.config_path.empty()) config = load_config(a.config_path);
  if (!a.vocab_path.empty()) config.model.vocab_size = Vocabulary::load(a.vocab_path).size();
  for (const auto& [k, v] : a.overrides) {
    try {
      config.set(k, v);
    } catch (const ConfigError& e) {
      throw UsageError(std::string("--") + k + ": " + e.what());
    }
  }
  config.validate();
  if (config.model.vocab_size <= static_cast<std::size_t>(kReservedLabels))
    throw ConfigError("vocab_size not set: pass --vocab or set vocab_size");
  Trainer trainer(config, read_dataset(a.train_path));
  const bool resuming = a.resume && std::filesystem::exists(a.out_path);
  if (resuming) trainer.resume(a.out_path);
  std::ofstream log_file;
  std::ostream* log = nullptr;
  if (!a.log_path.empty()) {
    log_file.open(a.log_path, resuming ? std::ios::app : std::ios::trunc);
    if (!log_file) throw DataError("cannot write training log '" + a.log_path + "'");
    if (!resuming) log_file << training_log_header() << '\n';
    log = &log_file;
  }
  trainer.run(config.train.total_steps, log, a.out_path);
  out << "trained to step " << trainer.step() << ", checkpoint " << a.out_path << "\n";
  return 0;
}

struct LoadedModel {
  std::unique_ptr<Model> model;
  ExperimentConfig config;
  std::unique_ptr<NGramLM> lm;
};

LoadedModel load_for_decoding(const DecodeArgs& a, const Vocabulary* vocab) {
  LoadedModel m;
  m.model = load_model(a.checkpoint, &m.config);
  if (vocab && vocab->size() != m.config.model.vocab_size) {
    throw CheckpointError("vocabulary has " + std::to_string(vocab->size()) +
                          " labels but the checkpoint expects " +
                          std::to_string(m.config.model.vocab_size));
  }
  if (!a.lm_path.empty()) {
    if (!vocab) throw UsageError("--lm requires --vocab");
    m.lm = std::make_unique<NGramLM>(ngram_train(read_label_corpus(a.lm_path, *vocab), a.lm_order,
                                                 vocab->size()));
  }
  return m;
}

EvalOptions eval_options(const DecodeArgs& a, const LoadedModel& m) {
  EvalOptions o;
  o.beam = a.beam;
  o.gamma = a.gamma;
  o.lm = m.lm.get();
  o.online = a.online;
  o.boundary_tolerance = a.tolerance;
  return o;
}

int cmd_eval(const DecodeArgs& a, std::ostream& out) {
  std::unique_ptr<Vocabulary> vocab;
  if (!a.vocab.empty()) vocab = std::make_unique<Vocabulary>(Vocabulary::load(a.vocab));
  LoadedModel m = load_for_decoding(a, vocab.get());
  const auto samples = read_dataset(a.data);
  const std::string report =
      evaluate(*m.model, m.config.cif, samples, eval_options(a, m)).to_json(a.metric);
  if (a.out_path.empty()) {
    out << report << "\n";
  } else {
    std::ofstream f(a.out_path);
    f << report << "\n";
    check_output(f, "metrics '" + a.out_path + "'");
  }
  return 0;
}

int cmd_decode(const DecodeArgs& a, std::ostream& out) {
  const Vocabulary vocab = Vocabulary::load(a.vocab);
  LoadedModel m = load_for_decoding(a, &vocab);
  std::ofstream nbest;
  if (!a.nbest_path.empty()) {
    nbest.open(a.nbest_path);
    if (!nbest) throw DataError("cannot write n-best file '" + a.nbest_path + "'");
  }
  const EvalOptions options = eval_options(a, m);
  DatasetReader reader(a.data);
  while (auto s = reader.next()) {
    const UtteranceResult r = decode_utterance(*m.model, m.config.cif, *s, options);
    out << r.id << '\t' << vocab.render(r.best.tokens) << '\n';
    if (nbest.is_open()) {
      for (std::size_t i = 0; i < r.nbest.size(); ++i) {
        nlohmann::ordered_json j;
        j["id"] = r.id;
        j["rank"] = i + 1;
        j["tokens"] = vocab.render(r.nbest[i].tokens);
        j["model_logprob"] = r.nbest[i].model_logprob;
        j["lm_logprob"] = r.nbest[i].lm_logprob;
        j["combined"] = r.nbest[i].combined;
        nbest << j.dump() << '\n';
      }
    }
  }
  if (nbest.is_open()) check_output(nbest, "n-best file");
  return 0;
}

int cmd_align(const DecodeArgs& a, std::ostream& out) {
  const Vocabulary vocab = Vocabulary::load(a.vocab);
  LoadedModel m = load_for_decoding(a, &vocab);
  const EvalOptions options = eval_options(a, m);
  DatasetReader reader(a.data);
  while (auto s = reader.next()) {
    const UtteranceResult r = decode_utterance(*m.model, m.config.cif, *s, options);
    out << r.id;
    for (std::size_t i = 0; i < r.best.tokens.size(); ++i)
      out << ' ' << vocab.label(r.best.tokens[i]) << '@' << r.positions[i];
    out << '\n';
  }
  return 0;
}

void add_decode_flags(CLI::App* cmd, DecodeArgs& a, bool needs_vocab) {
  cmd->add_option("--checkpoint", a.checkpoint, "Model checkpoint")->required();
  cmd->add_option("--data", a.data, "Dataset (JSON lines)")->required();
  auto* vocab = cmd->add_option("--vocab", a.vocab, "Vocabulary file");
  if (needs_vocab) vocab->required();
  cmd->add_option("--beam", a.beam, "Beam width (1 = greedy)")->check(CLI::PositiveNumber);
  cmd->add_option("--gamma", a.gamma, "LM weight for rescoring");
  cmd->add_option("--lm", a.lm_path, "LM training corpus, one label sequence per line");
  cmd->add_option("--lm-order", a.lm_order, "n-gram order")->check(CLI::PositiveNumber);
  cmd->add_flag("--online", a.online, "Chunked encoder with streaming CIF");
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Continuous integrate-and-fire sequence transduction toolkit"};
  app.require_subcommand(1);

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate synthetic train/dev/test splits");
  gen_cmd->add_option("--task", gen.task, "easy or hard")->check(CLI::IsMember({"easy", "hard"}));
  gen_cmd->add_option("--out", gen.out_dir, "Output directory")->required();
  gen_cmd->add_option("--train", gen.train, "Training samples");
  gen_cmd->add_option("--dev", gen.dev, "Development samples");
  gen_cmd->add_option("--test", gen.test, "Test samples");
  gen_cmd->add_option("--seed", gen.seed, "Random seed");

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "Train a model");
  train_cmd->add_option("--config", train.config_path, "Config file (key = value lines)");
  train_cmd->add_option("--train", train.train_path, "Training dataset")->required();
  train_cmd->add_option("--vocab", train.vocab_path, "Vocabulary file (sets vocab_size)");
  train_cmd->add_option("--out", train.out_path, "Checkpoint path")->required();
  train_cmd->add_option("--log", train.log_path, "Training log (tab separated)");
  train_cmd->add_flag("--resume", train.resume, "Continue from --out if it exists");
  std::string steps;
  train_cmd->add_option("--steps", steps, "Alias for --total_steps");
  std::map<std::string, std::string> flag_values;
  for (const auto& [key, value] : ExperimentConfig{}.to_pairs())
    train_cmd->add_option("--" + key, flag_values[key], "Overrides config key " + key);

  DecodeArgs eval_args, decode_args, align_args;
  auto* eval_cmd = app.add_subcommand("eval", "Decode a dataset and report metrics JSON");
  add_decode_flags(eval_cmd, eval_args, false);
  eval_cmd->add_option("--tolerance", eval_args.tolerance, "Boundary tolerance (encoder frames)");
  eval_cmd->add_option("--metric", eval_args.metric, "Rate key")->check(CLI::IsMember({"cer", "wer"}));
  eval_cmd->add_option("--out", eval_args.out_path, "Write metrics here instead of stdout");
  auto* decode_cmd = app.add_subcommand("decode", "Write utt_id<TAB>tokens per utterance");
  add_decode_flags(decode_cmd, decode_args, true);
  decode_cmd->add_option("--nbest", decode_args.nbest_path, "N-best JSON lines output");
  auto* align_cmd = app.add_subcommand("align", "Write utt_id label@frame ... per utterance");
  add_decode_flags(align_cmd, align_args, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    for (auto* sub : app.get_subcommands()) out << sub->help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return e.get_exit_code() == 0 ? 0 : kUsageError;
  }

  try {
    if (*gen_cmd) return cmd_gen_data(gen, out);
    if (*train_cmd) {
      for (const auto& [key, value] : flag_values)
        if (train_cmd->count("--" + key) > 0) train.overrides[key] = value;
      if (train_cmd->count("--steps") > 0) train.overrides["total_steps"] = steps;
      return cmd_train(train, out);
    }
    if (*eval_cmd) return cmd_eval(eval_args, out);
    if (*decode_cmd) return cmd_decode(decode_args, out);
    if (*align_cmd) return cmd_align(align_args, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kUsageError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kRuntimeFailure;
  }
  return kUsageError;
}

}  // namespace cif
