// SPDX-License-Identifier: Apache-2.0
#include "cli.hpp"

#include <CLI11.hpp>

#include <charconv>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "sqe/audio.hpp"
#include "sqe/error.hpp"
#include "sqe/features.hpp"
#include "sqe/manifest.hpp"
#include "sqe/metrics.hpp"
#include "sqe/model.hpp"
#include "sqe/profiler.hpp"
#include "sqe/training.hpp"

namespace sqe::cli {
namespace {

namespace fs = std::filesystem;

std::string num(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

bool is_manifest(const fs::path& p) { return p.extension() == ".csv"; }

// One input with optional labels, resolved to a file on disk.
struct InputRow {
  std::string display;  // as written by the user or the manifest
  fs::path file;
  TaskLabels labels;
};

std::vector<InputRow> collect_inputs(const fs::path& input) {
  if (!is_manifest(input)) {
    if (!fs::exists(input)) throw Error(ErrorKind::kIo, "input not found: " + input.string());
    return {{input.string(), input, {}}};
  }
  std::vector<InputRow> rows;
  for (const ManifestRow& row : load_manifest(input)) {
    rows.push_back({row.source_path, resolve_source(input, row.source_path), row.labels});
  }
  return rows;
}

EmbeddingSequence load_features(const fs::path& file, LogMelExtractor& extractor, bool normalize) {
  EmbeddingSequence seq;
  const auto ext = file.extension();
  if (ext == ".sqe") {
    seq = read_embedding_file(file);
  } else if (ext == ".wav") {
    AudioClip clip = read_wav(file.string());
    if (clip.sample_rate != extractor.config().sample_rate) {
      clip = resample(clip, extractor.config().sample_rate);
    }
    seq = extractor.compute(clip);
  } else {
    throw Error(ErrorKind::kFormat, "unsupported input type '" + ext.string() + "' (expected .wav or .sqe)");
  }
  return normalize ? normalize_embeddings(seq) : seq;
}

std::vector<Example> load_examples(const fs::path& input, LogMelExtractor& extractor, bool normalize) {
  std::vector<Example> out;
  for (InputRow& row : collect_inputs(input)) {
    try {
      out.push_back({row.display, load_features(row.file, extractor, normalize), row.labels});
    } catch (const Error& e) {
      throw Error(e.kind(), "row '" + row.display + "': " + e.what());
    }
  }
  if (out.empty()) throw Error(ErrorKind::kArgument, "no rows in " + input.string());
  return out;
}

struct MelFlags {
  MelConfig mel;
  bool normalize = false;
};

void add_mel_options(CLI::App* app, MelFlags& f) {
  app->add_option("--sample-rate", f.mel.sample_rate, "Analysis sample rate in Hz")->check(CLI::PositiveNumber);
  app->add_option("--window-ms", f.mel.window_ms, "STFT window length in ms")->check(CLI::PositiveNumber);
  app->add_option("--hop-ms", f.mel.hop_ms, "STFT hop in ms")->check(CLI::PositiveNumber);
  app->add_option("--fft-size", f.mel.fft_size, "FFT size")->check(CLI::PositiveNumber);
  app->add_option("--n-mels", f.mel.n_mels, "Number of mel bands")->check(CLI::PositiveNumber);
  app->add_option("--fmin", f.mel.fmin, "Lowest filter edge in Hz");
  app->add_option("--fmax", f.mel.fmax, "Highest filter edge in Hz");
  app->add_option("--log-floor", f.mel.log_floor, "Floor added before the log")->check(CLI::PositiveNumber);
  app->add_flag("--normalize,!--no-normalize", f.normalize,
                "Standardize each embedding column per utterance (default: off)");
}

struct ModelFlags {
  ModelConfig config;
  std::string variant = "framewise_transformer";
  std::string tasks = "mos";
  std::size_t input_dim = 0;
};

void add_model_options(CLI::App* app, ModelFlags& f, bool infer_dim) {
  app->add_option("--variant", f.variant, "framewise_transformer, framewise_bilstm or utterance_mlp");
  app->add_option("--tasks", f.tasks, "Comma-separated task list or 'mosra' for all six");
  if (infer_dim) {
    app->add_option("--input-dim", f.input_dim, "Embedding dimension (0 infers it from the data)");
  } else {
    f.input_dim = f.config.input_dim;
    app->add_option("--input-dim", f.input_dim, "Embedding dimension")->check(CLI::PositiveNumber);
  }
  app->add_option("--hidden-dim", f.config.hidden_dim, "Transformer width")->check(CLI::PositiveNumber);
  app->add_option("--layers", f.config.n_transformer_layers, "Transformer layers");
  app->add_option("--heads", f.config.n_heads, "Attention heads")->check(CLI::PositiveNumber);
  app->add_option("--ff-dim", f.config.ff_dim, "Feed-forward width")->check(CLI::PositiveNumber);
  app->add_option("--lstm-layers", f.config.n_bilstm_layers, "BiLSTM layers");
  app->add_option("--lstm-units", f.config.bilstm_units_per_dir, "LSTM units per direction")
      ->check(CLI::PositiveNumber);
  app->add_flag("--positional-encoding,!--no-positional-encoding", f.config.positional_encoding,
                "Add sinusoidal positional encoding (default: on)");
  app->add_option("--dropout", f.config.dropout_p, "Dropout probability")->check(CLI::Range(0.0, 0.99));
}

ModelConfig finish_model_config(const ModelFlags& f) {
  ModelConfig cfg = f.config;
  cfg.variant = parse_variant(f.variant);
  cfg.tasks = parse_task_list(f.tasks);
  cfg.input_dim = f.input_dim;
  cfg.validate();
  return cfg;
}

std::array<double, kNumTasks> parse_task_weights(const std::string& text) {
  std::array<double, kNumTasks> weights;
  weights.fill(1.0);
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw Error(ErrorKind::kArgument, "task weight '" + item + "' is not task=value");
    const auto task = parse_task(item.substr(0, eq));
    if (!task) throw Error(ErrorKind::kArgument, "unknown task in weight '" + item + "'");
    try {
      weights[static_cast<std::size_t>(*task)] = std::stod(item.substr(eq + 1));
    } catch (const std::exception&) {
      throw Error(ErrorKind::kArgument, "bad task weight '" + item + "'");
    }
  }
  return weights;
}

// Flat `key = value` file; keys name long flags of the active subcommand.
// Values only fill options that were not given on the command line.
void apply_config_file(CLI::App* app, const std::string& path) {
  if (path.empty()) return;
  if (!fs::exists(path)) throw Error(ErrorKind::kIo, "config file not found: " + path);
  for (const CLI::ConfigItem& item : CLI::ConfigINI().from_file(path)) {
    if (item.name == "config" || item.name == "help") {
      throw Error(ErrorKind::kArgument, "config key '" + item.name + "' is not allowed");
    }
    CLI::Option* opt = app->get_option_no_throw("--" + item.name);
    if (opt == nullptr || !item.parents.empty()) {
      throw Error(ErrorKind::kArgument, "unknown config key '" + item.fullname() + "'");
    }
    if (opt->count() > 0) continue;
    std::vector<std::string> inputs = item.inputs;
    if (opt->get_items_expected_max() <= 1 && inputs.size() > 1) inputs = {CLI::detail::join(inputs, " ")};
    opt->clear();
    opt->add_result(inputs);
    opt->run_callback();
  }
}

// ---- features -------------------------------------------------------------

struct FeaturesArgs {
  std::string input;
  std::string out_dir;
  MelFlags mel;
};

int cmd_features(const FeaturesArgs& a, std::ostream& out, std::ostream& err) {
  a.mel.mel.validate();
  const fs::path input(a.input);
  const std::vector<InputRow> rows = collect_inputs(input);
  if (rows.empty()) {
    err << "error: no rows in " << a.input << '\n';
    return kExitUserError;
  }
  const fs::path out_dir(a.out_dir);
  fs::create_directories(out_dir);
  LogMelExtractor extractor(a.mel.mel);

  std::set<std::string> used;
  std::vector<ManifestRow> written;
  std::size_t failures = 0;
  out << "source,embedding\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const InputRow& row = rows[i];
    std::string name = row.file.stem().string();
    if (!used.insert(name).second) {
      name += "_" + std::to_string(i);
      used.insert(name);
    }
    const fs::path target = out_dir / (name + ".sqe");
    try {
      EmbeddingSequence seq = load_features(row.file, extractor, a.mel.normalize);
      write_embedding_file(seq, target);
      out << row.display << ',' << target.string() << '\n';
      written.push_back({target.filename().string(), row.labels, !row.labels.any()});
    } catch (const Error& e) {
      ++failures;
      err << "warning: " << row.display << ": " << e.what() << '\n';
    }
  }
  if (failures == rows.size()) {
    err << "error: all " << rows.size() << " rows failed\n";
    return kExitUserError;
  }
  if (is_manifest(input)) save_manifest(written, out_dir / "manifest.csv");
  if (failures > 0) err << "warning: " << failures << " of " << rows.size() << " rows failed\n";
  return kExitOk;
}

// ---- train ----------------------------------------------------------------

struct TrainArgs {
  std::string train_manifest;
  std::string val_manifest;
  std::string out;
  std::string history;
  std::string task_weights;
  ModelFlags model;
  TrainConfig train;
  std::uint64_t init_seed = 0;
  MelFlags mel;
};

int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  a.mel.mel.validate();
  LogMelExtractor extractor(a.mel.mel);
  const std::vector<Example> train_rows = load_examples(a.train_manifest, extractor, a.mel.normalize);
  std::vector<Example> val_rows;
  if (!a.val_manifest.empty()) val_rows = load_examples(a.val_manifest, extractor, a.mel.normalize);

  ModelFlags mf = a.model;
  if (mf.input_dim == 0) mf.input_dim = train_rows.front().features.dim();
  const ModelConfig model_cfg = finish_model_config(mf);
  TrainConfig cfg = a.train;
  cfg.task_weights = parse_task_weights(a.task_weights);
  cfg.validate();

  TrainResult result = train(init_model(model_cfg, a.init_seed), train_rows, val_rows, cfg);
  save_checkpoint(result.model, a.out);
  const fs::path history = a.history.empty() ? fs::path(a.out + ".history.csv") : fs::path(a.history);
  {
    std::ofstream h(history, std::ios::binary);
    if (!h) throw Error(ErrorKind::kIo, "cannot write " + history.string());
    write_history_csv(result.history, h);
  }
  err << "trained " << result.history.size() << " epochs, " << result.steps << " steps; checkpoint "
      << a.out << ", history " << history.string() << '\n';
  out << "metric,value\n";
  out << "final_val_loss," << num(result.best_val_loss) << '\n';
  out << "epochs," << result.history.size() << '\n';
  out << "steps," << result.steps << '\n';
  return kExitOk;
}

// ---- predict --------------------------------------------------------------

struct PredictArgs {
  std::string checkpoint;
  std::string input;
  MelFlags mel;
};

int cmd_predict(const PredictArgs& a, std::ostream& out, std::ostream&) {
  const DownstreamModel model = load_checkpoint(a.checkpoint);
  a.mel.mel.validate();
  LogMelExtractor extractor(a.mel.mel);
  const std::vector<Example> rows = load_examples(a.input, extractor, a.mel.normalize);
  const ModelConfig& cfg = model.config();
  // Validate every row before emitting anything so a failure never leaves partial output.
  std::vector<PredictionSet> preds;
  for (const Example& row : rows) {
    if (row.features.dim() != cfg.input_dim) {
      throw Error(ErrorKind::kShape, "row '" + row.id + "' has D=" + std::to_string(row.features.dim()) +
                                         ", model expects D=" + std::to_string(cfg.input_dim));
    }
    preds.push_back(to_natural_units(predict(model, row.features), cfg));
  }
  out << "path,task,prediction\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t k = 0; k < cfg.tasks.size(); ++k) {
      out << rows[i].id << ',' << task_name(cfg.tasks[k]) << ',' << num(preds[i].values[k]) << '\n';
    }
  }
  return kExitOk;
}

// ---- eval -----------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint;
  std::string manifest;
  MelFlags mel;
};

int cmd_eval(const EvalArgs& a, std::ostream& out, std::ostream& err) {
  const DownstreamModel model = load_checkpoint(a.checkpoint);
  a.mel.mel.validate();
  LogMelExtractor extractor(a.mel.mel);
  const EvalPairs pairs = evaluate(model, load_examples(a.manifest, extractor, a.mel.normalize));

  std::vector<Task> tasks;
  std::vector<std::vector<double>> preds, labels;
  bool enough = false;
  for (std::size_t k = 0; k < pairs.tasks.size(); ++k) {
    if (pairs.labels[k].empty()) continue;
    tasks.push_back(pairs.tasks[k]);
    preds.push_back(pairs.predictions[k]);
    labels.push_back(pairs.labels[k]);
    enough = enough || pairs.labels[k].size() >= 4;
  }
  if (!enough) {
    err << "error: insufficient pairs (need at least 4 labeled rows for one task)\n";
    return kExitUserError;
  }
  const MetricsReport report = build_report(tasks, preds, labels);
  write_report_csv(report, out);
  write_report_table(report, err);
  return kExitOk;
}

// ---- profile --------------------------------------------------------------

struct ProfileArgs {
  std::string checkpoint;
  std::string flops_scope = "features_plus_downstream";
  std::string format = "csv";
  ModelFlags model;
  ProfileOptions options;
  MelFlags mel;
};

int cmd_profile(const ProfileArgs& a, std::ostream& out, std::ostream& err) {
  ProfileOptions opts = a.options;
  opts.flops_scope = parse_flops_scope(a.flops_scope);
  opts.mel = a.mel.mel;
  opts.mel.validate();
  const EfficiencyReport report = a.checkpoint.empty() ? profile(finish_model_config(a.model), opts)
                                                       : profile(load_checkpoint(a.checkpoint), opts);
  if (a.format == "table") {
    write_efficiency_table(report, out);
  } else {
    write_efficiency_csv(report, out);
    if (report.latency_downstream.unreliable || report.latency_full.unreliable) {
      err << "warning: timer resolution is coarse relative to the measured latency\n";
    }
  }
  return kExitOk;
}

int exit_code_for(const Error& e) {
  return e.kind() == ErrorKind::kContract ? kExitInternalError : kExitUserError;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Speech quality and room acoustics estimation from audio embeddings", "sqe"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  std::map<CLI::App*, std::string> config_paths;
  const auto add_config = [&](CLI::App* sub) {
    sub->add_option("--config", config_paths[sub],
                    "Flat key = value file; flags override its values (default: none)");
  };

  FeaturesArgs fa;
  CLI::App* features = app.add_subcommand("features", "Compute log-mel embeddings (SQE1 files)");
  features->add_option("input", fa.input, "Audio file (.wav) or manifest (.csv)")->required();
  features->add_option("-o,--out", fa.out_dir, "Output directory")->required();
  add_mel_options(features, fa.mel);
  add_config(features);

  TrainArgs ta;
  CLI::App* train_cmd = app.add_subcommand("train", "Train a downstream model");
  train_cmd->add_option("--train", ta.train_manifest, "Training manifest (.csv)")->required();
  train_cmd->add_option("--val", ta.val_manifest, "Validation manifest (empty: validate on training rows)");
  train_cmd->add_option("-o,--out", ta.out, "Checkpoint path")->required();
  train_cmd->add_option("--history", ta.history, "History CSV path (empty: <out>.history.csv)");
  add_model_options(train_cmd, ta.model, true);
  train_cmd->add_option("--lr", ta.train.adam.lr, "Adam learning rate")->check(CLI::NonNegativeNumber);
  train_cmd->add_option("--beta1", ta.train.adam.beta1, "Adam beta1")->check(CLI::Range(0.0, 0.999999));
  train_cmd->add_option("--beta2", ta.train.adam.beta2, "Adam beta2")->check(CLI::Range(0.0, 0.999999));
  train_cmd->add_option("--adam-eps", ta.train.adam.eps, "Adam epsilon")->check(CLI::PositiveNumber);
  train_cmd->add_option("--batch-size", ta.train.batch_size, "Minibatch size")->check(CLI::PositiveNumber);
  train_cmd->add_option("--epochs", ta.train.max_epochs, "Maximum epochs");
  train_cmd->add_option("--max-steps", ta.train.max_steps, "Optimizer step budget (0: unlimited)");
  train_cmd->add_option("--patience", ta.train.patience, "Early-stopping patience in epochs")
      ->check(CLI::PositiveNumber);
  train_cmd->add_option("--task-weights", ta.task_weights, "Per-task loss weights, e.g. mos=1,snr=0.5");
  train_cmd->add_option("--seed", ta.train.seed, "Shuffling and dropout seed");
  train_cmd->add_option("--init-seed", ta.init_seed, "Parameter initialization seed");
  add_mel_options(train_cmd, ta.mel);
  add_config(train_cmd);

  PredictArgs pa;
  CLI::App* predict_cmd = app.add_subcommand("predict", "Predict with a checkpoint; CSV path,task,prediction");
  predict_cmd->add_option("input", pa.input, "Embedding (.sqe), audio (.wav) or manifest (.csv)")->required();
  predict_cmd->add_option("-c,--checkpoint", pa.checkpoint, "Checkpoint path")->required();
  add_mel_options(predict_cmd, pa.mel);
  add_config(predict_cmd);

  EvalArgs ea;
  CLI::App* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a labeled manifest");
  eval_cmd->add_option("manifest", ea.manifest, "Labeled manifest (.csv)")->required();
  eval_cmd->add_option("-c,--checkpoint", ea.checkpoint, "Checkpoint path")->required();
  add_mel_options(eval_cmd, ea.mel);
  add_config(eval_cmd);

  ProfileArgs pr;
  CLI::App* profile_cmd = app.add_subcommand("profile", "Report parameters, memory, latency and FLOPs");
  profile_cmd->add_option("-c,--checkpoint", pr.checkpoint, "Checkpoint (empty: build from model flags)");
  add_model_options(profile_cmd, pr.model, false);
  profile_cmd->add_option("--runs", pr.options.runs, "Timed inferences")->check(CLI::PositiveNumber);
  profile_cmd->add_option("--warmup", pr.options.warmup, "Untimed warm-up inferences");
  profile_cmd->add_option("--seed", pr.options.seed, "Clip and initialization seed");
  profile_cmd->add_option("--min-duration", pr.options.min_duration_s, "Shortest clip in seconds");
  profile_cmd->add_option("--max-duration", pr.options.max_duration_s, "Longest clip in seconds");
  profile_cmd->add_option("--clip-rate", pr.options.sample_rate, "Sample rate of the synthetic clips")
      ->check(CLI::PositiveNumber);
  profile_cmd->add_option("--frame-step-ms", pr.options.frame_step_ms, "Embedding frame step in ms")
      ->check(CLI::PositiveNumber);
  profile_cmd->add_option("--duration", pr.options.nominal_duration_s, "Clip length for FLOPs and memory")
      ->check(CLI::PositiveNumber);
  profile_cmd->add_option("--flops-scope", pr.flops_scope, "downstream_only or features_plus_downstream")
      ->check(CLI::IsMember({"downstream_only", "features_plus_downstream"}));
  profile_cmd->add_option("--format", pr.format, "csv or table")->check(CLI::IsMember({"csv", "table"}));
  add_mel_options(profile_cmd, pr.mel);
  add_config(profile_cmd);

  try {
    app.parse(argc, argv);
    for (CLI::App* sub : app.get_subcommands()) apply_config_file(sub, config_paths[sub]);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitUserError;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e);
  }

  try {
    if (features->parsed()) return cmd_features(fa, out, err);
    if (train_cmd->parsed()) return cmd_train(ta, out, err);
    if (predict_cmd->parsed()) return cmd_predict(pa, out, err);
    if (eval_cmd->parsed()) return cmd_eval(ea, out, err);
    if (profile_cmd->parsed()) return cmd_profile(pr, out, err);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e);
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kExitUserError;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << '\n';
    return kExitInternalError;
  }
  err << "internal error: no subcommand dispatched\n";
  return kExitInternalError;
}

}  // namespace sqe::cli
