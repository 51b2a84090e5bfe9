#include "mgan/cli.hpp"

#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "mgan/checkpoint.hpp"
#include "mgan/config.hpp"
#include "mgan/corpus.hpp"
#include "mgan/eval.hpp"
#include "mgan/gradcheck_suite.hpp"
#include "mgan/io.hpp"
#include "mgan/training.hpp"

namespace mgan {

namespace fs = std::filesystem;

namespace {

struct MissingFile : std::runtime_error {
  explicit MissingFile(const fs::path& p) : std::runtime_error(p.string()) {}
};

void require_file(const fs::path& path) {
  if (!fs::is_regular_file(path)) throw MissingFile(path);
}

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides;
};

RunConfig resolve_config(const Common& c) {
  RunConfig cfg;
  if (!c.config.empty()) {
    require_file(c.config);
    cfg = load_config(c.config);
  }
  for (const auto& o : c.overrides) apply_override(cfg, o);
  if (c.seed) cfg.seed = *c.seed;
  validate(cfg);
  return cfg;
}

void persist_config(const RunConfig& cfg, std::string_view command) {
  write_file_atomic(cfg.output_dir / (std::string(command) + ".config"), serialize(cfg));
}

std::optional<Tensor> maybe_embeddings(const RunConfig& cfg, const Vocab& vocab) {
  if (cfg.embeddings.empty()) return std::nullopt;
  require_file(cfg.embeddings);
  Rng rng(fnv1a64("embeddings", cfg.seed));
  return load_embeddings(cfg.embeddings, vocab, cfg.hp.d_w, rng).table;
}

std::string kv(std::string_view key, double value) { return std::string(key) + "=" + format_double(value); }

int cmd_gen_synth(const Common& c, std::ostream& out) {
  RunConfig cfg = resolve_config(c);
  SynthConfig synth = default_synth_config();
  synth.source_size = cfg.synth_source_size;
  synth.source_test_size = cfg.synth_source_test_size;
  synth.target_size = cfg.synth_target_size;
  synth.target_test_size = cfg.synth_target_test_size;
  const SynthCorpora corpora = gen_synthetic(synth, cfg.seed);
  write_corpus(corpora.source, cfg.source_corpus_path());
  write_file_atomic(cfg.output_dir / "source.manifest", serialize_manifest(corpora.source_manifest));
  write_corpus(corpora.source_test, cfg.source_test_corpus_path());
  write_file_atomic(cfg.source_test_manifest_path(), serialize_manifest(corpora.source_test_manifest));
  write_corpus(corpora.target, cfg.target_corpus_path());
  write_corpus(corpora.target_test, cfg.target_test_corpus_path());
  if (cfg.synth_embedding_scale > 0.0) {
    VocabBuilder builder;
    builder.add(corpora.source);
    builder.add(corpora.source_test);
    builder.add(corpora.target);
    builder.add(corpora.target_test);
    Rng rng(fnv1a64("synth-embeddings", cfg.seed));
    const Vocab vocab = builder.build(1);
    write_file_atomic(cfg.output_dir / "embeddings.txt",
                      embedding_text(vocab, stand_in_embeddings(synth, vocab, cfg.hp.d_w, rng, cfg.synth_embedding_scale,
                                                                cfg.synth_embedding_cluster_noise)));
  }
  persist_config(cfg, "gen-synth");
  out << "source_records=" << corpora.source.examples.size()
      << " source_test_records=" << corpora.source_test.examples.size()
      << " target_records=" << corpora.target.examples.size()
      << " target_test_records=" << corpora.target_test.examples.size() << "\n";
  return exit_code::ok;
}

struct Corpora {
  SourceCorpus source;
  TargetCorpus target;
};

Corpora load_training_corpora(const RunConfig& cfg) {
  require_file(cfg.source_corpus_path());
  require_file(cfg.target_corpus_path());
  return {load_source_corpus(cfg.source_corpus_path()), load_target_corpus(cfg.target_corpus_path())};
}

LogSink log_to(std::ostream& out) {
  return [&out](const LogRecord& r) { out << format(r) << "\n"; };
}

int cmd_pretrain(const Common& c, bool verbose, std::ostream& out) {
  RunConfig cfg = resolve_config(c);
  Corpora corpora = load_training_corpora(cfg);
  const Vocab vocab = build_vocab(corpora.source, corpora.target, cfg.vocab_min_count);
  const auto embeddings = maybe_embeddings(cfg, vocab);
  TrainResult result = pretrain_source(corpora.source, vocab, cfg.hp, cfg.pretrain_config(),
                                       embeddings ? &*embeddings : nullptr, verbose ? log_to(out) : LogSink{});
  save_checkpoint({result.network, vocab, corpora.source.categories, std::nullopt}, cfg.output_dir / "pretrain.ckpt");
  write_file_atomic(cfg.output_dir / "pretrain.log", format_log(result.log));
  persist_config(cfg, "pretrain");
  out << "phase=pretrain epochs=" << result.epochs_run << " early_stopped=" << (result.early_stopped ? 1 : 0);
  if (result.best_validation_accuracy) out << " " << kv("best_val_accuracy", *result.best_validation_accuracy);
  out << "\n";
  if (fs::is_regular_file(cfg.source_test_corpus_path())) {
    const SourceCorpus test = load_source_corpus(cfg.source_test_corpus_path());
    if (!test.examples.empty()) {
      out << format_metrics(metrics(evaluate(result.network, std::span<const SourceExample>(test.examples), vocab)),
                            "source_test_")
          << "\n";
    }
  }
  return exit_code::ok;
}

void print_target_test(const RunConfig& cfg, Network& net, const Vocab& vocab, std::string_view prefix,
                       std::ostream& out) {
  if (!fs::is_regular_file(cfg.target_test_corpus_path())) return;
  const TargetCorpus test = load_target_corpus(cfg.target_test_corpus_path());
  if (test.examples.empty()) return;
  out << format_metrics(metrics(evaluate(net, std::span<const TargetExample>(test.examples), vocab)), prefix) << "\n";
}

int cmd_train(const Common& c, const std::string& from, bool verbose, std::ostream& out) {
  RunConfig cfg = resolve_config(c);
  if (from.empty()) throw ConfigError("from", "train needs --from with a pretrained source checkpoint");
  require_file(from);
  Checkpoint pretrained = load_checkpoint(from);
  if (pretrained.network.kind() != NetworkKind::source) {
    throw ConfigError("from", "checkpoint " + from + " does not hold a source network");
  }
  Corpora corpora = load_training_corpora(cfg);
  PairResult result = alternating_train(pretrained.network, corpora.target, corpora.source, pretrained.vocab,
                                        cfg.train_config(), verbose ? log_to(out) : LogSink{});
  save_checkpoint({result.pair.target, pretrained.vocab, {}, std::nullopt}, cfg.output_dir / "mgan_target.ckpt");
  save_checkpoint({result.pair.source, pretrained.vocab, pretrained.categories, std::nullopt},
                  cfg.output_dir / "mgan_source.ckpt");
  write_file_atomic(cfg.output_dir / "train.log", format_log(result.log));
  persist_config(cfg, "train");
  out << "phase=train epochs=" << result.epochs_run << " early_stopped=" << (result.early_stopped ? 1 : 0);
  if (result.best_validation_accuracy) out << " " << kv("best_val_accuracy", *result.best_validation_accuracy);
  out << "\n";
  print_target_test(cfg, result.pair.target, pretrained.vocab, "target_test_", out);
  return exit_code::ok;
}

int cmd_baseline(const Common& c, bool verbose, std::ostream& out) {
  RunConfig cfg = resolve_config(c);
  Corpora corpora = load_training_corpora(cfg);
  const Vocab vocab = build_vocab(corpora.source, corpora.target, cfg.vocab_min_count);
  const auto embeddings = maybe_embeddings(cfg, vocab);
  TrainResult result = train_target_only(corpora.target, vocab, cfg.hp, cfg.train_config(),
                                         embeddings ? &*embeddings : nullptr, verbose ? log_to(out) : LogSink{});
  save_checkpoint({result.network, vocab, {}, std::nullopt}, cfg.output_dir / "baseline.ckpt");
  write_file_atomic(cfg.output_dir / "baseline.log", format_log(result.log));
  persist_config(cfg, "baseline");
  out << "phase=baseline epochs=" << result.epochs_run << " early_stopped=" << (result.early_stopped ? 1 : 0);
  if (result.best_validation_accuracy) out << " " << kv("best_val_accuracy", *result.best_validation_accuracy);
  out << "\n";
  print_target_test(cfg, result.network, vocab, "target_test_", out);
  return exit_code::ok;
}

int cmd_eval(const std::string& checkpoint, const std::string& corpus, const std::string& manifest,
             std::ostream& out) {
  require_file(checkpoint);
  require_file(corpus);
  Checkpoint ckpt = load_checkpoint(checkpoint);
  const CorpusKind kind = peek_corpus_kind(corpus);
  const bool source_net = ckpt.network.kind() == NetworkKind::source;
  if (source_net != (kind == CorpusKind::source)) {
    throw ConfigError("corpus", "corpus kind does not match the " + std::string(to_string(ckpt.network.kind())) +
                                    " network in the checkpoint");
  }
  if (kind == CorpusKind::source) {
    const SourceCorpus c = load_source_corpus(corpus);
    const std::span<const SourceExample> ex(c.examples);
    out << format_metrics(metrics(evaluate(ckpt.network, ex, ckpt.vocab))) << "\n";
    if (!manifest.empty()) {
      require_file(manifest);
      const auto spans = load_manifest(manifest);
      out << kv("c2f_localization", c2f_localization(ckpt.network, ex, spans, ckpt.vocab)) << " "
          << kv("chance_localization", chance_localization(ex, spans)) << "\n";
    }
  } else {
    const TargetCorpus c = load_target_corpus(corpus);
    out << format_metrics(metrics(evaluate(ckpt.network, std::span<const TargetExample>(c.examples), ckpt.vocab)))
        << "\n";
  }
  return exit_code::ok;
}

int cmd_gradcheck(bool full, std::optional<std::uint64_t> seed, std::ostream& out, std::ostream& err) {
  GradCheckSuiteOptions options;
  options.full = full;
  if (seed) options.seed = *seed;
  const auto cases = run_gradcheck_suite(options);
  double worst = 0.0;
  const GradCheckCase* worst_case = nullptr;
  for (const auto& c : cases) {
    const GradCheckReport& r = c.report;
    out << "case=\"" << c.name << "\" " << kv("max_rel_error", r.max_resolved_rel_error) << " worst_param="
        << (r.worst_param.empty() ? "-" : r.worst_param) << "[" << r.worst_index << "] "
        << kv("raw_max_rel_error", r.max_rel_error) << " " << kv("noise_floor", r.noise_floor)
        << " roundoff_limited=" << r.roundoff_limited << " entries=" << r.entries_checked
        << " passed=" << (r.passed() ? 1 : 0) << "\n";
    if (!worst_case || r.max_resolved_rel_error > worst) {
      worst = r.max_resolved_rel_error;
      worst_case = &c;
    }
  }
  out << kv("max_rel_error", worst) << " " << kv("tolerance", options.tolerance) << "\n";
  if (worst_case && !worst_case->report.passed()) {
    const GradCheckReport& r = worst_case->report;
    err << "gradcheck failed: case \"" << worst_case->name << "\" parameter " << r.worst_param << "["
        << r.worst_index << "] relative error " << format_double(r.max_resolved_rel_error) << " analytic "
        << format_double(r.analytic_at_worst) << " numeric " << format_double(r.numeric_at_worst) << "\n";
    return exit_code::gradcheck_failed;
  }
  return exit_code::ok;
}

int cmd_attn_dump(const std::string& checkpoint, const std::string& corpus, const std::string& out_path,
                  std::ostream& out) {
  require_file(checkpoint);
  require_file(corpus);
  Checkpoint ckpt = load_checkpoint(checkpoint);
  const CorpusKind kind = peek_corpus_kind(corpus);
  if ((ckpt.network.kind() == NetworkKind::source) != (kind == CorpusKind::source)) {
    throw ConfigError("corpus", "corpus kind does not match the network in the checkpoint");
  }
  std::string text;
  std::size_t count = 0;
  if (kind == CorpusKind::source) {
    for (const auto& ex : load_source_corpus(corpus).examples) {
      text += trace_to_json(extract_trace(ckpt.network, ckpt.vocab, ex)) + "\n";
      ++count;
    }
  } else {
    for (const auto& ex : load_target_corpus(corpus).examples) {
      text += trace_to_json(extract_trace(ckpt.network, ckpt.vocab, ex)) + "\n";
      ++count;
    }
  }
  write_file_atomic(out_path, text);
  out << "traces=" << count << " out=" << out_path << "\n";
  return exit_code::ok;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-granularity alignment network: training, evaluation and diagnostics", "mgan"};
  app.require_subcommand(1);
  Common common;
  bool verbose = false;
  app.add_option("--seed", common.seed, "Seed overriding the configuration");
  app.add_option("--set", common.overrides, "Configuration override key=value (repeatable)");
  app.add_flag("-v,--verbose", verbose, "Print one log line per evaluation");
  app.fallthrough();

  auto* gen = app.add_subcommand("gen-synth", "Write the synthetic coarse-to-fine benchmark");
  gen->add_option("--config", common.config, "Configuration file");
  auto* pre = app.add_subcommand("pretrain", "Stage 1: train the source network");
  pre->add_option("--config", common.config, "Configuration file");
  std::string from;
  auto* train = app.add_subcommand("train", "Stage 2: alternating source/target training");
  train->add_option("--config", common.config, "Configuration file");
  train->add_option("--from", from, "Pretrained source checkpoint")->required();
  auto* base = app.add_subcommand("baseline", "Train the target-only network");
  base->add_option("--config", common.config, "Configuration file");
  std::string checkpoint, corpus, manifest, out_path;
  auto* ev = app.add_subcommand("eval", "Accuracy and macro-F1 of a checkpoint on a corpus");
  ev->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  ev->add_option("--corpus", corpus, "Corpus file")->required();
  ev->add_option("--manifest", manifest, "Planted-term manifest for Coarse2Fine localization");
  bool full = false;
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient suites");
  gc->add_flag("--full", full, "Also run extra fixtures");
  auto* dump = app.add_subcommand("attn-dump", "Write attention traces as JSON lines");
  dump->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  dump->add_option("--corpus", corpus, "Corpus file")->required();
  dump->add_option("--out", out_path, "Output file")->required();

  std::vector<std::string> argv_store{"mgan"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& a : argv_store) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? exit_code::ok : exit_code::config_error;
  }

  try {
    if (gen->parsed()) return cmd_gen_synth(common, out);
    if (pre->parsed()) return cmd_pretrain(common, verbose, out);
    if (train->parsed()) return cmd_train(common, from, verbose, out);
    if (base->parsed()) return cmd_baseline(common, verbose, out);
    if (ev->parsed()) return cmd_eval(checkpoint, corpus, manifest, out);
    if (gc->parsed()) return cmd_gradcheck(full, common.seed, out, err);
    if (dump->parsed()) return cmd_attn_dump(checkpoint, corpus, out_path, out);
  } catch (const MissingFile& e) {
    err << "missing file: " << e.what() << "\n";
    return exit_code::missing_file;
  } catch (const ConfigError& e) {
    err << "config error: key=" << e.key() << ": " << e.what() << "\n";
    return exit_code::config_error;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return exit_code::failure;
  }
  return exit_code::failure;
}

}  // namespace mgan
