#include "mgan/config.hpp"

#include <charconv>
#include <sstream>

#include "mgan/io.hpp"

namespace mgan {

namespace {

template <typename T>
T number(std::string_view key, std::string_view text) {
  T value{};
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc{} || ptr != end) {
    throw ConfigError(std::string(key), "invalid value '" + std::string(text) + "' for " + std::string(key));
  }
  return value;
}

bool boolean(std::string_view key, std::string_view text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError(std::string(key), "invalid boolean '" + std::string(text) + "' for " + std::string(key));
}

std::filesystem::path resolve(std::string_view text, const std::filesystem::path& base) {
  std::filesystem::path p{std::string(text)};
  if (p.empty() || p.is_absolute() || base.empty()) return p;
  return base / p;
}

std::filesystem::path or_default(const std::filesystem::path& p, const std::filesystem::path& dir, const char* name) {
  return p.empty() ? dir / name : p;
}

}  // namespace

std::filesystem::path RunConfig::source_corpus_path() const {
  return or_default(source_corpus, output_dir, "source.jsonl");
}
std::filesystem::path RunConfig::source_test_corpus_path() const {
  return or_default(source_test_corpus, output_dir, "source_test.jsonl");
}
std::filesystem::path RunConfig::source_test_manifest_path() const {
  return or_default(source_test_manifest, output_dir, "source_test.manifest");
}
std::filesystem::path RunConfig::target_corpus_path() const {
  return or_default(target_corpus, output_dir, "target.jsonl");
}
std::filesystem::path RunConfig::target_test_corpus_path() const {
  return or_default(target_test_corpus, output_dir, "target_test.jsonl");
}

TrainConfig RunConfig::pretrain_config() const {
  TrainConfig t;
  t.seed = seed;
  t.max_epochs = pretrain_max_epochs;
  t.patience = patience;
  t.validation_fraction = validation_fraction;
  t.dropout = hp.dropout > 0.0;
  return t;
}

TrainConfig RunConfig::train_config() const {
  TrainConfig t = pretrain_config();
  t.max_epochs = max_epochs;
  t.cfa_gradient_isolation = cfa_gradient_isolation;
  return t;
}

void set_config_value(RunConfig& cfg, std::string_view key, std::string_view value,
                      const std::filesystem::path& base_dir) {
  if (set_hyperparam(cfg.hp, key, value)) return;
  if (key == "output_dir") cfg.output_dir = resolve(value, base_dir);
  else if (key == "source_corpus") cfg.source_corpus = resolve(value, base_dir);
  else if (key == "source_test_corpus") cfg.source_test_corpus = resolve(value, base_dir);
  else if (key == "source_test_manifest") cfg.source_test_manifest = resolve(value, base_dir);
  else if (key == "target_corpus") cfg.target_corpus = resolve(value, base_dir);
  else if (key == "target_test_corpus") cfg.target_test_corpus = resolve(value, base_dir);
  else if (key == "embeddings") cfg.embeddings = resolve(value, base_dir);
  else if (key == "seed") cfg.seed = number<std::uint64_t>(key, value);
  else if (key == "validation_fraction") cfg.validation_fraction = number<double>(key, value);
  else if (key == "patience") cfg.patience = number<std::size_t>(key, value);
  else if (key == "pretrain_max_epochs") cfg.pretrain_max_epochs = number<std::size_t>(key, value);
  else if (key == "max_epochs") cfg.max_epochs = number<std::size_t>(key, value);
  else if (key == "cfa_gradient_isolation") cfg.cfa_gradient_isolation = boolean(key, value);
  else if (key == "vocab_min_count") cfg.vocab_min_count = number<std::size_t>(key, value);
  else if (key == "synth_source_size") cfg.synth_source_size = number<std::size_t>(key, value);
  else if (key == "synth_source_test_size") cfg.synth_source_test_size = number<std::size_t>(key, value);
  else if (key == "synth_target_size") cfg.synth_target_size = number<std::size_t>(key, value);
  else if (key == "synth_target_test_size") cfg.synth_target_test_size = number<std::size_t>(key, value);
  else if (key == "synth_embedding_scale") cfg.synth_embedding_scale = number<double>(key, value);
  else if (key == "synth_embedding_cluster_noise") cfg.synth_embedding_cluster_noise = number<double>(key, value);
  else throw ConfigError(std::string(key), "unknown configuration key " + std::string(key));
}

RunConfig parse_config(std::string_view text, const std::filesystem::path& base_dir) {
  RunConfig cfg;
  if (!base_dir.empty()) cfg.output_dir = base_dir;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view body = line;
    if (const auto hash = body.find('#'); hash != std::string_view::npos) body = body.substr(0, hash);
    body = trim(body);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError(std::string(body), "line " + std::to_string(line_no) + ": expected key = value");
    }
    set_config_value(cfg, trim(body.substr(0, eq)), trim(body.substr(eq + 1)), base_dir);
  }
  validate(cfg);
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  std::filesystem::path base = path.parent_path();
  if (base.empty()) base = ".";
  return parse_config(text, base);
}

void apply_override(RunConfig& cfg, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) {
    throw ConfigError(std::string(assignment), "override '" + std::string(assignment) + "' is not key=value");
  }
  set_config_value(cfg, trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

void validate(const RunConfig& cfg) {
  validate(cfg.hp);
  if (!(cfg.validation_fraction >= 0.0 && cfg.validation_fraction < 1.0)) {
    throw ConfigError("validation_fraction", "validation_fraction must lie in [0, 1)");
  }
  if (cfg.pretrain_max_epochs == 0) throw ConfigError("pretrain_max_epochs", "pretrain_max_epochs must be positive");
  if (cfg.max_epochs == 0) throw ConfigError("max_epochs", "max_epochs must be positive");
  if (!(cfg.synth_embedding_scale >= 0.0)) {
    throw ConfigError("synth_embedding_scale", "synth_embedding_scale must be nonnegative");
  }
  if (!(cfg.synth_embedding_cluster_noise >= 0.0)) {
    throw ConfigError("synth_embedding_cluster_noise", "synth_embedding_cluster_noise must be nonnegative");
  }
}

std::string serialize(const RunConfig& cfg) {
  std::ostringstream out;
  out << "# resolved configuration\n";
  out << "output_dir=" << cfg.output_dir.string() << "\n"
      << "source_corpus=" << cfg.source_corpus_path().string() << "\n"
      << "source_test_corpus=" << cfg.source_test_corpus_path().string() << "\n"
      << "source_test_manifest=" << cfg.source_test_manifest_path().string() << "\n"
      << "target_corpus=" << cfg.target_corpus_path().string() << "\n"
      << "target_test_corpus=" << cfg.target_test_corpus_path().string() << "\n";
  if (!cfg.embeddings.empty()) out << "embeddings=" << cfg.embeddings.string() << "\n";
  out << serialize(cfg.hp);
  out << "seed=" << cfg.seed << "\n"
      << "validation_fraction=" << format_double(cfg.validation_fraction) << "\n"
      << "patience=" << cfg.patience << "\n"
      << "pretrain_max_epochs=" << cfg.pretrain_max_epochs << "\n"
      << "max_epochs=" << cfg.max_epochs << "\n"
      << "cfa_gradient_isolation=" << (cfg.cfa_gradient_isolation ? "true" : "false") << "\n"
      << "vocab_min_count=" << cfg.vocab_min_count << "\n"
      << "synth_source_size=" << cfg.synth_source_size << "\n"
      << "synth_source_test_size=" << cfg.synth_source_test_size << "\n"
      << "synth_target_size=" << cfg.synth_target_size << "\n"
      << "synth_target_test_size=" << cfg.synth_target_test_size << "\n"
      << "synth_embedding_scale=" << format_double(cfg.synth_embedding_scale) << "\n"
      << "synth_embedding_cluster_noise=" << format_double(cfg.synth_embedding_cluster_noise) << "\n";
  return out.str();
}

}  // namespace mgan
