#include "mgan/corpus.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "mgan/io.hpp"

namespace mgan {

using nlohmann::json;

std::string_view to_string(Sentiment s) {
  switch (s) {
    case Sentiment::positive:
      return "positive";
    case Sentiment::neutral:
      return "neutral";
    case Sentiment::negative:
      return "negative";
  }
  return "neutral";
}

Sentiment parse_sentiment(std::string_view text) {
  if (text == "positive") return Sentiment::positive;
  if (text == "neutral") return Sentiment::neutral;
  if (text == "negative") return Sentiment::negative;
  throw ParseError("unknown sentiment label '" + std::string(text) + "'");
}

Tokens TargetExample::aspect() const {
  const auto first = context.begin() + static_cast<std::ptrdiff_t>(span_start);
  return Tokens(first, first + static_cast<std::ptrdiff_t>(span_len));
}

void validate(const TargetExample& ex) {
  if (ex.context.empty()) throw ValidationError("target record has an empty context");
  if (ex.span_len == 0) throw ValidationError("target record has span_len 0");
  if (ex.span_start + ex.span_len > ex.context.size()) {
    throw ValidationError("aspect span [" + std::to_string(ex.span_start) + ", " +
                          std::to_string(ex.span_start + ex.span_len) + ") exceeds sentence length " +
                          std::to_string(ex.context.size()));
  }
}

// --- corpus files ---

namespace {

Tokens tokens_field(const json& record, const char* key) {
  const auto& v = record.at(key);
  if (!v.is_array()) throw ParseError(std::string("field '") + key + "' is not an array");
  Tokens out;
  for (const auto& t : v) out.push_back(t.get<std::string>());
  return out;
}

json header_line(std::istream& in, std::string_view name, std::string& line, std::size_t& line_no) {
  while (std::getline(in, line)) {
    ++line_no;
    if (!trim(line).empty()) break;
  }
  if (trim(line).empty()) throw ParseError(std::string(name) + ": missing header line");
  try {
    return json::parse(line);
  } catch (const json::exception& e) {
    throw ParseError(std::string(name) + ":" + std::to_string(line_no) + ": malformed header: " + e.what());
  }
}

template <typename F>
void for_each_record(std::istream& in, std::string_view name, std::size_t line_no, F&& f) {
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    json record;
    try {
      record = json::parse(line);
      if (!record.is_object()) throw ParseError("record is not an object");
      f(record, line_no);
    } catch (const ValidationError& e) {
      throw ValidationError(std::string(name) + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const ParseError& e) {
      throw ParseError(std::string(name) + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const json::exception& e) {
      throw ParseError(std::string(name) + ":" + std::to_string(line_no) + ": malformed record: " + e.what());
    }
  }
}

std::ifstream open_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open corpus " + path.string());
  return in;
}

}  // namespace

CorpusKind peek_corpus_kind(const std::filesystem::path& path) {
  auto in = open_corpus(path);
  std::string line;
  std::size_t line_no = 0;
  const json header = header_line(in, path.string(), line, line_no);
  const std::string kind = header.value("kind", "");
  if (kind == "source") return CorpusKind::source;
  if (kind == "target") return CorpusKind::target;
  throw ParseError(path.string() + ": header declares unknown kind '" + kind + "'");
}

SourceCorpus parse_source_corpus(std::istream& in, std::string_view name) {
  std::string line;
  std::size_t line_no = 0;
  const json header = header_line(in, name, line, line_no);
  if (header.value("kind", "") != "source") throw ParseError(std::string(name) + ": header kind is not 'source'");
  SourceCorpus corpus;
  std::map<std::string, std::size_t> category_ids;
  for (const auto& c : header.at("categories")) {
    category_ids.emplace(c.get<std::string>(), corpus.categories.size());
    corpus.categories.push_back(c.get<std::string>());
  }
  for_each_record(in, name, line_no, [&](const json& record, std::size_t) {
    SourceExample ex;
    ex.context = tokens_field(record, "context");
    ex.aspect = tokens_field(record, "aspect");
    if (ex.context.empty()) throw ValidationError("empty context");
    if (ex.aspect.empty()) throw ValidationError("empty aspect");
    const std::string category = record.at("category").get<std::string>();
    auto it = category_ids.find(category);
    if (it == category_ids.end()) throw ValidationError("category '" + category + "' is not declared in the header");
    ex.category = it->second;
    ex.sentiment = parse_sentiment(record.at("sentiment").get<std::string>());
    corpus.examples.push_back(std::move(ex));
  });
  return corpus;
}

TargetCorpus parse_target_corpus(std::istream& in, std::string_view name) {
  std::string line;
  std::size_t line_no = 0;
  const json header = header_line(in, name, line, line_no);
  if (header.value("kind", "") != "target") throw ParseError(std::string(name) + ": header kind is not 'target'");
  TargetCorpus corpus;
  for_each_record(in, name, line_no, [&](const json& record, std::size_t) {
    TargetExample ex;
    ex.context = tokens_field(record, "context");
    const auto start = record.at("span_start").get<long long>();
    const auto len = record.at("span_len").get<long long>();
    if (start < 0 || len < 0) throw ValidationError("negative span field");
    ex.span_start = static_cast<std::size_t>(start);
    ex.span_len = static_cast<std::size_t>(len);
    ex.sentiment = parse_sentiment(record.at("sentiment").get<std::string>());
    validate(ex);
    corpus.examples.push_back(std::move(ex));
  });
  return corpus;
}

SourceCorpus load_source_corpus(const std::filesystem::path& path) {
  auto in = open_corpus(path);
  return parse_source_corpus(in, path.string());
}

TargetCorpus load_target_corpus(const std::filesystem::path& path) {
  auto in = open_corpus(path);
  return parse_target_corpus(in, path.string());
}

std::string serialize(const SourceCorpus& corpus) {
  std::string out = json{{"kind", "source"}, {"categories", corpus.categories}}.dump() + "\n";
  for (const auto& ex : corpus.examples) {
    json record;
    record["context"] = ex.context;
    record["aspect"] = ex.aspect;
    record["category"] = corpus.categories.at(ex.category);
    record["sentiment"] = to_string(ex.sentiment);
    out += record.dump() + "\n";
  }
  return out;
}

std::string serialize(const TargetCorpus& corpus) {
  std::string out = json{{"kind", "target"}}.dump() + "\n";
  for (const auto& ex : corpus.examples) {
    json record;
    record["context"] = ex.context;
    record["span_start"] = ex.span_start;
    record["span_len"] = ex.span_len;
    record["sentiment"] = to_string(ex.sentiment);
    out += record.dump() + "\n";
  }
  return out;
}

void write_corpus(const SourceCorpus& corpus, const std::filesystem::path& path) {
  write_file_atomic(path, serialize(corpus));
}

void write_corpus(const TargetCorpus& corpus, const std::filesystem::path& path) {
  write_file_atomic(path, serialize(corpus));
}

// --- vocabulary ---

Vocab::Vocab() : tokens_{"<pad>", "<unk>"}, index_{{"<pad>", kPad}, {"<unk>", kUnk}} {}

Vocab Vocab::from_tokens(std::vector<std::string> tokens) {
  if (tokens.size() < 2 || tokens[0] != "<pad>" || tokens[1] != "<unk>") {
    throw ValidationError("vocabulary must start with <pad> and <unk>");
  }
  Vocab v;
  v.tokens_ = std::move(tokens);
  v.index_.clear();
  for (std::size_t i = 0; i < v.tokens_.size(); ++i) {
    if (!v.index_.emplace(v.tokens_[i], static_cast<int>(i)).second) {
      throw ValidationError("duplicate vocabulary token '" + v.tokens_[i] + "'");
    }
  }
  return v;
}

int Vocab::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocab::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw IndexError("vocabulary id " + std::to_string(id) + " out of range");
  }
  return tokens_[static_cast<std::size_t>(id)];
}

bool Vocab::contains(std::string_view token) const { return index_.count(std::string(token)) > 0; }

std::vector<int> Vocab::ids(std::span<const std::string> tokens) const {
  std::vector<int> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(id(t));
  return out;
}

std::uint64_t Vocab::hash() const {
  std::uint64_t h = fnv1a64("");
  for (const auto& t : tokens_) {
    h = fnv1a64(t, h);
    h = fnv1a64("\n", h);
  }
  return h;
}

void VocabBuilder::add(std::span<const std::string> tokens) {
  for (const auto& t : tokens) ++counts_[t];
}

void VocabBuilder::add(const SourceCorpus& corpus) {
  for (const auto& ex : corpus.examples) {
    add(ex.context);
    add(ex.aspect);
  }
}

void VocabBuilder::add(const TargetCorpus& corpus) {
  for (const auto& ex : corpus.examples) add(ex.context);
}

Vocab VocabBuilder::build(std::size_t min_count) const {
  std::vector<std::pair<std::string, std::size_t>> entries;
  for (const auto& [token, count] : counts_) {
    if (count >= min_count && token != "<pad>" && token != "<unk>") entries.emplace_back(token, count);
  }
  std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  std::vector<std::string> tokens{"<pad>", "<unk>"};
  for (auto& e : entries) tokens.push_back(std::move(e.first));
  return Vocab::from_tokens(std::move(tokens));
}

Vocab build_vocab(const SourceCorpus& source, const TargetCorpus& target, std::size_t min_count) {
  VocabBuilder builder;
  builder.add(source);
  builder.add(target);
  return builder.build(min_count);
}

// --- embeddings ---

Tensor random_embeddings(const Vocab& vocab, std::size_t dim, Rng& rng, double scale) {
  Tensor table = init_uniform({vocab.size(), dim}, rng, scale);
  for (std::size_t c = 0; c < dim; ++c) table.at(Vocab::kPad, c) = 0.0;
  return table;
}

EmbeddingTable parse_embeddings(std::istream& in, const Vocab& vocab, std::size_t dim, Rng& rng) {
  EmbeddingTable out{random_embeddings(vocab, dim, rng), 0};
  std::vector<bool> seen(vocab.size(), false);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto fields = split_whitespace(line);
    if (fields.empty()) continue;
    if (fields.size() != dim + 1) {
      if (line_no == 1 && fields.size() >= 2) {
        throw ConfigError("d_w", "embedding file has dimension " + std::to_string(fields.size() - 1) +
                                     " but the configuration expects " + std::to_string(dim));
      }
      throw ParseError("embeddings:" + std::to_string(line_no) + ": expected " + std::to_string(dim + 1) +
                       " fields, got " + std::to_string(fields.size()));
    }
    std::vector<double> values(dim);
    for (std::size_t c = 0; c < dim; ++c) {
      const auto& f = fields[c + 1];
      auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), values[c]);
      if (ec != std::errc() || ptr != f.data() + f.size() || !std::isfinite(values[c])) {
        throw ParseError("embeddings:" + std::to_string(line_no) + ": bad number '" + f + "'");
      }
    }
    if (!vocab.contains(fields[0])) continue;
    const int id = vocab.id(fields[0]);
    if (id == Vocab::kPad) continue;
    for (std::size_t c = 0; c < dim; ++c) out.table.at(static_cast<std::size_t>(id), c) = values[c];
    if (!seen[static_cast<std::size_t>(id)]) {
      seen[static_cast<std::size_t>(id)] = true;
      ++out.coverage;
    }
  }
  return out;
}

EmbeddingTable load_embeddings(const std::filesystem::path& path, const Vocab& vocab, std::size_t dim, Rng& rng) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open embeddings " + path.string());
  return parse_embeddings(in, vocab, dim, rng);
}

std::string random_embedding_text(const Vocab& vocab, std::size_t dim, Rng& rng, double scale) {
  std::string out;
  for (std::size_t id = 2; id < vocab.size(); ++id) {
    out += vocab.token(static_cast<int>(id));
    for (std::size_t c = 0; c < dim; ++c) {
      char buf[32];
      std::snprintf(buf, sizeof(buf), " %.6f", rng.uniform(-scale, scale));
      out += buf;
    }
    out += '\n';
  }
  return out;
}

Tensor stand_in_embeddings(const SynthConfig& config, const Vocab& vocab, std::size_t dim, Rng& rng, double scale,
                           double noise) {
  if (dim == 0) throw ConfigError("d_w", "embedding dimension must be positive");
  if (!(scale > 0.0) || !(noise >= 0.0)) throw DomainError("stand_in_embeddings: scale > 0 and noise >= 0 required");
  std::map<std::string, std::size_t, std::less<>> group;
  std::size_t groups = 0;
  if (noise > 0.0) {
    auto assign = [&](const std::vector<std::string>& phrases) {
      for (const auto& phrase : phrases) {
        for (const auto& w : split_whitespace(phrase)) group.emplace(w, groups);
      }
      ++groups;
    };
    for (std::size_t k = 0; k < config.categories.size(); ++k) {
      std::vector<std::string> words(config.category_aspects.at(k).begin(), config.category_aspects.at(k).end());
      words.insert(words.end(), config.source_terms.at(k).begin(), config.source_terms.at(k).end());
      assign(words);
    }
    assign(config.positive_cues);
    assign(config.negative_cues);
    assign(config.neutral_cues);
  }
  Tensor centroids({std::max<std::size_t>(groups, 1), dim});
  for (std::size_t g = 0; g < groups; ++g) {
    for (std::size_t c = 0; c < dim; ++c) centroids.at(g, c) = rng.uniform(-scale, scale);
  }
  Tensor table({vocab.size(), dim});
  for (std::size_t id = 2; id < vocab.size(); ++id) {
    const auto it = group.find(vocab.token(static_cast<int>(id)));
    for (std::size_t c = 0; c < dim; ++c) {
      table.at(id, c) = it == group.end() ? rng.uniform(-scale, scale)
                                          : centroids.at(it->second, c) + rng.uniform(-noise, noise);
    }
  }
  return table;
}

std::string embedding_text(const Vocab& vocab, const Tensor& table) {
  if (table.rank() != 2 || table.rows() != vocab.size()) {
    throw DimensionError("embedding_text: table " + shape_str(table.shape()) + " for a vocabulary of " +
                         std::to_string(vocab.size()));
  }
  std::string out;
  char buf[32];
  for (std::size_t id = 2; id < vocab.size(); ++id) {
    out += vocab.token(static_cast<int>(id));
    for (std::size_t c = 0; c < table.cols(); ++c) {
      std::snprintf(buf, sizeof(buf), " %.6f", table.at(id, c));
      out += buf;
    }
    out += '\n';
  }
  return out;
}

// --- batching ---

namespace {

void pad_row(std::vector<int>& ids, Mask& mask, std::size_t width) {
  mask.assign(ids.size(), true);
  ids.resize(width, Vocab::kPad);
  mask.resize(width, false);
}

template <typename Example, typename Fill>
Batch assemble(CorpusKind kind, std::span<const Example> examples, std::span<const std::size_t> order,
               const Vocab& vocab, Fill&& fill) {
  Batch b;
  b.kind = kind;
  for (std::size_t idx : order) {
    const Example& ex = examples[idx];
    b.context_ids.push_back(vocab.ids(ex.context));
    b.lengths.push_back(ex.context.size());
    b.sentiment.push_back(ex.sentiment);
    b.example_index.push_back(idx);
    b.n_max = std::max(b.n_max, ex.context.size());
    fill(b, ex);
    b.m_max = std::max(b.m_max, b.aspect_ids.back().size());
  }
  b.context_mask.resize(b.size());
  b.aspect_mask.resize(b.size());
  for (std::size_t k = 0; k < b.size(); ++k) {
    pad_row(b.context_ids[k], b.context_mask[k], b.n_max);
    pad_row(b.aspect_ids[k], b.aspect_mask[k], b.m_max);
  }
  return b;
}

template <typename Example>
std::vector<Batch> batches_of(std::span<const Example> examples, const Vocab& vocab, std::size_t batch_size,
                              Rng* rng, bool shuffle) {
  if (batch_size == 0) throw DomainError("batch size must be at least 1");
  std::vector<std::size_t> order(examples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  if (shuffle) {
    if (!rng) throw DomainError("shuffled batching needs a random generator");
    rng->shuffle(std::span<std::size_t>(order));
  }
  std::vector<Batch> out;
  for (std::size_t begin = 0; begin < order.size(); begin += batch_size) {
    const std::size_t len = std::min(batch_size, order.size() - begin);
    out.push_back(make_batch(examples, std::span<const std::size_t>(order).subspan(begin, len), vocab));
  }
  return out;
}

}  // namespace

Batch make_batch(std::span<const SourceExample> examples, std::span<const std::size_t> order, const Vocab& vocab) {
  return assemble(CorpusKind::source, examples, order, vocab, [&](Batch& b, const SourceExample& ex) {
    b.aspect_ids.push_back(vocab.ids(ex.aspect));
    b.category.push_back(ex.category);
  });
}

Batch make_batch(std::span<const TargetExample> examples, std::span<const std::size_t> order, const Vocab& vocab) {
  return assemble(CorpusKind::target, examples, order, vocab, [&](Batch& b, const TargetExample& ex) {
    validate(ex);
    b.aspect_ids.push_back(vocab.ids(ex.aspect()));
    b.span_start.push_back(ex.span_start);
    b.span_len.push_back(ex.span_len);
  });
}

std::vector<Batch> make_batches(std::span<const SourceExample> examples, const Vocab& vocab, std::size_t batch_size,
                                Rng* rng, bool shuffle) {
  return batches_of(examples, vocab, batch_size, rng, shuffle);
}

std::vector<Batch> make_batches(std::span<const TargetExample> examples, const Vocab& vocab, std::size_t batch_size,
                                Rng* rng, bool shuffle) {
  return batches_of(examples, vocab, batch_size, rng, shuffle);
}

// --- synthetic benchmark ---

SynthConfig default_synth_config() {
  SynthConfig c;
  c.categories = {"food", "service", "price", "ambience"};
  c.category_aspects = {{"food", "dishes", "taste"}, {"service", "staff"}, {"price", "value"}, {"ambience", "decor"}};
  c.source_terms = {
      {"salmon", "tuna", "pasta", "steak", "pizza", "burger", "sushi", "noodles", "curry", "dessert"},
      {"waiter", "waitress", "manager", "host", "bartender", "server", "hostess", "cashier", "busboy", "sommelier"},
      {"bill", "prices", "cost", "tab", "charge", "fee", "deal", "markup", "total", "invoice"},
      {"music", "lighting", "patio", "view", "seating", "atmosphere", "interior", "terrace", "furniture", "mood"}};
  c.target_terms = {"battery",  "screen",      "keyboard",     "touchpad", "battery life", "hard drive",
                    "speakers", "webcam",      "charger",      "fan",      "operating system", "display",
                    "trackpad", "graphics card", "memory",     "ports"};
  c.positive_cues = {"great",    "excellent", "amazing",     "fantastic", "superb",    "wonderful",
                     "perfect",  "lovely",    "outstanding", "terrific",  "brilliant", "impressive"};
  c.negative_cues = {"terrible", "awful",    "horrible", "bad",      "disappointing", "poor",
                     "dreadful", "lousy",    "pathetic", "atrocious", "subpar",       "appalling"};
  c.neutral_cues = {"okay", "average", "ordinary", "standard", "typical", "adequate"};
  c.fillers = {"honestly", "overall", "we", "went", "there", "last", "night", "really", "i", "think", "so", "today"};
  c.single_templates = {"the {T} is {C}",          "{T} was {C}",           "i found the {T} {C}",
                        "the {T} here is really {C}", "{C} {T}",            "we thought the {T} was {C}"};
  c.multi_templates = {"the {T1} is {C1} but the {T2} is {C2}", "{T1} was {C1} while the {T2} was {C2}",
                       "{C1} {T1} but {C2} {T2}", "the {T1} was {C1} , however the {T2} was {C2}"};
  return c;
}

namespace {

template <typename T>
const T& pick(const std::vector<T>& items, Rng& rng) {
  return items[rng.below(items.size())];
}

void require_nonempty(const std::vector<std::string>& items, const char* key) {
  if (items.empty()) throw ConfigError(key, std::string("synthetic config list '") + key + "' is empty");
}

void check_config(const SynthConfig& c) {
  if (c.categories.empty()) throw ConfigError("synth.categories", "no categories declared");
  if (c.category_aspects.size() != c.categories.size()) {
    throw ConfigError("synth.aspects", "need one aspect word list per category");
  }
  if (c.source_terms.size() != c.categories.size()) {
    throw ConfigError("synth.terms", "need one term lexicon per category");
  }
  std::map<std::string, std::size_t> owner;
  for (std::size_t k = 0; k < c.source_terms.size(); ++k) {
    if (c.source_terms[k].empty()) throw ConfigError("synth.terms." + c.categories[k], "empty term lexicon");
    if (c.category_aspects[k].empty()) throw ConfigError("synth.aspects." + c.categories[k], "empty aspect words");
    for (const auto& term : c.source_terms[k]) {
      auto [it, fresh] = owner.emplace(term, k);
      if (!fresh && it->second != k) {
        throw ConfigError("synth.terms." + c.categories[k], "term '" + term + "' appears in the lexicons of '" +
                                                                c.categories[it->second] + "' and '" +
                                                                c.categories[k] + "'");
      }
    }
  }
  require_nonempty(c.target_terms, "synth.target_terms");
  require_nonempty(c.positive_cues, "synth.positive_cues");
  require_nonempty(c.negative_cues, "synth.negative_cues");
  require_nonempty(c.neutral_cues, "synth.neutral_cues");
  require_nonempty(c.single_templates, "synth.single_templates");
  if (c.multi_aspect_fraction > 0.0) {
    require_nonempty(c.multi_templates, "synth.multi_templates");
    if (c.categories.size() < 2) throw ConfigError("synth.multi_aspect_fraction", "needs at least two categories");
  }
}

Sentiment draw_polarity(const SynthConfig& c, Rng& rng) {
  if (rng.bernoulli(c.neutral_fraction)) return Sentiment::neutral;
  return rng.bernoulli(0.5) ? Sentiment::positive : Sentiment::negative;
}

Sentiment draw_other_polarity(const SynthConfig& c, Sentiment first, Rng& rng) {
  if (!rng.bernoulli(c.contrast_probability)) return draw_polarity(c, rng);
  if (first == Sentiment::neutral) return rng.bernoulli(0.5) ? Sentiment::positive : Sentiment::negative;
  const Sentiment opposite = first == Sentiment::positive ? Sentiment::negative : Sentiment::positive;
  return rng.bernoulli(c.neutral_fraction) ? Sentiment::neutral : opposite;
}

const std::string& draw_cue(const SynthConfig& c, Sentiment s, Rng& rng) {
  switch (s) {
    case Sentiment::positive:
      return pick(c.positive_cues, rng);
    case Sentiment::negative:
      return pick(c.negative_cues, rng);
    case Sentiment::neutral:
      break;
  }
  return pick(c.neutral_cues, rng);
}

struct Slot {
  Tokens term;
  std::string cue;
};

// Expands a template; returns the sentence and the span of each term slot.
Tokens render(const std::string& tmpl, const std::vector<Slot>& slots, std::vector<TermSpan>& spans) {
  Tokens out;
  spans.assign(slots.size(), TermSpan{});
  for (const auto& tok : split_whitespace(tmpl)) {
    if (tok == "{T}" || tok == "{T1}" || tok == "{T2}") {
      const std::size_t k = tok == "{T2}" ? 1 : 0;
      spans.at(k) = TermSpan{out.size(), slots.at(k).term.size()};
      out.insert(out.end(), slots[k].term.begin(), slots[k].term.end());
    } else if (tok == "{C}" || tok == "{C1}" || tok == "{C2}") {
      out.push_back(slots.at(tok == "{C2}" ? 1 : 0).cue);
    } else {
      out.push_back(tok);
    }
  }
  return out;
}

Tokens with_fillers(const SynthConfig& c, Tokens sentence, std::vector<TermSpan>& spans, Rng& rng) {
  if (c.fillers.empty() || c.max_fillers == 0) return sentence;
  const std::size_t before = rng.below(c.max_fillers + 1);
  const std::size_t after = rng.below(c.max_fillers + 1);
  Tokens out;
  for (std::size_t i = 0; i < before; ++i) out.push_back(pick(c.fillers, rng));
  out.insert(out.end(), sentence.begin(), sentence.end());
  for (std::size_t i = 0; i < after; ++i) out.push_back(pick(c.fillers, rng));
  for (auto& s : spans) s.start += before;
  return out;
}

struct Draft {
  Tokens context;
  TermSpan span;
  Sentiment sentiment;
  std::size_t category = 0;
};

// `term_for(slot)` yields (term tokens, category) for slot 0 or 1; slot 1 is
// asked for a category different from slot 0.
template <typename TermFor>
Draft draft_sentence(const SynthConfig& c, Rng& rng, TermFor&& term_for) {
  const bool multi = c.multi_aspect_fraction > 0.0 && rng.bernoulli(c.multi_aspect_fraction);
  std::vector<Slot> slots;
  std::vector<Sentiment> polarity;
  std::vector<std::size_t> category;
  auto [term0, cat0] = term_for(std::size_t{0}, std::size_t{0});
  polarity.push_back(draw_polarity(c, rng));
  slots.push_back({term0, draw_cue(c, polarity[0], rng)});
  category.push_back(cat0);
  if (multi) {
    auto [term1, cat1] = term_for(std::size_t{1}, cat0);
    polarity.push_back(draw_other_polarity(c, polarity[0], rng));
    slots.push_back({term1, draw_cue(c, polarity[1], rng)});
    category.push_back(cat1);
  }
  std::vector<TermSpan> spans;
  Tokens sentence = render(pick(multi ? c.multi_templates : c.single_templates, rng), slots, spans);
  sentence = with_fillers(c, std::move(sentence), spans, rng);
  const std::size_t chosen = multi ? rng.below(2) : 0;
  return Draft{std::move(sentence), spans[chosen], polarity[chosen], category[chosen]};
}

void generate_source(const SynthConfig& c, std::size_t count, Rng& rng, SourceCorpus& corpus,
                     std::vector<TermSpan>& manifest) {
  corpus.categories = c.categories;
  const std::size_t k = c.categories.size();
  for (std::size_t i = 0; i < count; ++i) {
    Draft d = draft_sentence(c, rng, [&](std::size_t slot, std::size_t avoid) {
      std::size_t cat = rng.below(k);
      if (slot == 1) cat = (avoid + 1 + rng.below(k - 1)) % k;
      return std::pair<Tokens, std::size_t>{split_whitespace(pick(c.source_terms[cat], rng)), cat};
    });
    corpus.examples.push_back(SourceExample{std::move(d.context), c.category_aspects[d.category], d.category, d.sentiment});
    manifest.push_back(d.span);
  }
}

void generate_target(const SynthConfig& c, std::size_t count, Rng& rng, TargetCorpus& corpus) {
  const std::size_t k = c.target_terms.size();
  std::size_t first_index = 0;
  for (std::size_t i = 0; i < count; ++i) {
    Draft d = draft_sentence(c, rng, [&](std::size_t slot, std::size_t) {
      std::size_t idx = rng.below(k);
      if (slot == 0) first_index = idx;
      if (slot == 1 && k > 1) idx = (first_index + 1 + rng.below(k - 1)) % k;
      return std::pair<Tokens, std::size_t>{split_whitespace(c.target_terms[idx]), 0};
    });
    TargetExample ex{std::move(d.context), d.span.start, d.span.length, d.sentiment};
    validate(ex);
    corpus.examples.push_back(std::move(ex));
  }
}

}  // namespace

SynthCorpora gen_synthetic(const SynthConfig& config, std::uint64_t seed) {
  check_config(config);
  SynthCorpora out;
  // Independent streams per corpus so changing one size leaves the others intact.
  Rng source_rng(fnv1a64("source", seed));
  Rng source_test_rng(fnv1a64("source_test", seed));
  Rng target_rng(fnv1a64("target", seed));
  Rng target_test_rng(fnv1a64("target_test", seed));
  generate_source(config, config.source_size, source_rng, out.source, out.source_manifest);
  generate_source(config, config.source_test_size, source_test_rng, out.source_test, out.source_test_manifest);
  generate_target(config, config.target_size, target_rng, out.target);
  generate_target(config, config.target_test_size, target_test_rng, out.target_test);
  return out;
}

std::string serialize_manifest(const std::vector<TermSpan>& manifest) {
  std::string out;
  for (const auto& s : manifest) {
    out += std::to_string(s.start);
    if (s.length != 1) out += " " + std::to_string(s.length);
    out += '\n';
  }
  return out;
}

std::vector<TermSpan> parse_manifest(std::istream& in) {
  std::vector<TermSpan> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto fields = split_whitespace(line);
    if (fields.empty()) continue;
    if (fields.size() > 2) throw ParseError("manifest:" + std::to_string(line_no) + ": expected 1 or 2 integers");
    TermSpan span;
    try {
      span.start = std::stoul(fields[0]);
      if (fields.size() == 2) span.length = std::stoul(fields[1]);
    } catch (const std::exception&) {
      throw ParseError("manifest:" + std::to_string(line_no) + ": not an integer");
    }
    out.push_back(span);
  }
  return out;
}

std::vector<TermSpan> load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open manifest " + path.string());
  return parse_manifest(in);
}

}  // namespace mgan
