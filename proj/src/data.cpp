#include "scm/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "scm/errors.hpp"
#include "scm/vocab.hpp"

namespace scm {

const char* provenance_name(Provenance p) {
  switch (p) {
    case Provenance::original: return "original";
    case Provenance::mined: return "mined";
    case Provenance::adversarial: return "adversarial";
  }
  return "?";
}

std::optional<Provenance> parse_provenance(std::string_view s) {
  for (Provenance p : {Provenance::original, Provenance::mined, Provenance::adversarial})
    if (s == provenance_name(p)) return p;
  return std::nullopt;
}

std::size_t TestSample::gold_index() const {
  std::size_t gold = candidates.size(), positives = 0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (candidates[i].label == 1) {
      gold = i;
      ++positives;
    }
  }
  if (positives != 1)
    throw DataError("test sample has " + std::to_string(positives) + " positive candidates, expected exactly 1");
  return gold;
}

std::size_t TestSample::count(Provenance p) const {
  return static_cast<std::size_t>(
      std::count_if(candidates.begin(), candidates.end(), [p](const Candidate& c) { return c.provenance == p; }));
}

std::vector<std::string> TestSample::texts() const {
  std::vector<std::string> out;
  out.reserve(candidates.size());
  for (const Candidate& c : candidates) out.push_back(c.text);
  return out;
}

void validate(const TestSample& sample) {
  if (sample.context.empty()) throw DataError("test sample has no context turns");
  if (sample.candidates.empty()) throw DataError("test sample has no candidates");
  for (const Candidate& c : sample.candidates)
    if (c.label != 0 && c.label != 1) throw DataError("candidate label must be 0 or 1");
  sample.gold_index();
}

// ---------------------------------------------------------------------------
// TSV

namespace {

std::vector<std::string> split_tabs(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    std::size_t tab = line.find('\t', start);
    if (tab == std::string_view::npos) {
      out.emplace_back(line.substr(start));
      return out;
    }
    out.emplace_back(line.substr(start, tab - start));
    start = tab + 1;
  }
}

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

void check_field(const std::string& s) {
  if (s.find_first_of("\t\n") != std::string::npos)
    throw DataError("corpus field contains a tab or newline: '" + s + "'");
}

void append_line(std::string& out, int label, const std::vector<std::string>& turns, const std::string& response) {
  for (const std::string& t : turns) check_field(t);
  check_field(response);
  out += label == 1 ? '1' : '0';
  for (const std::string& t : turns) {
    out += '\t';
    out += t;
  }
  out += '\t';
  out += response;
  out += '\n';
}

}  // namespace

LoadedCorpus parse_corpus(std::string_view text, Split split) {
  LoadedCorpus out;
  std::vector<std::string> group_turns;
  std::vector<Candidate> group;

  auto flush = [&] {
    if (group.empty()) return;
    const auto positives = std::count_if(group.begin(), group.end(), [](const Candidate& c) { return c.label == 1; });
    if (positives == 1) out.samples.push_back({group_turns, std::move(group)});
    else ++out.dropped_groups;
    group.clear();
  };

  std::size_t pos = 0, line_no = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;

    std::vector<std::string> fields = split_tabs(line);
    if (fields.size() < 3)
      throw DataError("line " + std::to_string(line_no) + ": expected label, at least one turn and a response, got " +
                      std::to_string(fields.size()) + " fields");
    if (fields[0] != "0" && fields[0] != "1")
      throw DataError("line " + std::to_string(line_no) + ": label must be 0 or 1, got '" + fields[0] + "'");
    if (fields.back().empty()) throw DataError("line " + std::to_string(line_no) + ": empty response");
    const int label = fields[0] == "1" ? 1 : 0;
    std::string response = std::move(fields.back());
    std::vector<std::string> turns(std::make_move_iterator(fields.begin() + 1),
                                   std::make_move_iterator(fields.end() - 1));
    ++out.lines;

    if (split == Split::train) {
      if (label == 1) out.sessions.push_back({std::move(turns), std::move(response)});
      continue;
    }
    if (!group.empty() && turns != group_turns) flush();
    if (group.empty()) group_turns = std::move(turns);
    group.push_back({std::move(response), label, Provenance::original});
  }
  flush();
  return out;
}

LoadedCorpus load_corpus(const std::string& path, Split split) { return parse_corpus(read_file(path), split); }

std::string format_sessions(const std::vector<Session>& sessions) {
  std::string out;
  for (const Session& s : sessions) append_line(out, 1, s.turns, s.response);
  return out;
}

std::string format_samples(const std::vector<TestSample>& samples) {
  std::string out;
  for (const TestSample& s : samples)
    for (const Candidate& c : s.candidates) append_line(out, c.label, s.context, c.text);
  return out;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, std::string_view content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path);
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw DataError("write failed for " + path);
}

// ---------------------------------------------------------------------------
// Synthetic corpora

const char* synthetic_kind_name(SyntheticKind k) { return k == SyntheticKind::separable ? "separable" : "comparison"; }

std::optional<SyntheticKind> parse_synthetic_kind(std::string_view s) {
  if (s == "separable") return SyntheticKind::separable;
  if (s == "comparison") return SyntheticKind::comparison;
  return std::nullopt;
}

namespace {

class Generator {
 public:
  explicit Generator(const SyntheticSpec& spec) : spec_(spec), rng_(spec.seed) {
    perm_.resize(spec.n_keys);
    for (std::size_t i = 0; i < perm_.size(); ++i) perm_[i] = i;
    shuffle(perm_, rng_);
    if (spec.kind == SyntheticKind::comparison)
      for (std::size_t t = 0; t < spec.n_topics; ++t) {
        templates_.emplace_back();
        for (std::size_t j = 0; j < spec.templates; ++j) templates_[t].push_back(words(t, between(5, 7)));
      }
  }

  std::size_t between(std::size_t lo, std::size_t hi) { return lo + uniform_index(rng_, hi - lo + 1); }

  std::vector<std::string> words(std::size_t topic, std::size_t n) {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < n; ++i) {
      if (uniform01(rng_) < spec_.topic_rate)
        out.push_back("t" + std::to_string(topic) + "w" + std::to_string(uniform_index(rng_, spec_.topic_words)));
      else
        out.push_back("f" + std::to_string(uniform_index(rng_, spec_.fillers)));
    }
    return out;
  }

  static std::string text(const std::vector<std::string>& w) { return join(w, " "); }

  std::vector<std::string> turns(std::size_t topic) {
    std::vector<std::string> out;
    const std::size_t n = between(2, 3);
    for (std::size_t i = 0; i < n; ++i) out.push_back(text(words(topic, between(4, 7))));
    return out;
  }

  struct Draft {
    Session session;
    std::size_t topic = 0;
    std::vector<std::string> tmpl;
    std::size_t slot = 0;
    std::size_t key = 0;
  };

  Draft draft() {
    Draft d;
    d.topic = uniform_index(rng_, spec_.n_topics);
    d.session.turns = turns(d.topic);
    if (spec_.kind == SyntheticKind::separable) {
      d.session.response = text(words(d.topic, between(5, 8)));
      return d;
    }
    d.key = uniform_index(rng_, spec_.n_keys);
    d.session.turns.back() += " k" + std::to_string(d.key);
    d.tmpl = spec_.templates ? templates_[d.topic][uniform_index(rng_, spec_.templates)] : words(d.topic, between(5, 7));
    d.slot = uniform_index(rng_, d.tmpl.size() + 1);
    d.session.response = keyed(d, perm_[d.key]);
    return d;
  }

  static std::string keyed(const Draft& d, std::size_t partner) {
    std::vector<std::string> w = d.tmpl;
    w.insert(w.begin() + static_cast<std::ptrdiff_t>(d.slot), "r" + std::to_string(partner));
    return text(w);
  }

  TestSample sample() {
    Draft d = draft();
    TestSample s;
    s.context = d.session.turns;
    s.candidates.push_back({d.session.response, 1, Provenance::original});
    if (spec_.kind == SyntheticKind::separable) {
      while (s.candidates.size() < spec_.candidates) {
        const std::size_t other = uniform_index(rng_, spec_.n_topics);
        if (other == d.topic) continue;
        s.candidates.push_back({text(words(other, between(5, 8))), 0, Provenance::original});
      }
    } else {
      std::vector<bool> used(spec_.n_keys, false);
      used[perm_[d.key]] = true;
      while (s.candidates.size() < spec_.candidates) {
        const std::size_t partner = uniform_index(rng_, spec_.n_keys);
        if (used[partner]) continue;
        used[partner] = true;
        s.candidates.push_back({keyed(d, partner), 0, Provenance::original});
      }
    }
    // The gold goes to a random position so position carries no signal.
    std::swap(s.candidates[0], s.candidates[uniform_index(rng_, s.candidates.size())]);
    return s;
  }

 private:
  const SyntheticSpec& spec_;
  Rng rng_;
  std::vector<std::size_t> perm_;
  std::vector<std::vector<std::vector<std::string>>> templates_;
};

}  // namespace

SyntheticCorpus generate_synthetic(const SyntheticSpec& spec) {
  if (spec.n_topics < 2) throw ConfigError("synthetic corpora need at least 2 topics");
  if (spec.candidates < 2) throw ConfigError("synthetic test samples need at least 2 candidates");
  if (spec.topic_words == 0 || spec.fillers == 0) throw ConfigError("synthetic vocabularies must be nonempty");
  if (spec.kind == SyntheticKind::comparison && spec.n_keys < spec.candidates)
    throw ConfigError("comparison corpus needs at least as many keys as candidates");
  Generator gen(spec);
  SyntheticCorpus out;
  out.train.reserve(spec.n_train);
  for (std::size_t i = 0; i < spec.n_train; ++i) out.train.push_back(gen.draft().session);
  out.test.reserve(spec.n_test);
  for (std::size_t i = 0; i < spec.n_test; ++i) out.test.push_back(gen.sample());
  return out;
}

SyntheticSpec synthetic_defaults(SyntheticKind kind) {
  SyntheticSpec spec;
  spec.kind = kind;
  if (kind == SyntheticKind::comparison) {
    spec.n_topics = 4;
    spec.templates = 1;
  }
  return spec;
}

double token_overlap(std::string_view a, std::string_view b) {
  std::map<std::string, std::size_t> ca;
  const auto ta = split_whitespace(a), tb = split_whitespace(b);
  for (const std::string& t : ta) ++ca[t];
  std::size_t shared = 0;
  for (const std::string& t : tb) {
    auto it = ca.find(t);
    if (it != ca.end() && it->second > 0) {
      --it->second;
      ++shared;
    }
  }
  const std::size_t n = std::max(ta.size(), tb.size());
  return n == 0 ? 1.0 : static_cast<double>(shared) / static_cast<double>(n);
}

// ---------------------------------------------------------------------------
// Lexical retrieval

LexicalIndex LexicalIndex::build(std::vector<std::string> pool) {
  LexicalIndex idx;
  idx.docs_ = std::move(pool);
  std::size_t total = 0;
  for (std::size_t id = 0; id < idx.docs_.size(); ++id) {
    if (!idx.ids_.emplace(idx.docs_[id], id).second)
      throw DataError("duplicate document in retrieval pool: '" + idx.docs_[id] + "'");
    std::map<std::string, std::size_t> tf;
    const auto tokens = split_whitespace(idx.docs_[id]);
    for (const std::string& t : tokens) ++tf[t];
    for (const auto& [term, n] : tf) idx.postings_[term].push_back({id, n});
    idx.lengths_.push_back(tokens.size());
    total += tokens.size();
  }
  idx.avg_length_ = idx.docs_.empty() ? 0.0 : static_cast<double>(total) / static_cast<double>(idx.docs_.size());
  return idx;
}

std::optional<std::size_t> LexicalIndex::find(std::string_view text) const {
  auto it = ids_.find(std::string(text));
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

double LexicalIndex::idf(std::string_view term) const {
  auto it = postings_.find(std::string(term));
  const double df = it == postings_.end() ? 0.0 : static_cast<double>(it->second.size());
  const double n = static_cast<double>(docs_.size());
  return std::log(1.0 + (n - df + 0.5) / (df + 0.5));
}

namespace {
double bm25_term(double idf, double tf, double len, double avg) {
  const double norm = LexicalIndex::kK1 * (1.0 - LexicalIndex::kB + LexicalIndex::kB * len / avg);
  return idf * tf * (LexicalIndex::kK1 + 1.0) / (tf + norm);
}
}  // namespace

double LexicalIndex::score(std::size_t id, std::string_view query) const {
  if (id >= docs_.size()) throw IndexError("document id " + std::to_string(id) + " outside the pool");
  double s = 0.0;
  for (const std::string& term : split_whitespace(query)) {
    auto it = postings_.find(term);
    if (it == postings_.end()) continue;
    for (const Posting& p : it->second)
      if (p.doc == id)
        s += bm25_term(idf(term), static_cast<double>(p.tf), static_cast<double>(lengths_[id]), avg_length_);
  }
  return s;
}

std::vector<Hit> LexicalIndex::query(std::string_view text, std::size_t k,
                                     const std::unordered_set<std::size_t>& exclude) const {
  std::size_t excluded = 0;
  for (std::size_t id : exclude)
    if (id < docs_.size()) ++excluded;
  const std::size_t available = docs_.size() - excluded;
  if (k > available)
    throw DataError("retrieval asked for " + std::to_string(k) + " documents but only " + std::to_string(available) +
                    " are available");

  std::vector<double> scores(docs_.size(), 0.0);
  for (const std::string& term : split_whitespace(text)) {
    auto it = postings_.find(term);
    if (it == postings_.end()) continue;
    const double w = idf(term);
    for (const Posting& p : it->second)
      scores[p.doc] += bm25_term(w, static_cast<double>(p.tf), static_cast<double>(lengths_[p.doc]), avg_length_);
  }
  std::vector<Hit> hits;
  hits.reserve(available);
  for (std::size_t id = 0; id < docs_.size(); ++id)
    if (!exclude.count(id)) hits.push_back({id, scores[id]});
  auto better = [](const Hit& a, const Hit& b) { return a.score != b.score ? a.score > b.score : a.id < b.id; };
  std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(k), hits.end(), better);
  hits.resize(k);
  return hits;
}

std::vector<std::string> utterance_pool(const std::vector<Session>& train, const std::vector<TestSample>& test) {
  std::vector<std::string> pool;
  std::unordered_set<std::string> seen;
  auto add = [&](const std::string& s) {
    if (seen.insert(s).second) pool.push_back(s);
  };
  for (const Session& s : train) {
    for (const std::string& t : s.turns) add(t);
    add(s.response);
  }
  for (const TestSample& s : test) {
    for (const std::string& t : s.context) add(t);
    for (const Candidate& c : s.candidates) add(c.text);
  }
  return pool;
}

TestSample extend_candidates(const TestSample& sample, const LexicalIndex& index, std::size_t target_m) {
  validate(sample);
  if (target_m <= sample.candidates.size())
    throw DataError("extension target " + std::to_string(target_m) + " does not exceed the current " +
                    std::to_string(sample.candidates.size()) + " candidates");
  std::unordered_set<std::size_t> exclude;
  auto exclude_text = [&](const std::string& t) {
    if (auto id = index.find(t)) exclude.insert(*id);
  };
  for (const Candidate& c : sample.candidates) exclude_text(c.text);
  for (const std::string& t : sample.context) exclude_text(t);

  const std::size_t need = target_m - sample.candidates.size();
  TestSample out = sample;
  for (const Hit& h : index.query(join(sample.context, " "), need, exclude))
    out.candidates.push_back({index.document(h.id), 0, Provenance::mined});
  return out;
}

TestSample make_adversarial(const TestSample& sample, Rng& rng) {
  validate(sample);
  std::vector<std::size_t> negatives;
  for (std::size_t i = 0; i < sample.candidates.size(); ++i)
    if (sample.candidates[i].label == 0) negatives.push_back(i);
  if (negatives.empty()) throw DataError("adversarial transform needs at least one negative candidate");
  const std::size_t slot = negatives[uniform_index(rng, negatives.size())];
  const std::string& turn = sample.context[uniform_index(rng, sample.context.size())];
  TestSample out = sample;
  out.candidates[slot] = {turn, 0, Provenance::adversarial};
  return out;
}

// ---------------------------------------------------------------------------
// Extension cache

std::string format_extension_cache(const std::vector<TestSample>& samples, std::size_t target_m) {
  std::string out;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    nlohmann::json rec;
    rec["sample_id"] = i;
    rec["target_m"] = target_m;
    rec["candidates"] = samples[i].texts();
    std::vector<int> labels;
    std::vector<std::string> prov;
    for (const Candidate& c : samples[i].candidates) {
      labels.push_back(c.label);
      prov.emplace_back(provenance_name(c.provenance));
    }
    rec["labels"] = labels;
    rec["provenance"] = prov;
    out += rec.dump();
    out += '\n';
  }
  return out;
}

std::vector<TestSample> parse_extension_cache(std::string_view text, const std::vector<TestSample>& originals,
                                              std::size_t target_m) {
  std::vector<TestSample> out;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where = "extension cache line " + std::to_string(line_no);
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(where + ": " + e.what());
    }
    try {
      const std::size_t id = rec.at("sample_id").get<std::size_t>();
      if (id != out.size() || id >= originals.size()) throw DataError(where + ": unexpected sample_id");
      if (rec.at("target_m").get<std::size_t>() != target_m) throw DataError(where + ": cached for another m");
      const auto texts = rec.at("candidates").get<std::vector<std::string>>();
      const auto labels = rec.at("labels").get<std::vector<int>>();
      const auto prov = rec.at("provenance").get<std::vector<std::string>>();
      if (texts.size() != target_m || labels.size() != target_m || prov.size() != target_m)
        throw DataError(where + ": record does not hold target_m candidates");
      TestSample s;
      s.context = originals[id].context;
      for (std::size_t j = 0; j < texts.size(); ++j) {
        auto p = parse_provenance(prov[j]);
        if (!p) throw DataError(where + ": unknown provenance '" + prov[j] + "'");
        s.candidates.push_back({texts[j], labels[j], *p});
      }
      const auto& orig = originals[id].candidates;
      if (orig.size() > s.candidates.size() || !std::equal(orig.begin(), orig.end(), s.candidates.begin()))
        throw DataError(where + ": original candidates differ from the test set");
      validate(s);
      out.push_back(std::move(s));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(where + ": " + e.what());
    }
  }
  if (out.size() != originals.size())
    throw DataError("extension cache holds " + std::to_string(out.size()) + " samples, test set has " +
                    std::to_string(originals.size()));
  return out;
}

}  // namespace scm
