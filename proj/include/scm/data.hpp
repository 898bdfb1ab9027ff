#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "scm/random.hpp"

namespace scm {

struct Session {
  std::vector<std::string> turns;
  std::string response;

  friend bool operator==(const Session&, const Session&) = default;
};

enum class Provenance { original, mined, adversarial };
const char* provenance_name(Provenance p);
std::optional<Provenance> parse_provenance(std::string_view s);

struct Candidate {
  std::string text;
  int label = 0;
  Provenance provenance = Provenance::original;

  friend bool operator==(const Candidate&, const Candidate&) = default;
};

struct TestSample {
  std::vector<std::string> context;
  std::vector<Candidate> candidates;

  /// Position of the single positive; DataError unless exactly one exists.
  std::size_t gold_index() const;
  std::size_t count(Provenance p) const;
  std::vector<std::string> texts() const;

  friend bool operator==(const TestSample&, const TestSample&) = default;
};

/// Throws DataError when the sample has no turns, no candidates, or not
/// exactly one positive.
void validate(const TestSample& sample);

enum class Split { train, test };

struct LoadedCorpus {
  std::vector<Session> sessions;     // train split
  std::vector<TestSample> samples;   // test split
  std::size_t lines = 0;
  std::size_t dropped_groups = 0;    // test groups without exactly one positive
};

/// Lines are "label TAB turn_1 ... TAB turn_n TAB response". The train split
/// keeps label-1 lines; the test split groups consecutive lines with the same
/// turns. DataError carries the 1-based line number of a malformed line.
LoadedCorpus parse_corpus(std::string_view text, Split split);
LoadedCorpus load_corpus(const std::string& path, Split split);

std::string format_sessions(const std::vector<Session>& sessions);
std::string format_samples(const std::vector<TestSample>& samples);

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view content);

// ---------------------------------------------------------------------------
// Synthetic corpora

enum class SyntheticKind { separable, comparison };
const char* synthetic_kind_name(SyntheticKind k);
std::optional<SyntheticKind> parse_synthetic_kind(std::string_view s);

struct SyntheticSpec {
  SyntheticKind kind = SyntheticKind::separable;
  std::uint64_t seed = 50;
  std::size_t n_train = 2000;
  std::size_t n_test = 500;
  std::size_t n_topics = 8;
  std::size_t candidates = 10;
  std::size_t topic_words = 16;  // vocabulary per topic
  std::size_t fillers = 10;      // shared words
  double topic_rate = 0.9;       // chance a word is drawn from the topic
  std::size_t n_keys = 24;       // comparison kind: context keys
  std::size_t templates = 0;     // comparison kind: response templates per topic, 0 = fresh per session
};

struct SyntheticCorpus {
  std::vector<Session> train;
  std::vector<TestSample> test;
};

/// separable: context and gold share a topic vocabulary; the negatives are
/// fresh responses from other topics.
/// comparison: the last turn ends in a key token, the gold is a response
/// template with the key's partner token inserted, and the negatives are the
/// same template with other partner tokens.
SyntheticCorpus generate_synthetic(const SyntheticSpec& spec);

/// SyntheticSpec defaults with the kind set; the comparison kind uses fewer topics
/// and one template per topic, so in-batch negatives share templates.
SyntheticSpec synthetic_defaults(SyntheticKind kind);

/// |multiset intersection| / max(|a|, |b|) over whitespace tokens.
double token_overlap(std::string_view a, std::string_view b);

// ---------------------------------------------------------------------------
// Lexical retrieval

struct Hit {
  std::size_t id = 0;
  double score = 0.0;
};

/// BM25 over a pool of distinct documents; document ids are pool positions.
class LexicalIndex {
 public:
  static constexpr double kK1 = 1.2;
  static constexpr double kB = 0.75;

  LexicalIndex() = default;
  /// DataError on duplicate documents.
  static LexicalIndex build(std::vector<std::string> pool);

  std::size_t size() const { return docs_.size(); }
  const std::string& document(std::size_t id) const { return docs_.at(id); }
  const std::vector<std::string>& documents() const { return docs_; }
  std::optional<std::size_t> find(std::string_view text) const;

  /// ln(1 + (N - df + 0.5) / (df + 0.5)); nonnegative for every df.
  double idf(std::string_view term) const;
  double score(std::size_t id, std::string_view query) const;

  /// Top k by score, ties by ascending id, excluded ids skipped. DataError
  /// naming the available count when fewer than k documents remain.
  std::vector<Hit> query(std::string_view text, std::size_t k,
                         const std::unordered_set<std::size_t>& exclude = {}) const;

 private:
  struct Posting {
    std::size_t doc;
    std::size_t tf;
  };
  std::vector<std::string> docs_;
  std::vector<std::size_t> lengths_;
  double avg_length_ = 0.0;
  std::unordered_map<std::string, std::vector<Posting>> postings_;
  std::unordered_map<std::string, std::size_t> ids_;
};

/// Every distinct utterance of the corpora (turns, responses, candidates) in
/// first-appearance order.
std::vector<std::string> utterance_pool(const std::vector<Session>& train, const std::vector<TestSample>& test);

/// Appends mined negatives retrieved with the joined context as the query until
/// the sample holds target_m candidates. The gold, the original candidates and
/// the sample's own context turns are never mined.
TestSample extend_candidates(const TestSample& sample, const LexicalIndex& index, std::size_t target_m);

/// One uniformly chosen negative replaced by one uniformly chosen context turn.
TestSample make_adversarial(const TestSample& sample, Rng& rng);

/// Mined-candidate cache: one JSON object per line with sample_id, target_m,
/// candidates, labels, provenance.
std::string format_extension_cache(const std::vector<TestSample>& samples, std::size_t target_m);
/// Rebuilds samples from a cache written for the same test set; DataError on a
/// mismatch with `originals` or with target_m.
std::vector<TestSample> parse_extension_cache(std::string_view text, const std::vector<TestSample>& originals,
                                              std::size_t target_m);

}  // namespace scm
