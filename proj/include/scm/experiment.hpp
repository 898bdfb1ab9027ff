#pragma once

// Train/evaluate drivers shared by the CLI and the acceptance suite.

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "scm/checkpoint.hpp"
#include "scm/config.hpp"
#include "scm/data.hpp"
#include "scm/metrics.hpp"

namespace scm {

struct Corpus {
  std::vector<Session> train;
  std::vector<TestSample> test;
  std::string hash;  // content hash of the TSV serialization
};

Corpus make_corpus(std::vector<Session> train, std::vector<TestSample> test);
/// Reads the train/test TSV files named by the config; DataError if a
/// needed path is empty.
Corpus load_run_corpus(const RunConfig& config, bool need_train);

/// Vocabulary over every text of the corpus.
Vocabulary corpus_vocabulary(const Corpus& corpus);

/// "bi", "bi+scm", "poly+scm-{context-aware}", ...
std::string model_tag(const ModelConfig& m);
RunMetadata run_metadata(const RunConfig& config, const std::string& corpus_hash, const std::string& protocol);

struct TrainedModel {
  Model model;
  FitResult fit;
};

TrainedModel train_model(const RunConfig& config, const Corpus& corpus, const FitHooks& hooks = {});

Scorer model_scorer(Model& model);
EvalReport evaluate_model(Model& model, const std::vector<TestSample>& samples, RunMetadata meta);

std::vector<TestSample> extend_all(const std::vector<TestSample>& samples, const LexicalIndex& index,
                                   std::size_t target_m);
/// Seeded adversarial transform of every sample, in order.
std::vector<TestSample> adversarial_all(const std::vector<TestSample>& samples, std::uint64_t seed);

struct TableRow {
  std::string label;
  RunConfig config;
  EvalReport report;
};

/// Full SCM, -{context-aware}, -gated and the base model without SCM, all
/// under the base config's seed.
std::vector<TableRow> run_ablation(const RunConfig& base, const Corpus& corpus,
                                   const std::function<void(const std::string&)>& progress = {});

enum class SweepAxis { n, n_head, dim_ffd };
std::optional<SweepAxis> parse_sweep_axis(std::string_view s);
const char* sweep_axis_name(SweepAxis a);
/// Values allowed on each axis.
const std::vector<std::size_t>& sweep_grid(SweepAxis a);

/// Base model without SCM, then one SCM run per value with the other two
/// axes pinned to n=4, n_head=8, dim_ffd=512.
std::vector<TableRow> run_sweep(SweepAxis axis, const std::vector<std::size_t>& values, const RunConfig& base,
                                const Corpus& corpus, const std::function<void(const std::string&)>& progress = {});

std::string rows_table(const std::vector<TableRow>& rows);

}  // namespace scm
