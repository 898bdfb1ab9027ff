#include "scm/experiment.hpp"

#include <algorithm>

#include "scm/errors.hpp"

namespace scm {

Corpus make_corpus(std::vector<Session> train, std::vector<TestSample> test) {
  Corpus c;
  c.hash = content_hash(format_sessions(train) + format_samples(test));
  c.train = std::move(train);
  c.test = std::move(test);
  return c;
}

Corpus load_run_corpus(const RunConfig& config, bool need_train) {
  std::vector<Session> train;
  std::vector<TestSample> test;
  if (need_train) {
    if (config.train_path.empty()) throw DataError("no training corpus given (train=)");
    train = load_corpus(config.train_path, Split::train).sessions;
  }
  if (!config.test_path.empty()) test = load_corpus(config.test_path, Split::test).samples;
  return make_corpus(std::move(train), std::move(test));
}

Vocabulary corpus_vocabulary(const Corpus& corpus) {
  std::vector<std::string> texts;
  for (const Session& s : corpus.train) {
    texts.insert(texts.end(), s.turns.begin(), s.turns.end());
    texts.push_back(s.response);
  }
  for (const TestSample& s : corpus.test) {
    texts.insert(texts.end(), s.context.begin(), s.context.end());
    for (const Candidate& c : s.candidates) texts.push_back(c.text);
  }
  return Vocabulary::build(texts);
}

std::string model_tag(const ModelConfig& m) {
  std::string tag = model_kind_name(m.kind);
  switch (m.scm) {
    case ScmMode::off: break;
    case ScmMode::full: tag += "+scm"; break;
    case ScmMode::no_context_aware: tag += "+scm-{context-aware}"; break;
    case ScmMode::no_gate: tag += "+scm-gated"; break;
  }
  return tag;
}

RunMetadata run_metadata(const RunConfig& config, const std::string& corpus_hash, const std::string& protocol) {
  RunMetadata m;
  m.model = model_tag(config.model);
  m.ablation = scm_mode_name(config.model.scm);
  m.seed = config.train.seed;
  m.protocol = protocol;
  m.config_hash = config_hash(config);
  m.corpus_hash = corpus_hash;
  return m;
}

TrainedModel train_model(const RunConfig& config, const Corpus& corpus, const FitHooks& hooks) {
  validate(config);
  TrainedModel t{Model(config.model, corpus_vocabulary(corpus), config.train.seed), {}};
  t.fit = fit(corpus.train, t.model, config.train, hooks);
  return t;
}

Scorer model_scorer(Model& model) {
  return [&model](const TestSample& s) { return model.score(s.context, s.texts()); };
}

EvalReport evaluate_model(Model& model, const std::vector<TestSample>& samples, RunMetadata meta) {
  return evaluate(samples, model_scorer(model), std::move(meta));
}

std::vector<TestSample> extend_all(const std::vector<TestSample>& samples, const LexicalIndex& index,
                                   std::size_t target_m) {
  std::vector<TestSample> out;
  out.reserve(samples.size());
  for (const TestSample& s : samples) out.push_back(extend_candidates(s, index, target_m));
  return out;
}

std::vector<TestSample> adversarial_all(const std::vector<TestSample>& samples, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<TestSample> out;
  out.reserve(samples.size());
  for (const TestSample& s : samples) out.push_back(make_adversarial(s, rng));
  return out;
}

namespace {

std::string base_label(ModelKind k) { return k == ModelKind::bi ? "bi-encoder" : "poly-encoder"; }

TableRow train_and_evaluate(std::string label, const RunConfig& config, const Corpus& corpus,
                            const std::function<void(const std::string&)>& progress) {
  if (progress) progress("training " + label);
  TrainedModel t = train_model(config, corpus);
  TableRow row{std::move(label), config, evaluate_model(t.model, corpus.test, run_metadata(config, corpus.hash, "standard"))};
  if (progress) progress(row.label + ": R@1 " + std::to_string(row.report.recall_at(1)) + ", MRR " +
                         std::to_string(row.report.mrr));
  return row;
}

}  // namespace

std::vector<TableRow> run_ablation(const RunConfig& base, const Corpus& corpus,
                                   const std::function<void(const std::string&)>& progress) {
  const std::string name = base_label(base.model.kind);
  std::vector<std::pair<std::string, ScmMode>> variants = {{name + "+SCM", ScmMode::full},
                                                           {"-{context-aware}", ScmMode::no_context_aware},
                                                           {"-gated", ScmMode::no_gate},
                                                           {name, ScmMode::off}};
  std::vector<TableRow> rows;
  for (const auto& [label, mode] : variants) {
    RunConfig c = base;
    c.model.scm = mode;
    rows.push_back(train_and_evaluate(label, c, corpus, progress));
  }
  return rows;
}

std::optional<SweepAxis> parse_sweep_axis(std::string_view s) {
  if (s == "n") return SweepAxis::n;
  if (s == "n_head") return SweepAxis::n_head;
  if (s == "dim_ffd") return SweepAxis::dim_ffd;
  return std::nullopt;
}

const char* sweep_axis_name(SweepAxis a) {
  switch (a) {
    case SweepAxis::n: return "n";
    case SweepAxis::n_head: return "n_head";
    case SweepAxis::dim_ffd: return "dim_ffd";
  }
  return "?";
}

const std::vector<std::size_t>& sweep_grid(SweepAxis a) {
  static const std::vector<std::size_t> small = {2, 4, 6, 8};
  static const std::vector<std::size_t> ffd = {128, 512, 1024, 2048};
  return a == SweepAxis::dim_ffd ? ffd : small;
}

std::vector<TableRow> run_sweep(SweepAxis axis, const std::vector<std::size_t>& values, const RunConfig& base,
                                const Corpus& corpus, const std::function<void(const std::string&)>& progress) {
  const auto& grid = sweep_grid(axis);
  for (std::size_t v : values)
    if (std::find(grid.begin(), grid.end(), v) == grid.end())
      throw ConfigError(std::to_string(v) + " is outside the " + sweep_axis_name(axis) + " grid");

  std::vector<TableRow> rows;
  RunConfig off = base;
  off.model.scm = ScmMode::off;
  rows.push_back(train_and_evaluate(base_label(base.model.kind), off, corpus, progress));
  for (std::size_t v : values) {
    RunConfig c = base;
    if (c.model.scm == ScmMode::off) c.model.scm = ScmMode::full;
    c.model.comparison.layers = axis == SweepAxis::n ? v : 4;
    c.model.comparison.heads = axis == SweepAxis::n_head ? v : 8;
    c.model.comparison.ffd = axis == SweepAxis::dim_ffd ? v : 512;
    rows.push_back(train_and_evaluate(std::string(sweep_axis_name(axis)) + "=" + std::to_string(v), c, corpus, progress));
  }
  return rows;
}

std::string rows_table(const std::vector<TableRow>& rows) {
  std::vector<std::string> labels;
  std::vector<EvalReport> reports;
  for (const TableRow& r : rows) {
    labels.push_back(r.label);
    reports.push_back(r.report);
  }
  return report_table(labels, reports);
}

}  // namespace scm
