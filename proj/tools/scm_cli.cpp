// scm: train, evaluate and compare response-selection models.
//
// Settings resolve in this order, later wins:
//   built-in defaults < --config file < SCM_SEED environment variable < flags
//
// Exit codes: 0 success, 2 usage/config, 3 data (corpus, checkpoint), 4 numeric.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "scm/checkpoint.hpp"
#include "scm/errors.hpp"
#include "scm/experiment.hpp"
#include "scm/kernels.hpp"

namespace fs = std::filesystem;
using namespace scm;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

// Flags that shape a run. Each optional is applied only when given.
struct RunFlags {
  std::string config_file;
  std::optional<std::string> train, test, out;
  std::optional<std::string> model, scm;
  std::optional<std::size_t> d_model, enc_layers, enc_heads, enc_ffd, max_len, poly_m, n, n_head, dim_ffd;
  std::optional<std::size_t> batch_size, epochs;
  std::optional<std::uint64_t> seed;
  std::optional<double> lr_encoder, lr_scm, warmup_ratio, clip, dropout;

  void attach(CLI::App* app) {
    app->add_option("--config", config_file, "key=value config file")->check(CLI::ExistingFile);
    app->add_option("--train", train, "training corpus (TSV)");
    app->add_option("--test", test, "test corpus (TSV)");
    app->add_option("--out", out, "output directory");
    app->add_option("--model", model, "bi or poly");
    app->add_option("--scm", scm, "off, full, no_context_aware or no_gate");
    app->add_option("--d-model", d_model, "encoder width");
    app->add_option("--enc-layers", enc_layers);
    app->add_option("--enc-heads", enc_heads);
    app->add_option("--enc-ffd", enc_ffd);
    app->add_option("--max-len", max_len);
    app->add_option("--poly-m", poly_m, "poly-encoder codes");
    app->add_option("--n", n, "comparison transformer layers");
    app->add_option("--n-head", n_head, "comparison attention heads");
    app->add_option("--dim-ffd", dim_ffd, "comparison FFN width");
    app->add_option("--batch-size", batch_size);
    app->add_option("--epochs", epochs);
    app->add_option("--seed", seed);
    app->add_option("--lr-encoder", lr_encoder);
    app->add_option("--lr-scm", lr_scm);
    app->add_option("--warmup-ratio", warmup_ratio);
    app->add_option("--clip", clip);
    app->add_option("--dropout", dropout);
  }

  RunConfig resolve() const {
    RunConfig c;
    if (!config_file.empty()) c = parse_config(read_file(config_file), c);
    if (const char* env = std::getenv("SCM_SEED"); env && *env) apply_setting(c, "seed", env);
    auto set = [&c](const char* key, const auto& v) {
      if (!v) return;
      std::ostringstream s;
      s.precision(17);
      s << *v;
      apply_setting(c, key, s.str());
    };
    set("train", train);
    set("test", test);
    set("out", out);
    set("model", model);
    set("scm", scm);
    set("d_model", d_model);
    set("enc_layers", enc_layers);
    set("enc_heads", enc_heads);
    set("enc_ffd", enc_ffd);
    set("max_len", max_len);
    set("poly_m", poly_m);
    set("n", n);
    set("n_head", n_head);
    set("dim_ffd", dim_ffd);
    set("batch_size", batch_size);
    set("epochs", epochs);
    set("seed", seed);
    set("lr_encoder", lr_encoder);
    set("lr_scm", lr_scm);
    set("warmup_ratio", warmup_ratio);
    set("clip", clip);
    set("dropout", dropout);
    if (c.model.scm == ScmMode::off && (n || n_head || dim_ffd))
      throw ConfigError("--n/--n-head/--dim-ffd configure the comparison module but --scm is off");
    if (c.model.kind == ModelKind::bi && poly_m) throw ConfigError("--poly-m applies only to --model poly");
    validate(c);
    return c;
  }
};

void note(const std::string& msg) { std::cerr << msg << '\n'; }

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create directory " + dir + ": " + ec.message());
}

std::string join_path(const std::string& dir, const std::string& file) { return (fs::path(dir) / file).string(); }

void write_report(const std::string& path, const EvalReport& report) {
  write_file(path, report_json(report));
  note("report written to " + path);
}

struct SynthFlags {
  std::string kind = "separable";
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> train_sessions, test_samples, topics, keys, templates;
  std::string out = "corpus";
};

int cmd_synth(const SynthFlags& f) {
  auto k = parse_synthetic_kind(f.kind);
  if (!k) throw ConfigError("--kind must be separable or comparison");
  SyntheticSpec spec = synthetic_defaults(*k);
  if (f.seed) spec.seed = *f.seed;
  if (f.train_sessions) spec.n_train = *f.train_sessions;
  if (f.test_samples) spec.n_test = *f.test_samples;
  if (f.topics) spec.n_topics = *f.topics;
  if (f.keys) spec.n_keys = *f.keys;
  if (f.templates) spec.templates = *f.templates;
  const std::string& out_dir = f.out;
  SyntheticCorpus corpus = generate_synthetic(spec);
  ensure_dir(out_dir);
  write_file(join_path(out_dir, "train.tsv"), format_sessions(corpus.train));
  write_file(join_path(out_dir, "test.tsv"), format_samples(corpus.test));
  std::cout << "wrote " << corpus.train.size() << " train sessions and " << corpus.test.size() << " test samples to "
            << out_dir << '\n';
  return 0;
}

int cmd_train(const RunFlags& flags) {
  RunConfig config = flags.resolve();
  Corpus corpus = load_run_corpus(config, true);
  ensure_dir(config.out_dir);
  write_file(join_path(config.out_dir, "config.txt"), serialize(config));
  note("model " + model_tag(config.model) + ", seed " + std::to_string(config.train.seed) + ", " +
       std::to_string(corpus.train.size()) + " sessions, kernels " + kernels::active().name);

  Model model(config.model, corpus_vocabulary(corpus), config.train.seed);
  FitHooks hooks;
  hooks.warn = note;
  hooks.on_epoch = [&](std::size_t epoch, const FitResult& r) {
    const std::string path = join_path(config.out_dir, "checkpoint_epoch" + std::to_string(epoch + 1) + ".scm");
    save_checkpoint(path, config, model);
    write_file(join_path(config.out_dir, "loss.csv"), loss_curve_csv(r));
    char buf[96];
    std::snprintf(buf, sizeof buf, "epoch %zu: mean loss %.6f", epoch + 1, r.epoch_means.back());
    note(buf);
  };
  fit(corpus.train, model, config.train, hooks);
  save_checkpoint(join_path(config.out_dir, "checkpoint.scm"), config, model);

  if (!corpus.test.empty()) {
    quantize_parameters(model);
    EvalReport report = evaluate_model(model, corpus.test, run_metadata(config, corpus.hash, "standard"));
    write_report(join_path(config.out_dir, "report.json"), report);
    std::cout << report_table({model_tag(config.model)}, {report});
  }
  return 0;
}

struct EvalFlags {
  std::string checkpoint;
  std::optional<std::string> test, train, report, cache;
  std::optional<std::size_t> extend;
  bool adversarial = false;
  std::optional<std::uint64_t> adversarial_seed;
};

int cmd_eval(const EvalFlags& f) {
  Checkpoint ckpt = load_checkpoint(f.checkpoint);
  RunConfig config = ckpt.config;
  if (f.test) config.test_path = *f.test;
  if (f.train) config.train_path = *f.train;
  if (config.test_path.empty()) throw ConfigError("no test corpus (--test) and none recorded in the checkpoint");
  if (f.extend && f.adversarial) throw ConfigError("--extend and --adversarial are separate protocols");

  Model model = restore_model(ckpt);
  // the training corpus is part of the report's corpus hash
  Corpus corpus = load_run_corpus(config, !config.train_path.empty());
  std::vector<TestSample> samples = corpus.test;
  std::string protocol = "standard";

  if (f.extend) {
    static const std::vector<std::size_t> allowed = {50, 100, 150, 200, 250, 300};
    if (std::find(allowed.begin(), allowed.end(), *f.extend) == allowed.end())
      throw ConfigError("--extend must be one of 50, 100, 150, 200, 250, 300");
    protocol = "extended";
    if (f.cache && fs::exists(*f.cache)) {
      samples = parse_extension_cache(read_file(*f.cache), corpus.test, *f.extend);
      note("mined candidates read from " + *f.cache);
    } else {
      LexicalIndex index = LexicalIndex::build(utterance_pool(corpus.train, corpus.test));
      samples = extend_all(corpus.test, index, *f.extend);
      if (f.cache) {
        write_file(*f.cache, format_extension_cache(samples, *f.extend));
        note("mined candidates cached in " + *f.cache);
      }
    }
  } else if (f.adversarial) {
    protocol = "adversarial";
    samples = adversarial_all(corpus.test, f.adversarial_seed.value_or(config.train.seed));
  }

  EvalReport report = evaluate_model(model, samples, run_metadata(config, corpus.hash, protocol));
  if (f.report) write_report(*f.report, report);
  std::cout << report_table({model_tag(config.model)}, {report});
  return 0;
}

void write_rows(const std::vector<TableRow>& rows, const std::string& out_dir, const std::string& stem) {
  ensure_dir(out_dir);
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (const TableRow& r : rows)
    j.push_back({{"label", r.label}, {"config", serialize(r.config)}, {"report", nlohmann::json::parse(report_json(r.report))}});
  write_file(join_path(out_dir, stem + ".json"), j.dump(2) + "\n");
  const std::string table = rows_table(rows);
  write_file(join_path(out_dir, stem + ".txt"), table);
  std::cout << table;
}

int cmd_ablate(const RunFlags& flags) {
  RunConfig base = flags.resolve();
  Corpus corpus = load_run_corpus(base, true);
  if (corpus.test.empty()) throw ConfigError("ablation needs a test corpus (--test)");
  auto rows = run_ablation(base, corpus, note);
  note("all variants trained with seed " + std::to_string(base.train.seed));
  write_rows(rows, base.out_dir, "ablation");
  return 0;
}

int cmd_sweep(const RunFlags& flags, const std::string& axis_name, std::vector<std::size_t> values) {
  auto axis = parse_sweep_axis(axis_name);
  if (!axis) throw ConfigError("--axis must be n, n_head or dim_ffd");
  if (values.empty()) values = sweep_grid(*axis);
  RunConfig base = flags.resolve();
  Corpus corpus = load_run_corpus(base, true);
  if (corpus.test.empty()) throw ConfigError("a sweep needs a test corpus (--test)");
  auto rows = run_sweep(*axis, values, base, corpus, note);
  write_rows(rows, base.out_dir, std::string("sweep_") + sweep_axis_name(*axis));
  return 0;
}

int cmd_index_build(const std::vector<std::string>& corpora, const std::string& out) {
  std::vector<Session> train;
  std::vector<TestSample> test;
  for (const std::string& path : corpora) {
    LoadedCorpus c = load_corpus(path, Split::test);
    test.insert(test.end(), c.samples.begin(), c.samples.end());
  }
  LexicalIndex index = LexicalIndex::build(utterance_pool(train, test));
  nlohmann::json j;
  j["k1"] = LexicalIndex::kK1;
  j["b"] = LexicalIndex::kB;
  j["documents"] = index.documents();
  write_file(out, j.dump() + "\n");
  std::cout << "indexed " << index.size() << " distinct utterances into " << out << '\n';
  return 0;
}

int cmd_index_query(const std::string& path, const std::string& text, std::size_t k,
                    const std::vector<std::size_t>& exclude) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed index file: " + std::string(e.what()));
  }
  LexicalIndex index = LexicalIndex::build(j.at("documents").get<std::vector<std::string>>());
  for (const Hit& h : index.query(text, k, {exclude.begin(), exclude.end()})) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%zu\t%.6f\t", h.id, h.score);
    std::cout << buf << index.document(h.id) << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Response selection with a self-attention comparison module"};
  app.require_subcommand(1);

  SynthFlags synth_flags;
  auto* synth = app.add_subcommand("synth", "generate a synthetic corpus (train.tsv, test.tsv)");
  synth->add_option("--kind", synth_flags.kind, "separable or comparison")->capture_default_str();
  synth->add_option("--seed", synth_flags.seed, "default 50");
  synth->add_option("--train-sessions", synth_flags.train_sessions, "default 2000");
  synth->add_option("--test-samples", synth_flags.test_samples, "default 500");
  synth->add_option("--topics", synth_flags.topics, "default 8 (separable), 4 (comparison)");
  synth->add_option("--keys", synth_flags.keys, "comparison corpus: number of key tokens, default 24");
  synth->add_option("--templates", synth_flags.templates,
                    "comparison corpus: response templates per topic, 0 = fresh per session; default 1");
  synth->add_option("--out", synth_flags.out, "output directory")->capture_default_str();

  RunFlags train_flags, ablate_flags, sweep_flags;
  auto* train = app.add_subcommand("train", "train a model; writes a checkpoint per epoch and loss.csv");
  train_flags.attach(train);

  EvalFlags eval_flags;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->add_option("--checkpoint", eval_flags.checkpoint)->required()->check(CLI::ExistingFile);
  eval->add_option("--test", eval_flags.test, "test corpus; defaults to the one recorded in the checkpoint");
  eval->add_option("--train", eval_flags.train, "training corpus added to the retrieval pool for --extend");
  eval->add_option("--extend", eval_flags.extend, "mine negatives up to m candidates (50..300)");
  eval->add_option("--cache", eval_flags.cache, "JSON-lines cache of mined candidates");
  eval->add_flag("--adversarial", eval_flags.adversarial, "replace one negative per sample with a context turn");
  eval->add_option("--adversarial-seed", eval_flags.adversarial_seed);
  eval->add_option("--report", eval_flags.report, "write the JSON report here");

  auto* ablate = app.add_subcommand("ablate", "full SCM vs. each removed submodule vs. no SCM");
  ablate_flags.attach(ablate);

  std::string axis;
  std::vector<std::size_t> values;
  auto* sweep = app.add_subcommand("sweep", "vary one comparison hyperparameter");
  sweep_flags.attach(sweep);
  sweep->add_option("--axis", axis, "n, n_head or dim_ffd")->required();
  sweep->add_option("--values", values, "grid values (default: the whole grid)")->delimiter(',');

  auto* index = app.add_subcommand("index", "lexical index over corpus utterances");
  index->require_subcommand(1);
  std::vector<std::string> index_inputs;
  std::string index_out = "index.json", index_path = "index.json", query_text;
  std::size_t query_k = 10;
  std::vector<std::size_t> query_exclude;
  auto* build = index->add_subcommand("build", "index every distinct utterance of the given TSV files");
  build->add_option("corpora", index_inputs)->required()->check(CLI::ExistingFile);
  build->add_option("--out", index_out)->capture_default_str();
  auto* query = index->add_subcommand("query", "BM25 top-k");
  query->add_option("--index", index_path)->capture_default_str();
  query->add_option("--text", query_text)->required();
  query->add_option("--k", query_k)->capture_default_str();
  query->add_option("--exclude", query_exclude, "document ids to skip")->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  }

  try {
    if (*synth) return cmd_synth(synth_flags);
    if (*train) return cmd_train(train_flags);
    if (*eval) return cmd_eval(eval_flags);
    if (*ablate) return cmd_ablate(ablate_flags);
    if (*sweep) return cmd_sweep(sweep_flags, axis, values);
    if (*build) return cmd_index_build(index_inputs, index_out);
    if (*query) return cmd_index_query(index_path, query_text, query_k, query_exclude);
  } catch (const ConfigError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}
