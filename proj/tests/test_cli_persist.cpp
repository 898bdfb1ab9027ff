#include "doctest.h"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sys/wait.h>

#include <json.hpp>

#include "scm/checkpoint.hpp"
#include "scm/errors.hpp"
#include "scm/experiment.hpp"

using namespace scm;
namespace fs = std::filesystem;

namespace {

RunConfig tiny_run(ModelKind kind = ModelKind::bi, ScmMode mode = ScmMode::full) {
  RunConfig c;
  c.model.kind = kind;
  c.model.scm = mode;
  c.model.encoder.d_model = 8;
  c.model.encoder.layers = 1;
  c.model.encoder.heads = 2;
  c.model.encoder.ffd = 16;
  c.model.encoder.max_len = 32;
  c.model.poly_m = 3;
  c.model.comparison = {8, 1, 2, 16};
  c.train.epochs = 1;
  c.train.batch_size = 8;
  return c;
}

Corpus tiny_corpus(SyntheticKind kind = SyntheticKind::separable) {
  SyntheticSpec spec;
  spec.kind = kind;
  spec.n_train = 48;
  spec.n_test = 12;
  SyntheticCorpus s = generate_synthetic(spec);
  return make_corpus(std::move(s.train), std::move(s.test));
}

std::string error_text(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.what();
  }
  return "";
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& f) const { return (path / f).string(); }
};

}  // namespace

TEST_CASE("default hyperparameters") {
  RunConfig c;
  CHECK(c.model.comparison.layers == 4);
  CHECK(c.model.comparison.heads == 8);
  CHECK(c.model.comparison.ffd == 512);
  CHECK(c.model.poly_m == 16);
  CHECK(c.model.encoder.max_len == 256);
  CHECK(c.model.dropout == 0.1);
  CHECK(c.train.batch_size == 16);
  CHECK(c.train.seed == 50);
  CHECK(c.train.epochs == 5);
  CHECK(c.train.lr_scm == 5e-4);
  CHECK(c.train.warmup_ratio == 0.1);
  CHECK(c.train.clip == 1.0);
  CHECK_NOTHROW(validate(c));
}

TEST_CASE("config text") {
  RunConfig c = tiny_run(ModelKind::poly, ScmMode::no_gate);
  c.train.lr_encoder = 0.1 + 0.2;  // not representable in short decimal form
  c.train_path = "data/train.tsv";
  c.out_dir = "runs/x";
  CHECK(parse_config(serialize(c)) == c);
  CHECK(parse_config(serialize(c)).train.lr_encoder == c.train.lr_encoder);

  RunConfig p = parse_config("# comment\n\nseed=7\n  epochs = 3 \nmodel=poly\n");
  CHECK(p.train.seed == 7);
  CHECK(p.train.epochs == 3);
  CHECK(p.model.kind == ModelKind::poly);

  CHECK_THROWS_AS(parse_config("colour=blue\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("seed=abc\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("scm=partial\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("seed\n"), ConfigError);

  SUBCASE("validation") {
    RunConfig bad = tiny_run();
    bad.model.comparison.heads = 3;
    CHECK_THROWS_AS(validate(bad), ConfigError);
    bad.model.scm = ScmMode::off;
    CHECK_NOTHROW(validate(bad));
    bad = tiny_run();
    bad.train.batch_size = 1;
    CHECK_THROWS_AS(validate(bad), ConfigError);
    bad = tiny_run(ModelKind::poly);
    bad.model.poly_m = 0;
    CHECK_THROWS_AS(validate(bad), ConfigError);
  }

  SUBCASE("hashes") {
    RunConfig a = tiny_run(), b = tiny_run();
    b.train_path = "elsewhere.tsv";
    CHECK(config_hash(a) == config_hash(b));
    b.model.comparison.layers = 2;
    CHECK(config_hash(a) != config_hash(b));
    CHECK(content_hash("abc") == "352441c2");
  }
}

TEST_CASE("checkpoint round trip") {
  const Corpus corpus = tiny_corpus();
  for (ModelKind kind : {ModelKind::bi, ModelKind::poly})
    for (ScmMode mode : {ScmMode::off, ScmMode::full, ScmMode::no_context_aware, ScmMode::no_gate}) {
      CAPTURE(model_kind_name(kind));
      CAPTURE(scm_mode_name(mode));
      RunConfig config = tiny_run(kind, mode);
      Model model(config.model, corpus_vocabulary(corpus), 3);
      const std::string bytes = encode_checkpoint(config, model);
      Checkpoint ck = decode_checkpoint(bytes);
      CHECK(ck.config == config);
      CHECK(ck.vocab == model.vocab());
      Model back = restore_model(ck);
      CHECK(encode_checkpoint(ck.config, back) == bytes);

      // evaluation is unchanged once the original is at checkpoint precision
      quantize_parameters(model);
      const RunMetadata meta = run_metadata(config, corpus.hash, "standard");
      CHECK(evaluate_model(model, corpus.test, meta) == evaluate_model(back, corpus.test, meta));
    }
}

TEST_CASE("checkpoint files") {
  TempDir dir("scm_ckpt_test");
  const Corpus corpus = tiny_corpus();
  RunConfig config = tiny_run();
  Model model(config.model, corpus_vocabulary(corpus), 3);
  save_checkpoint(dir / "a.scm", config, model);
  Model loaded = restore_model(load_checkpoint(dir / "a.scm"));
  save_checkpoint(dir / "b.scm", config, loaded);
  CHECK(read_file(dir / "a.scm") == read_file(dir / "b.scm"));

  const std::string bytes = read_file(dir / "a.scm");
  CHECK(bytes.substr(0, 4) == "SCM1");
  for (std::size_t cut : {std::size_t{0}, std::size_t{3}, std::size_t{11}, bytes.size() / 2, bytes.size() - 1})
    CHECK_THROWS_AS(decode_checkpoint(bytes.substr(0, cut)), ChecksumError);
  std::string flipped = bytes;
  flipped[bytes.size() / 2] ^= 0x10;
  CHECK_THROWS_AS(decode_checkpoint(flipped), ChecksumError);
  std::string other_version = bytes;
  other_version[4] = 2;
  CHECK_THROWS_AS(decode_checkpoint(other_version), MigrationError);
  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(decode_checkpoint(bad_magic), ChecksumError);
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.scm"), DataError);
}

TEST_CASE("tensor inventory") {
  const Corpus corpus = tiny_corpus();
  RunConfig config = tiny_run();
  Model model(config.model, corpus_vocabulary(corpus), 3);
  Checkpoint ck = decode_checkpoint(encode_checkpoint(config, model));

  SUBCASE("missing") {
    auto t = ck.tensors;
    const std::string name = t[3].name;
    t.erase(t.begin() + 3);
    const std::string err = error_text([&] { apply_tensors(model, t); });
    CHECK(err.find(name) != std::string::npos);
    CHECK_THROWS_AS(apply_tensors(model, t), InventoryError);
  }
  SUBCASE("duplicate") {
    auto t = ck.tensors;
    t.push_back(t[0]);
    CHECK(error_text([&] { apply_tensors(model, t); }).find(t[0].name) != std::string::npos);
  }
  SUBCASE("unexpected") {
    auto t = ck.tensors;
    t.push_back({"scm.extra", Tensor({2})});
    CHECK(error_text([&] { apply_tensors(model, t); }).find("scm.extra") != std::string::npos);
  }
  SUBCASE("mis-shaped") {
    auto t = ck.tensors;
    t[1].value = Tensor({1, 1});
    CHECK(error_text([&] { apply_tensors(model, t); }).find(t[1].name) != std::string::npos);
  }
  SUBCASE("a checkpoint for another configuration") {
    RunConfig gated = config;
    gated.model.scm = ScmMode::no_gate;
    Model other(gated.model, corpus_vocabulary(corpus), 3);
    const std::string err = error_text([&] { apply_tensors(other, ck.tensors); });
    CHECK(err.find("scm.gate") != std::string::npos);
  }
}

TEST_CASE("ablation and sweep drivers") {
  const Corpus corpus = tiny_corpus(SyntheticKind::comparison);
  RunConfig base = tiny_run();
  auto rows = run_ablation(base, corpus);
  REQUIRE(rows.size() == 4);
  CHECK(rows[0].label == "bi-encoder+SCM");
  CHECK(rows[1].label == "-{context-aware}");
  CHECK(rows[2].label == "-gated");
  CHECK(rows[3].label == "bi-encoder");
  for (const TableRow& r : rows) CHECK(r.report.meta.seed == base.train.seed);
  CHECK(rows[1].config.model.scm == ScmMode::no_context_aware);
  CHECK(rows[2].config.model.scm == ScmMode::no_gate);

  base.model.kind = ModelKind::poly;
  CHECK(run_ablation(base, corpus)[0].label == "poly-encoder+SCM");

  base = tiny_run();
  auto sweep = run_sweep(SweepAxis::n, {2}, base, corpus);
  REQUIRE(sweep.size() == 2);
  CHECK(sweep[1].label == "n=2");
  CHECK(sweep[1].config.model.comparison.layers == 2);
  CHECK(sweep[1].config.model.comparison.heads == 8);
  CHECK(sweep[1].config.model.comparison.ffd == 512);
  CHECK(sweep[0].config.model.scm == ScmMode::off);
  auto ffd = run_sweep(SweepAxis::dim_ffd, {128}, base, corpus);
  CHECK(ffd[1].config.model.comparison.layers == 4);
  CHECK(ffd[1].config.model.comparison.heads == 8);
  CHECK(ffd[1].config.model.comparison.ffd == 128);
  CHECK(ffd[0].report.meta.seed == ffd[1].report.meta.seed);
  CHECK_THROWS_AS(run_sweep(SweepAxis::n_head, {3}, base, corpus), ConfigError);
}

// ---------------------------------------------------------------------------
// Command line

namespace {

int run_cli(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + " " + SCM_CLI_PATH + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

const std::string kTinyFlags =
    " --d-model 8 --enc-layers 1 --enc-heads 2 --enc-ffd 16 --max-len 32 --n 1 --n-head 2 --dim-ffd 16"
    " --epochs 1 --batch-size 8";

}  // namespace

TEST_CASE("command line") {
  TempDir dir("scm_cli_test");
  const std::string data = dir / "data";
  REQUIRE(run_cli("synth --seed 3 --train-sessions 48 --test-samples 12 --out " + data) == 0);
  const std::string corpus = " --train " + data + "/train.tsv --test " + data + "/test.tsv";

  SUBCASE("usage errors exit with 2 before any work") {
    CHECK(run_cli("") == 2);
    CHECK(run_cli("frobnicate") == 2);
    CHECK(run_cli("train --scm off --n 2 --train /nonexistent.tsv") == 2);
    CHECK(run_cli("train --model bi --poly-m 4 --train /nonexistent.tsv") == 2);
    CHECK(run_cli("train --enc-heads 5 --train /nonexistent.tsv") == 2);
    CHECK(run_cli("sweep --axis depth" + corpus) == 2);
    CHECK(run_cli("synth --kind mixed --out " + data) == 2);
  }

  SUBCASE("data errors exit with 3") {
    CHECK(run_cli("train --train /nonexistent.tsv") == 3);
    write_file(dir / "broken.tsv", "1\tonly\n");
    CHECK(run_cli("train --train " + dir / "broken.tsv") == 3);
    write_file(dir / "garbage.scm", "SCM1 not really");
    CHECK(run_cli("eval --checkpoint " + dir / "garbage.scm" + " --test " + data + "/test.tsv") == 3);
  }

  SUBCASE("numeric failure exits with 4") {
    CHECK(run_cli("train" + corpus + kTinyFlags + " --lr-encoder 1e300 --lr-scm 1e300 --out " +
                  dir / "nan") == 4);
  }

  SUBCASE("train, then evaluate under every protocol") {
    const std::string out = dir / "run";
    REQUIRE(run_cli("train" + corpus + kTinyFlags + " --out " + out) == 0);
    for (const char* f : {"config.txt", "checkpoint_epoch1.scm", "checkpoint.scm", "loss.csv", "report.json"})
      CHECK(fs::exists(fs::path(out) / f));
    const EvalReport trained = parse_report_json(read_file(out + "/report.json"));
    CHECK(trained.n == 10);
    CHECK(trained.samples == 12);
    CHECK(read_file(out + "/loss.csv").rfind("epoch,step,loss\n", 0) == 0);

    REQUIRE(run_cli("eval --checkpoint " + out + "/checkpoint.scm --report " + dir / "std.json") == 0);
    CHECK(parse_report_json(read_file(dir / "std.json")) == trained);

    REQUIRE(run_cli("eval --checkpoint " + out + "/checkpoint.scm --extend 50 --cache " + dir / "mined.jsonl" +
                    " --report " + dir / "ext.json") == 0);
    const std::string ext = read_file(dir / "ext.json");
    CHECK(ext.find("\"R_50@1\"") != std::string::npos);
    CHECK(parse_report_json(ext).meta.protocol == "extended");
    CHECK(fs::exists(dir / "mined.jsonl"));
    REQUIRE(run_cli("eval --checkpoint " + out + "/checkpoint.scm --extend 50 --cache " + dir / "mined.jsonl" +
                    " --report " + dir / "ext2.json") == 0);
    CHECK(read_file(dir / "ext2.json") == ext);
    CHECK(run_cli("eval --checkpoint " + out + "/checkpoint.scm --extend 70") == 2);

    REQUIRE(run_cli("eval --checkpoint " + out + "/checkpoint.scm --adversarial --report " + dir / "adv.json") == 0);
    const EvalReport adv = parse_report_json(read_file(dir / "adv.json"));
    CHECK(adv.samples == trained.samples);
    CHECK(adv.meta.protocol == "adversarial");

    std::string bytes = read_file(out + "/checkpoint.scm");
    bytes.resize(bytes.size() - 9);
    write_file(dir / "cut.scm", bytes);
    CHECK(run_cli("eval --checkpoint " + dir / "cut.scm") == 3);
  }

  SUBCASE("reruns are byte-identical and the seed precedence holds") {
    // the output directory is recorded in the checkpoint, so both runs use the same one
    REQUIRE(run_cli("train" + corpus + kTinyFlags + " --out " + dir / "r") == 0);
    const std::string ckpt = read_file(dir / "r/checkpoint.scm"), report = read_file(dir / "r/report.json");
    REQUIRE(run_cli("train" + corpus + kTinyFlags + " --out " + dir / "r") == 0);
    CHECK(read_file(dir / "r/checkpoint.scm") == ckpt);
    CHECK(read_file(dir / "r/report.json") == report);

    write_file(dir / "seed.cfg", "seed=11\n");
    REQUIRE(run_cli("train" + corpus + kTinyFlags + " --config " + dir / "seed.cfg" + " --out " + dir / "c") == 0);
    CHECK(parse_config(read_file(dir / "c/config.txt")).train.seed == 11);
    REQUIRE(run_cli("train" + corpus + kTinyFlags + " --config " + dir / "seed.cfg" + " --out " + dir / "e",
                    "SCM_SEED=12") == 0);
    CHECK(parse_config(read_file(dir / "e/config.txt")).train.seed == 12);
    REQUIRE(run_cli("train" + corpus + kTinyFlags + " --seed 13 --out " + dir / "f", "SCM_SEED=12") == 0);
    CHECK(parse_config(read_file(dir / "f/config.txt")).train.seed == 13);
  }

  SUBCASE("ablate writes the four-row table") {
    REQUIRE(run_cli("ablate" + corpus + kTinyFlags + " --out " + dir / "abl") == 0);
    const auto rows = nlohmann::json::parse(read_file(dir / "abl/ablation.json"));
    REQUIRE(rows.size() == 4);
    CHECK(rows[1]["label"] == "-{context-aware}");
    CHECK(rows[2]["label"] == "-gated");
    const std::string table = read_file(dir / "abl/ablation.txt");
    CHECK(std::count(table.begin(), table.end(), '\n') == 5);
  }

  SUBCASE("index build and query") {
    REQUIRE(run_cli("index build " + data + "/train.tsv " + data + "/test.tsv --out " + dir / "idx.json") == 0);
    const auto idx = nlohmann::json::parse(read_file(dir / "idx.json"));
    CHECK(idx["documents"].size() > 12);
    CHECK(run_cli("index query --index " + dir / "idx.json" + " --text 't1w3 f2' --k 5") == 0);
    CHECK(run_cli("index query --index " + dir / "idx.json" + " --text 't1w3' --k 100000") == 3);
  }
}
