#include "scm/config.hpp"

#include <charconv>
#include <cstdio>
#include <sstream>

#include <zlib.h>

#include "scm/errors.hpp"

namespace scm {

bool operator==(const RunConfig& a, const RunConfig& b) { return serialize(a) == serialize(b); }

void validate(const RunConfig& c) {
  const ModelConfig& m = c.model;
  if (m.encoder.d_model == 0) throw ConfigError("d_model must be positive");
  if (m.encoder.layers == 0) throw ConfigError("encoders need at least one layer");
  if (m.encoder.heads == 0 || m.encoder.d_model % m.encoder.heads != 0)
    throw ConfigError("d_model " + std::to_string(m.encoder.d_model) + " is not divisible by enc_heads " +
                      std::to_string(m.encoder.heads));
  if (m.encoder.max_len < 3) throw ConfigError("max_len must leave room for [CLS], [SEP] and one token");
  if (m.kind == ModelKind::poly && m.poly_m == 0) throw ConfigError("the poly-encoder needs poly_m >= 1");
  if (m.scm != ScmMode::off) {
    if (m.comparison.layers == 0) throw ConfigError("the comparison module needs n >= 1");
    if (m.comparison.heads == 0 || m.encoder.d_model % m.comparison.heads != 0)
      throw ConfigError("d_model " + std::to_string(m.encoder.d_model) + " is not divisible by n_head " +
                        std::to_string(m.comparison.heads));
    if (m.comparison.ffd == 0) throw ConfigError("dim_ffd must be positive");
  }
  if (m.dropout < 0.0 || m.dropout >= 1.0) throw ConfigError("dropout must lie in [0, 1)");
  if (c.train.batch_size < 2) throw ConfigError("batch_size must be at least 2 for in-batch negatives");
  if (c.train.epochs == 0) throw ConfigError("epochs must be positive");
  if (c.train.lr_encoder < 0.0 || c.train.lr_scm < 0.0) throw ConfigError("learning rates must be nonnegative");
  if (c.train.warmup_ratio < 0.0 || c.train.warmup_ratio > 1.0) throw ConfigError("warmup_ratio must lie in [0, 1]");
}

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <typename T>
T parse_number(std::string_view key, std::string_view value) {
  T out{};
  auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || ptr != value.data() + value.size())
    throw ConfigError("invalid value '" + std::string(value) + "' for " + std::string(key));
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::string model_lines(const RunConfig& c) {
  const ModelConfig& m = c.model;
  std::ostringstream o;
  o << "model=" << model_kind_name(m.kind) << '\n'
    << "scm=" << scm_mode_name(m.scm) << '\n'
    << "d_model=" << m.encoder.d_model << '\n'
    << "enc_layers=" << m.encoder.layers << '\n'
    << "enc_heads=" << m.encoder.heads << '\n'
    << "enc_ffd=" << m.encoder.ffd << '\n'
    << "max_len=" << m.encoder.max_len << '\n'
    << "pooling=" << (m.encoder.pooling == Pooling::cls ? "cls" : "mean") << '\n'
    << "poly_m=" << m.poly_m << '\n'
    << "n=" << m.comparison.layers << '\n'
    << "n_head=" << m.comparison.heads << '\n'
    << "dim_ffd=" << m.comparison.ffd << '\n'
    << "dropout=" << fmt(m.dropout) << '\n'
    << "batch_size=" << c.train.batch_size << '\n'
    << "epochs=" << c.train.epochs << '\n'
    << "seed=" << c.train.seed << '\n'
    << "lr_encoder=" << fmt(c.train.lr_encoder) << '\n'
    << "lr_scm=" << fmt(c.train.lr_scm) << '\n'
    << "warmup_ratio=" << fmt(c.train.warmup_ratio) << '\n'
    << "clip=" << fmt(c.train.clip) << '\n';
  return o.str();
}

}  // namespace

std::string serialize(const RunConfig& c) {
  return model_lines(c) + "train=" + c.train_path + "\ntest=" + c.test_path + "\nout=" + c.out_dir + "\n";
}

void apply_setting(RunConfig& c, std::string_view key, std::string_view value) {
  ModelConfig& m = c.model;
  auto size = [&] { return parse_number<std::size_t>(key, value); };
  auto real = [&] { return parse_number<double>(key, value); };
  if (key == "model") {
    auto k = parse_model_kind(value);
    if (!k) throw ConfigError("model must be bi or poly, got '" + std::string(value) + "'");
    m.kind = *k;
  } else if (key == "scm") {
    auto s = parse_scm_mode(value);
    if (!s) throw ConfigError("scm must be off, full, no_context_aware or no_gate, got '" + std::string(value) + "'");
    m.scm = *s;
  } else if (key == "d_model") {
    m.encoder.d_model = size();
  } else if (key == "enc_layers") {
    m.encoder.layers = size();
  } else if (key == "enc_heads") {
    m.encoder.heads = size();
  } else if (key == "enc_ffd") {
    m.encoder.ffd = size();
  } else if (key == "max_len") {
    m.encoder.max_len = size();
  } else if (key == "pooling") {
    if (value == "cls") m.encoder.pooling = Pooling::cls;
    else if (value == "mean") m.encoder.pooling = Pooling::mean;
    else throw ConfigError("pooling must be cls or mean");
  } else if (key == "poly_m") {
    m.poly_m = size();
  } else if (key == "n") {
    m.comparison.layers = size();
  } else if (key == "n_head") {
    m.comparison.heads = size();
  } else if (key == "dim_ffd") {
    m.comparison.ffd = size();
  } else if (key == "dropout") {
    m.dropout = real();
  } else if (key == "batch_size") {
    c.train.batch_size = size();
  } else if (key == "epochs") {
    c.train.epochs = size();
  } else if (key == "seed") {
    c.train.seed = parse_number<std::uint64_t>(key, value);
  } else if (key == "lr_encoder") {
    c.train.lr_encoder = real();
  } else if (key == "lr_scm") {
    c.train.lr_scm = real();
  } else if (key == "warmup_ratio") {
    c.train.warmup_ratio = real();
  } else if (key == "clip") {
    c.train.clip = real();
  } else if (key == "train") {
    c.train_path = std::string(value);
  } else if (key == "test") {
    c.test_path = std::string(value);
  } else if (key == "out") {
    c.out_dir = std::string(value);
  } else {
    throw ConfigError("unknown config key '" + std::string(key) + "'");
  }
}

RunConfig parse_config(std::string_view text, RunConfig base) {
  std::size_t pos = 0, line_no = 0;
  while (pos <= text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = trim(text.substr(pos, end - pos));
    pos = end + 1;
    ++line_no;
    if (line.empty() || line.front() == '#') continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string_view::npos)
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key=value");
    apply_setting(base, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return base;
}

std::string content_hash(std::string_view bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed large inputs in pieces.
  while (!bytes.empty()) {
    const std::size_t n = std::min<std::size_t>(bytes.size(), 1u << 30);
    crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(n));
    bytes.remove_prefix(n);
  }
  char buf[16];
  std::snprintf(buf, sizeof buf, "%08lx", static_cast<unsigned long>(crc));
  return buf;
}

std::string config_hash(const RunConfig& c) { return content_hash(model_lines(c)); }

}  // namespace scm
