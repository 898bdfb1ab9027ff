#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "scm/data.hpp"

namespace scm {

/// 1 + #negatives scoring above the gold + #negatives tying with it.
std::size_t gold_rank(const std::vector<double>& degrees, std::size_t gold);

double recall_at_k(const std::vector<std::size_t>& ranks, std::size_t k);
double mrr(const std::vector<std::size_t>& ranks);

struct RunMetadata {
  std::string model;     // e.g. "bi+scm"
  std::string ablation;  // full, no_context_aware, no_gate, off
  std::uint64_t seed = 0;
  bool random_init = false;
  std::string protocol = "standard";  // standard, extended, adversarial
  std::string config_hash;
  std::string corpus_hash;

  friend bool operator==(const RunMetadata&, const RunMetadata&) = default;
};

struct EvalReport {
  std::size_t n = 0;  // candidates per sample
  std::vector<std::size_t> ks;
  std::vector<double> recall;  // aligned with ks
  double mrr = 0.0;
  std::vector<std::size_t> ranks;
  std::size_t samples = 0;
  RunMetadata meta;

  double recall_at(std::size_t k) const;
  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

inline const std::vector<std::size_t> kReportKs = {1, 2, 5, 10};

EvalReport make_report(std::vector<std::size_t> ranks, std::size_t n, RunMetadata meta);

using Scorer = std::function<std::vector<double>(const TestSample&)>;

/// Scores every sample and aggregates. Every sample must hold exactly one
/// positive and the same number of candidates (DataError otherwise).
EvalReport evaluate(const std::vector<TestSample>& samples, const Scorer& scorer, RunMetadata meta);

std::string report_json(const EvalReport& report);
EvalReport parse_report_json(const std::string& text);

/// Aligned table, one row per report: R_n@1, R_n@2, R_n@5, R_n@10 (only when
/// n > 10) and MRR, with n taken from the first report.
std::string report_table(const std::vector<std::string>& labels, const std::vector<EvalReport>& reports);

}  // namespace scm
