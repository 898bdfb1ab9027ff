#include "scm/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include <json.hpp>

#include "scm/errors.hpp"

namespace scm {

std::size_t gold_rank(const std::vector<double>& degrees, std::size_t gold) {
  if (gold >= degrees.size())
    throw IndexError("gold index " + std::to_string(gold) + " outside " + std::to_string(degrees.size()) +
                     " candidates");
  const double g = degrees[gold];
  if (!std::isfinite(g)) throw NumericError("gold degree is not finite");
  std::size_t rank = 1;
  for (std::size_t i = 0; i < degrees.size(); ++i) {
    if (i == gold) continue;
    if (!std::isfinite(degrees[i])) throw NumericError("candidate degree is not finite");
    if (degrees[i] >= g) ++rank;
  }
  return rank;
}

double recall_at_k(const std::vector<std::size_t>& ranks, std::size_t k) {
  if (ranks.empty()) throw DataError("recall over an empty rank list");
  std::size_t hit = 0;
  for (std::size_t r : ranks) hit += r <= k;
  return static_cast<double>(hit) / static_cast<double>(ranks.size());
}

double mrr(const std::vector<std::size_t>& ranks) {
  if (ranks.empty()) throw DataError("MRR over an empty rank list");
  double s = 0.0;
  for (std::size_t r : ranks) s += 1.0 / static_cast<double>(r);
  return s / static_cast<double>(ranks.size());
}

double EvalReport::recall_at(std::size_t k) const {
  for (std::size_t i = 0; i < ks.size(); ++i)
    if (ks[i] == k) return recall[i];
  throw IndexError("report has no R@" + std::to_string(k));
}

EvalReport make_report(std::vector<std::size_t> ranks, std::size_t n, RunMetadata meta) {
  EvalReport r;
  r.n = n;
  r.ks = kReportKs;
  for (std::size_t k : r.ks) r.recall.push_back(recall_at_k(ranks, k));
  r.mrr = mrr(ranks);
  r.samples = ranks.size();
  r.ranks = std::move(ranks);
  r.meta = std::move(meta);
  return r;
}

EvalReport evaluate(const std::vector<TestSample>& samples, const Scorer& scorer, RunMetadata meta) {
  if (samples.empty()) throw DataError("evaluation set is empty");
  const std::size_t n = samples.front().candidates.size();
  std::vector<std::size_t> ranks;
  ranks.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const TestSample& s = samples[i];
    try {
      validate(s);
    } catch (const DataError& e) {
      throw DataError("sample " + std::to_string(i) + ": " + e.what());
    }
    if (s.candidates.size() != n)
      throw DataError("sample " + std::to_string(i) + " has " + std::to_string(s.candidates.size()) +
                      " candidates, expected " + std::to_string(n));
    const std::vector<double> degrees = scorer(s);
    if (degrees.size() != n) throw DimensionError("scorer returned the wrong number of degrees");
    ranks.push_back(gold_rank(degrees, s.gold_index()));
  }
  return make_report(std::move(ranks), n, std::move(meta));
}

std::string report_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["meta"] = {{"model", r.meta.model},
               {"ablation", r.meta.ablation},
               {"seed", r.meta.seed},
               {"random_init", r.meta.random_init},
               {"protocol", r.meta.protocol},
               {"config_hash", r.meta.config_hash},
               {"corpus_hash", r.meta.corpus_hash}};
  j["n"] = r.n;
  j["samples"] = r.samples;
  nlohmann::ordered_json recall;
  for (std::size_t i = 0; i < r.ks.size(); ++i) recall["R_" + std::to_string(r.n) + "@" + std::to_string(r.ks[i])] = r.recall[i];
  j["recall"] = recall;
  j["mrr"] = r.mrr;
  j["ranks"] = r.ranks;
  return j.dump(2) + "\n";
}

EvalReport parse_report_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    RunMetadata meta;
    const auto& m = j.at("meta");
    meta.model = m.at("model").get<std::string>();
    meta.ablation = m.at("ablation").get<std::string>();
    meta.seed = m.at("seed").get<std::uint64_t>();
    meta.random_init = m.at("random_init").get<bool>();
    meta.protocol = m.at("protocol").get<std::string>();
    meta.config_hash = m.at("config_hash").get<std::string>();
    meta.corpus_hash = m.at("corpus_hash").get<std::string>();
    return make_report(j.at("ranks").get<std::vector<std::size_t>>(), j.at("n").get<std::size_t>(), meta);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed report: ") + e.what());
  }
}

std::string report_table(const std::vector<std::string>& labels, const std::vector<EvalReport>& reports) {
  if (labels.size() != reports.size()) throw DimensionError("report_table: one label per report");
  if (reports.empty()) return {};
  const std::size_t n = reports.front().n;
  std::vector<std::size_t> cols = {1, 2, 5};
  if (n > 10) cols.push_back(10);

  std::size_t label_w = 5;
  for (const std::string& l : labels) label_w = std::max(label_w, l.size());
  const std::string ns = std::to_string(n);
  const std::size_t col_w = std::max<std::size_t>(7, ns.size() + 5);

  std::ostringstream out;
  auto pad = [&](const std::string& s, std::size_t w, bool left) {
    std::string p(w > s.size() ? w - s.size() : 0, ' ');
    out << (left ? s + p : p + s);
  };
  pad("model", label_w, true);
  for (std::size_t k : cols) {
    out << "  ";
    pad("R_" + ns + "@" + std::to_string(k), col_w, false);
  }
  out << "  ";
  pad("MRR", col_w, false);
  out << '\n';
  char buf[32];
  for (std::size_t i = 0; i < reports.size(); ++i) {
    pad(labels[i], label_w, true);
    for (std::size_t k : cols) {
      std::snprintf(buf, sizeof buf, "%.3f", reports[i].recall_at(k));
      out << "  ";
      pad(buf, col_w, false);
    }
    std::snprintf(buf, sizeof buf, "%.3f", reports[i].mrr);
    out << "  ";
    pad(buf, col_w, false);
    out << '\n';
  }
  return out.str();
}

}  // namespace scm
