#pragma once

// Classification metrics, decision-point correlations and the two
// non-neural baselines (TF-IDF + logistic regression, k-NN retrieval).

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "bgmhan/error.hpp"
#include "bgmhan/profile.hpp"
#include "bgmhan/training.hpp"

namespace bgmhan {

struct MetricReport {
  std::size_t n = 0;
  std::size_t tn = 0, fp = 0, fn = 0, tp = 0;
  double accuracy = 0;
  double precision_macro = 0;
  double recall_macro = 0;
  double f1_macro = 0;
  std::array<double, 2> precision{}, recall{}, f1{};  // per class 0, 1

  bool operator==(const MetricReport&) const = default;
};

namespace detail {
inline double ratio(std::size_t a, std::size_t b) { return b == 0 ? 0.0 : static_cast<double>(a) / static_cast<double>(b); }
inline double harmonic(double p, double r) { return p + r == 0 ? 0.0 : 2 * p * r / (p + r); }
}  // namespace detail

inline MetricReport metrics(std::span<const int> preds, std::span<const int> labels) {
  if (preds.size() != labels.size()) throw UsageError("metrics: predictions and labels differ in length");
  if (preds.empty()) throw UsageError("metrics: no predictions");
  MetricReport r;
  r.n = preds.size();
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if ((preds[i] != 0 && preds[i] != 1) || (labels[i] != 0 && labels[i] != 1)) {
      throw UsageError("metrics: values must be 0 or 1");
    }
    if (labels[i]) {
      preds[i] ? ++r.tp : ++r.fn;
    } else {
      preds[i] ? ++r.fp : ++r.tn;
    }
  }
  r.accuracy = detail::ratio(r.tp + r.tn, r.n);
  r.precision = {detail::ratio(r.tn, r.tn + r.fn), detail::ratio(r.tp, r.tp + r.fp)};
  r.recall = {detail::ratio(r.tn, r.tn + r.fp), detail::ratio(r.tp, r.tp + r.fn)};
  for (int c = 0; c < 2; ++c) r.f1[c] = detail::harmonic(r.precision[c], r.recall[c]);
  r.precision_macro = (r.precision[0] + r.precision[1]) / 2;
  r.recall_macro = (r.recall[0] + r.recall[1]) / 2;
  r.f1_macro = (r.f1[0] + r.f1[1]) / 2;
  return r;
}

inline nlohmann::json to_json(const MetricReport& r) {
  return {{"n", r.n},
          {"accuracy", r.accuracy},
          {"precision_macro", r.precision_macro},
          {"recall_macro", r.recall_macro},
          {"f1_macro", r.f1_macro},
          {"confusion", {{"tn", r.tn}, {"fp", r.fp}, {"fn", r.fn}, {"tp", r.tp}}}};
}

inline MetricReport metric_report_from_json(const nlohmann::json& j) {
  std::vector<int> preds, labels;
  const auto& c = j.at("confusion");
  auto add = [&](const char* key, int p, int y) {
    for (std::size_t i = 0; i < c.at(key).get<std::size_t>(); ++i) {
      preds.push_back(p);
      labels.push_back(y);
    }
  };
  add("tn", 0, 0);
  add("fp", 1, 0);
  add("fn", 0, 1);
  add("tp", 1, 1);
  return metrics(preds, labels);
}

// Fixed-width text table.
inline void write_metric_table(std::ostream& out, const MetricReport& r) {
  char buf[128];
  auto row = [&](const char* name, double v) {
    std::snprintf(buf, sizeof buf, "%-16s %.6f\n", name, v);
    out << buf;
  };
  std::snprintf(buf, sizeof buf, "%-16s %zu\n", "n", r.n);
  out << buf;
  row("accuracy", r.accuracy);
  row("precision_macro", r.precision_macro);
  row("recall_macro", r.recall_macro);
  row("f1_macro", r.f1_macro);
  std::snprintf(buf, sizeof buf, "%-16s TN=%zu FP=%zu FN=%zu TP=%zu\n", "confusion", r.tn, r.fp, r.fn, r.tp);
  out << buf;
}

// ---------------------------------------------------------------------------
// Correlation

// Pearson r; empty when either column is constant.
inline std::optional<double> pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw UsageError("pearson: need two equal-length columns of length >= 2");
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0 || syy == 0) return std::nullopt;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

struct CorrelationMatrix {
  std::array<std::string, 6> labels;
  std::array<std::array<std::optional<double>, 6>, 6> values;
};

inline CorrelationMatrix correlation_matrix(const std::vector<DecisionRecord>& records) {
  if (records.size() < 2) throw UsageError("correlation_matrix: need at least 2 records");
  std::array<std::vector<double>, 6> cols;
  for (const auto& r : records)
    for (std::size_t k = 0; k < 6; ++k) cols[k].push_back(r.scores[k]);
  CorrelationMatrix m;
  for (std::size_t k = 0; k < 6; ++k) m.labels[k] = std::string(kDecisionPoints[k]);
  for (std::size_t a = 0; a < 6; ++a) {
    for (std::size_t b = a; b < 6; ++b) {
      auto r = pearson(cols[a], cols[b]);
      if (a == b && r) r = 1.0;
      m.values[a][b] = m.values[b][a] = r;
    }
  }
  return m;
}

// CSV with "NA" for undefined entries.
inline void write_correlation_csv(std::ostream& out, const CorrelationMatrix& m) {
  out << "label";
  for (const auto& l : m.labels) out << ',' << l;
  out << '\n';
  char buf[64];
  for (std::size_t a = 0; a < 6; ++a) {
    out << m.labels[a];
    for (std::size_t b = 0; b < 6; ++b) {
      if (m.values[a][b]) {
        std::snprintf(buf, sizeof buf, "%.17g", *m.values[a][b]);
        out << ',' << buf;
      } else {
        out << ",NA";
      }
    }
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// TF-IDF

using SparseVector = std::vector<std::pair<std::uint32_t, double>>;  // sorted by index

// Lowercased alphanumeric runs.
inline std::vector<std::string> word_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (const char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c) || c >= 0x80) {
      cur += static_cast<char>(std::tolower(c));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

class TfidfVectorizer {
 public:
  // idf(t) = ln((1 + N) / (1 + df(t))) + 1
  void fit(std::span<const std::string> docs) {
    terms_.clear();
    idf_.clear();
    std::map<std::string, std::size_t> df;
    for (const auto& d : docs) {
      auto toks = word_tokens(d);
      std::sort(toks.begin(), toks.end());
      toks.erase(std::unique(toks.begin(), toks.end()), toks.end());
      for (auto& t : toks) ++df[t];
    }
    if (df.empty()) throw UsageError("tfidf: empty vocabulary");
    const double n = static_cast<double>(docs.size());
    for (const auto& [t, c] : df) {
      terms_.emplace(t, static_cast<std::uint32_t>(idf_.size()));
      idf_.push_back(std::log((1 + n) / (1 + static_cast<double>(c))) + 1);
    }
  }

  // Raw counts times idf, L2-normalized; unseen terms are dropped.
  SparseVector transform(std::string_view doc) const {
    std::map<std::uint32_t, double> counts;
    for (const auto& t : word_tokens(doc)) {
      const auto it = terms_.find(t);
      if (it != terms_.end()) counts[it->second] += 1;
    }
    SparseVector v;
    double norm = 0;
    for (const auto& [i, c] : counts) {
      v.emplace_back(i, c * idf_[i]);
      norm += v.back().second * v.back().second;
    }
    if (norm > 0) {
      norm = std::sqrt(norm);
      for (auto& [i, x] : v) x /= norm;
    }
    return v;
  }

  std::size_t size() const { return idf_.size(); }
  std::optional<double> idf(const std::string& term) const {
    const auto it = terms_.find(term);
    if (it == terms_.end()) return std::nullopt;
    return idf_[it->second];
  }

 private:
  std::unordered_map<std::string, std::uint32_t> terms_;
  std::vector<double> idf_;
};

inline std::string profile_document(const Profile& p) {
  const auto f = impute_missing(p);
  std::string out;
  for (const auto field : kProfileFields) {
    out += field_text(f, field);
    out += '\n';
  }
  return out;
}

struct LogisticRegression {
  std::vector<double> w;
  double b = 0;

  double prob(const SparseVector& x) const {
    double z = b;
    for (const auto& [i, v] : x) z += w[i] * v;
    return 1.0 / (1.0 + std::exp(-z));
  }
};

struct LogRegOptions {
  double lr = 10.0;
  std::size_t iterations = 2000;
  double l2 = 0.0;
  bool class_weighting = true;
};

// Full-batch gradient descent on the mean weighted cross-entropy.
inline LogisticRegression fit_logreg(const std::vector<SparseVector>& xs, std::span<const int> ys, std::size_t dim,
                                     const LogRegOptions& opt = {}) {
  if (xs.size() != ys.size() || xs.empty()) throw UsageError("logistic regression: bad training set");
  const auto cw = opt.class_weighting ? class_weights(ys) : std::array<double, 2>{1.0, 1.0};
  LogisticRegression m;
  m.w.assign(dim, 0.0);
  const double n = static_cast<double>(xs.size());
  std::vector<double> gw(dim);
  for (std::size_t it = 0; it < opt.iterations; ++it) {
    std::fill(gw.begin(), gw.end(), 0.0);
    double gb = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      // d/dz of the weighted CE through the sigmoid.
      const double r = cw[ys[i]] * (m.prob(xs[i]) - ys[i]) / n;
      for (const auto& [j, v] : xs[i]) gw[j] += r * v;
      gb += r;
    }
    for (std::size_t j = 0; j < dim; ++j) m.w[j] -= opt.lr * (gw[j] + 2 * opt.l2 * m.w[j]);
    m.b -= opt.lr * gb;
  }
  return m;
}

struct BaselineResult {
  std::vector<int> predictions;
  MetricReport report;
};

inline BaselineResult tfidf_logreg(const std::vector<Profile>& train, const std::vector<Profile>& test,
                                   const LogRegOptions& opt = {}) {
  std::vector<std::string> docs;
  std::vector<int> ys;
  for (const auto& p : train) {
    if (!p.label) throw UsageError("tfidf_logreg: training profile '" + p.id + "' has no label");
    docs.push_back(profile_document(p));
    ys.push_back(*p.label);
  }
  TfidfVectorizer vec;
  vec.fit(docs);
  std::vector<SparseVector> xs;
  for (const auto& d : docs) xs.push_back(vec.transform(d));
  const auto model = fit_logreg(xs, ys, vec.size(), opt);
  BaselineResult r;
  std::vector<int> labels;
  for (const auto& p : test) {
    if (!p.label) throw UsageError("tfidf_logreg: test profile '" + p.id + "' has no label");
    r.predictions.push_back(decide(model.prob(vec.transform(profile_document(p)))));
    labels.push_back(*p.label);
  }
  r.report = metrics(r.predictions, labels);
  return r;
}

// ---------------------------------------------------------------------------
// k-NN

enum class Distance { kL2, kCosine };

inline double distance(std::span<const double> a, std::span<const double> b, Distance metric) {
  if (a.size() != b.size()) throw DimensionError("knn: vectors differ in length");
  if (metric == Distance::kL2) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
  }
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0 || nb == 0) return 1.0;
  return 1.0 - dot / std::sqrt(na * nb);
}

// Majority vote among the k nearest (ties on distance go to the lower train
// index). A tied vote is retried with k-1, k-2, ... and falls back to 0.
inline int knn_predict(const std::vector<std::vector<double>>& train, std::span<const int> labels,
                       std::span<const double> query, std::size_t k, Distance metric) {
  if (k == 0 || k > train.size()) throw UsageError("knn: k must lie in [1, train size]");
  if (labels.size() != train.size()) throw UsageError("knn: label count mismatch");
  std::vector<std::pair<double, std::size_t>> d;
  d.reserve(train.size());
  for (std::size_t i = 0; i < train.size(); ++i) d.emplace_back(distance(train[i], query, metric), i);
  std::partial_sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(k), d.end());
  for (std::size_t kk = k; kk >= 1; --kk) {
    std::size_t ones = 0;
    for (std::size_t j = 0; j < kk; ++j) ones += static_cast<std::size_t>(labels[d[j].second] == 1);
    if (2 * ones > kk) return 1;
    if (2 * ones < kk) return 0;
  }
  return 0;
}

inline BaselineResult knn_retrieval(const std::vector<std::vector<double>>& train, std::span<const int> train_labels,
                                    const std::vector<std::vector<double>>& test, std::span<const int> test_labels,
                                    std::size_t k = 5, Distance metric = Distance::kL2) {
  BaselineResult r;
  for (const auto& q : test) r.predictions.push_back(knn_predict(train, train_labels, q, k, metric));
  r.report = metrics(r.predictions, test_labels);
  return r;
}

inline std::vector<double> densify(const SparseVector& v, std::size_t dim) {
  std::vector<double> out(dim, 0.0);
  for (const auto& [i, x] : v) out[i] = x;
  return out;
}

// Mean over the profile's per-field encoder vectors.
template <class T>
std::vector<double> mean_field_embedding(const Profile& p, const Vocabulary& vocab, const Model<T>& model) {
  const auto enc = encode_profile(impute_missing(p), vocab, model);
  std::vector<double> out(model.config().d, 0.0);
  for (const auto& f : enc.h_f)
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += f[i] / static_cast<double>(enc.h_f.size());
  return out;
}

}  // namespace bgmhan
