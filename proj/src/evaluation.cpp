#include "metammf/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <stdexcept>
#include <string>

#include "metammf/parallel.hpp"

namespace metammf {

RankedList rank_all(std::size_t user, std::span<const double> scores, std::span<const std::uint32_t> exclusions,
                    std::size_t limit) {
  RankedList out;
  out.user = user;
  out.items.reserve(scores.size());
  std::size_t ex = 0;
  for (std::uint32_t i = 0; i < scores.size(); ++i) {
    while (ex < exclusions.size() && exclusions[ex] < i) ++ex;
    if (ex < exclusions.size() && exclusions[ex] == i) continue;
    out.items.push_back(i);
  }
  auto before = [&scores](std::uint32_t x, std::uint32_t y) {
    if (scores[x] != scores[y]) return scores[x] > scores[y];
    return x < y;
  };
  if (limit < out.items.size()) {
    std::partial_sort(out.items.begin(), out.items.begin() + static_cast<std::ptrdiff_t>(limit), out.items.end(), before);
    out.items.resize(limit);
  } else {
    std::sort(out.items.begin(), out.items.end(), before);
  }
  return out;
}

RankedList rank_all(const Representations& reps, std::size_t user, std::span<const std::uint32_t> exclusions,
                    std::size_t limit) {
  if (user >= reps.users.rows) throw std::out_of_range("rank_all: unknown user " + std::to_string(user));
  Vector scores(reps.items.rows);
  const auto u = reps.users.row(user);
  for (std::size_t i = 0; i < scores.size(); ++i) scores[i] = dot(u, reps.items.row(i));
  return rank_all(user, scores, exclusions, limit);
}

Metrics metrics_at_k(const RankedList& ranked, std::span<const std::uint32_t> test_items, std::size_t k) {
  if (k == 0) throw std::invalid_argument("metrics_at_k: K must be at least 1");
  if (test_items.empty()) throw std::invalid_argument("metrics_at_k: empty test set");
  std::size_t hits = 0;
  double dcg = 0.0;
  const std::size_t depth = std::min(k, ranked.items.size());
  for (std::size_t r = 0; r < depth; ++r) {
    if (std::binary_search(test_items.begin(), test_items.end(), ranked.items[r])) {
      ++hits;
      dcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
    }
  }
  double idcg = 0.0;
  for (std::size_t r = 0; r < std::min(k, test_items.size()); ++r) idcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
  Metrics m;
  m.precision = static_cast<double>(hits) / static_cast<double>(k);
  m.recall = static_cast<double>(hits) / static_cast<double>(test_items.size());
  m.hit_ratio = hits > 0 ? 1.0 : 0.0;
  m.ndcg = dcg / idcg;
  return m;
}

const Metrics& EvalReport::at(std::size_t k) const {
  for (std::size_t n = 0; n < ks.size(); ++n) {
    if (ks[n] == k) return at_k[n];
  }
  throw std::out_of_range("report has no metrics at K=" + std::to_string(k));
}

EvalReport evaluate(const Representations& reps, const std::vector<std::vector<std::uint32_t>>& exclusions,
                    const std::vector<std::vector<std::uint32_t>>& targets, std::span<const std::size_t> ks,
                    int threads) {
  if (ks.empty()) throw std::invalid_argument("evaluate: no cutoffs given");
  if (targets.size() != reps.users.rows || exclusions.size() != reps.users.rows) {
    throw DimensionError("evaluate: per-user lists do not match " + std::to_string(reps.users.rows) + " users");
  }
  const std::size_t max_k = *std::max_element(ks.begin(), ks.end());
  const std::size_t n_users = reps.users.rows;

  // per-user metrics, reduced afterwards in user order
  std::vector<std::vector<Metrics>> per_user(n_users);
  parallel_chunks(n_users, threads, [&](std::size_t begin, std::size_t end, std::size_t) {
    for (std::size_t u = begin; u < end; ++u) {
      if (targets[u].empty()) continue;
      const RankedList ranked = rank_all(reps, u, exclusions[u], max_k);
      for (std::size_t k : ks) per_user[u].push_back(metrics_at_k(ranked, targets[u], k));
    }
  });

  EvalReport report;
  report.ks.assign(ks.begin(), ks.end());
  report.at_k.assign(ks.size(), Metrics{});
  for (const auto& metrics : per_user) {
    if (metrics.empty()) continue;
    ++report.users;
    for (std::size_t n = 0; n < ks.size(); ++n) {
      report.at_k[n].precision += metrics[n].precision;
      report.at_k[n].recall += metrics[n].recall;
      report.at_k[n].hit_ratio += metrics[n].hit_ratio;
      report.at_k[n].ndcg += metrics[n].ndcg;
    }
  }
  if (report.users > 0) {
    const double inv = 1.0 / static_cast<double>(report.users);
    for (auto& m : report.at_k) {
      m.precision *= inv;
      m.recall *= inv;
      m.hit_ratio *= inv;
      m.ndcg *= inv;
    }
  }
  return report;
}

double silhouette(const Matrix& points, std::span<const int> labels) {
  if (labels.size() != points.rows) {
    throw DimensionError("silhouette: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(points.rows) + " points");
  }
  std::map<int, std::size_t> sizes;
  for (int l : labels) ++sizes[l];
  if (sizes.size() < 2) throw std::invalid_argument("silhouette: need at least two clusters");

  auto distance = [&points](std::size_t x, std::size_t y) {
    double acc = 0.0;
    const auto px = points.row(x);
    const auto py = points.row(y);
    for (std::size_t c = 0; c < px.size(); ++c) {
      const double d = px[c] - py[c];
      acc += d * d;
    }
    return std::sqrt(acc);
  };

  double total = 0.0;
  std::map<int, double> sums;
  for (std::size_t i = 0; i < points.rows; ++i) {
    if (sizes[labels[i]] == 1) continue;  // s = 0
    sums.clear();
    for (std::size_t j = 0; j < points.rows; ++j) {
      if (j != i) sums[labels[j]] += distance(i, j);
    }
    const double a = sums[labels[i]] / static_cast<double>(sizes[labels[i]] - 1);
    double b = std::numeric_limits<double>::infinity();
    for (const auto& [label, sum] : sums) {
      if (label != labels[i]) b = std::min(b, sum / static_cast<double>(sizes[label]));
    }
    const double denom = std::max(a, b);
    if (denom > 0.0) total += (b - a) / denom;
  }
  return total / static_cast<double>(points.rows);
}

namespace {

std::string fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

void write_report_tsv(std::ostream& out, const EvalReport& report) {
  out << "K\tprecision\trecall\thr\tndcg\tusers\n";
  for (std::size_t n = 0; n < report.ks.size(); ++n) {
    const auto& m = report.at_k[n];
    out << report.ks[n] << '\t' << fixed6(m.precision) << '\t' << fixed6(m.recall) << '\t' << fixed6(m.hit_ratio)
        << '\t' << fixed6(m.ndcg) << '\t' << report.users << '\n';
  }
}

void write_report_kv(std::ostream& out, const EvalReport& report) {
  for (std::size_t n = 0; n < report.ks.size(); ++n) {
    const auto& m = report.at_k[n];
    const std::string k = std::to_string(report.ks[n]);
    out << "precision." << k << " = " << fixed6(m.precision) << '\n';
    out << "recall." << k << " = " << fixed6(m.recall) << '\n';
    out << "hr." << k << " = " << fixed6(m.hit_ratio) << '\n';
    out << "ndcg." << k << " = " << fixed6(m.ndcg) << '\n';
  }
  out << "users = " << report.users << '\n';
  if (report.silhouette) out << "silhouette = " << fixed6(*report.silhouette) << '\n';
  if (report.parameter_count) out << "parameters = " << *report.parameter_count << '\n';
  if (report.seconds_per_epoch) out << "seconds_per_epoch = " << fixed6(*report.seconds_per_epoch) << '\n';
}

}  // namespace metammf
