#pragma once

// Full-ranking top-K evaluation and the silhouette diagnostic.

#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <vector>

#include "metammf/model.hpp"

namespace metammf {

struct RankedList {
  std::size_t user = 0;
  std::vector<std::uint32_t> items;  // descending score, ties by ascending index
};

// Ranks every item not in `exclusions` (sorted ascending). Only the first
// `limit` positions are materialized.
RankedList rank_all(std::size_t user, std::span<const double> scores, std::span<const std::uint32_t> exclusions,
                    std::size_t limit = std::numeric_limits<std::size_t>::max());
RankedList rank_all(const Representations& reps, std::size_t user, std::span<const std::uint32_t> exclusions,
                    std::size_t limit = std::numeric_limits<std::size_t>::max());

struct Metrics {
  double precision = 0.0;
  double recall = 0.0;
  double hit_ratio = 0.0;
  double ndcg = 0.0;
};

// `test_items` must be sorted and non-empty.
Metrics metrics_at_k(const RankedList& ranked, std::span<const std::uint32_t> test_items, std::size_t k);

struct EvalReport {
  std::vector<std::size_t> ks;
  std::vector<Metrics> at_k;  // parallel to ks
  std::size_t users = 0;      // users with at least one target item
  std::optional<double> silhouette;
  std::optional<std::size_t> parameter_count;
  std::optional<double> seconds_per_epoch;

  const Metrics& at(std::size_t k) const;
};

// Averages metrics over users with a non-empty target list. Both lists are
// indexed by user and sorted.
EvalReport evaluate(const Representations& reps, const std::vector<std::vector<std::uint32_t>>& exclusions,
                    const std::vector<std::vector<std::uint32_t>>& targets, std::span<const std::size_t> ks,
                    int threads = 1);

// Mean silhouette coefficient with Euclidean distance. Points in singleton
// clusters score 0, as does a point with a = b = 0. Needs two or more labels.
double silhouette(const Matrix& points, std::span<const int> labels);

// Tab-separated table: one row per K.
void write_report_tsv(std::ostream& out, const EvalReport& report);
// `metric.K = value` lines with 6 decimals.
void write_report_kv(std::ostream& out, const EvalReport& report);

}  // namespace metammf
