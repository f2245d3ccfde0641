#include <doctest.h>

#include <cmath>
#include <sstream>

#include "metammf/errors.hpp"
#include "metammf/evaluation.hpp"
#include "oracles.hpp"

using namespace metammf;

namespace {

using Lists = std::vector<std::vector<std::uint32_t>>;

struct Instance {
  Representations reps;
  Lists exclusions;
  Lists targets;
};

// Small integer-valued representations so that score ties are common.
Instance random_instance(std::mt19937_64& rng, std::size_t max_users = 10, std::size_t max_items = 30) {
  const std::size_t users = 1 + rng() % max_users;
  const std::size_t items = 4 + rng() % (max_items - 3);
  const std::size_t d = 1 + rng() % 4;
  Instance in{{Matrix(users, d), Matrix(items, d)}, Lists(users), Lists(users)};
  std::uniform_int_distribution<int> v(-2, 2);
  for (double& x : in.reps.users.data) x = v(rng);
  for (double& x : in.reps.items.data) x = v(rng);
  for (std::size_t u = 0; u < users; ++u) {
    for (std::uint32_t i = 0; i < items; ++i) {
      const auto roll = rng() % 10;
      if (roll < 2) in.exclusions[u].push_back(i);
      else if (roll < 4) in.targets[u].push_back(i);
    }
  }
  return in;
}

std::set<std::uint32_t> as_set(const std::vector<std::uint32_t>& v) { return {v.begin(), v.end()}; }

std::vector<double> user_scores(const Representations& r, std::size_t u) {
  std::vector<double> s(r.items.rows);
  for (std::size_t i = 0; i < s.size(); ++i) {
    double acc = 0;
    for (std::size_t c = 0; c < r.items.cols; ++c) acc += r.users(u, c) * r.items(i, c);
    s[i] = acc;
  }
  return s;
}

}  // namespace

TEST_CASE("rank_all ordering and exclusions") {
  const Vector scores{0.5, 0.9, 0.1};
  CHECK(rank_all(0, scores, {}).items == std::vector<std::uint32_t>{1, 0, 2});
  const std::uint32_t ex[] = {1};
  CHECK(rank_all(0, scores, ex).items == std::vector<std::uint32_t>{0, 2});
  const Vector ties{1.0, 2.0, 1.0, 2.0};
  CHECK(rank_all(0, ties, {}).items == std::vector<std::uint32_t>{1, 3, 0, 2});
  CHECK(rank_all(0, ties, {}, 2).items == std::vector<std::uint32_t>{1, 3});

  std::mt19937_64 rng(31);
  Vector random(25);
  oracle::fill(random, rng);
  std::vector<std::uint32_t> ref(25);
  std::iota(ref.begin(), ref.end(), 0u);
  std::stable_sort(ref.begin(), ref.end(), [&](auto a, auto b) { return random[a] > random[b]; });
  CHECK(rank_all(0, random, {}).items == ref);

  const Representations reps{Matrix(1, 2), Matrix(3, 2)};
  CHECK_THROWS_AS(rank_all(reps, 1, {}), std::out_of_range);
}

TEST_CASE("metrics_at_k hand example") {
  const RankedList ranked{0, {0, 5, 1, 2}};
  const std::uint32_t test[] = {0, 1};
  const Metrics m = metrics_at_k(ranked, test, 2);
  CHECK(m.precision == 0.5);
  CHECK(m.recall == 0.5);
  CHECK(m.hit_ratio == 1.0);
  CHECK(m.ndcg == doctest::Approx(1.0 / (1.0 + 1.0 / std::log2(3.0))).epsilon(1e-12));
  CHECK(m.ndcg == doctest::Approx(0.6131).epsilon(1e-4));
}

TEST_CASE("metrics at their maxima and at zero") {
  const RankedList ranked{0, {3, 4, 0, 1, 2}};
  const std::uint32_t two[] = {3, 4};
  const Metrics best = metrics_at_k(ranked, two, 3);
  CHECK(best.precision == doctest::Approx(2.0 / 3.0));
  CHECK(best.recall == 1.0);
  CHECK(best.hit_ratio == 1.0);
  CHECK(best.ndcg == doctest::Approx(1.0));

  const std::uint32_t missed[] = {2};
  const Metrics none = metrics_at_k(ranked, missed, 3);
  CHECK(none.precision == 0.0);
  CHECK(none.recall == 0.0);
  CHECK(none.hit_ratio == 0.0);
  CHECK(none.ndcg == 0.0);

  CHECK_THROWS_AS(metrics_at_k(ranked, missed, 0), std::invalid_argument);
  CHECK_THROWS_AS(metrics_at_k(ranked, {}, 3), std::invalid_argument);
}

TEST_CASE("evaluate averages over users with targets") {
  Representations reps{Matrix(3, 1), Matrix(4, 1)};
  reps.users.data = {1, 1, -1};
  reps.items.data = {4, 3, 2, 1};
  const Lists ex{{}, {0}, {}};
  const Lists tg{{0}, {3}, {}};
  const std::size_t ks[] = {1, 2};
  const EvalReport r = evaluate(reps, ex, tg, ks);
  CHECK(r.users == 2);
  // user 0 ranks [0,1,2,3]; user 1 ranks [1,2,3]
  CHECK(r.at(1).precision == doctest::Approx(0.5));
  CHECK(r.at(2).recall == doctest::Approx(0.5));
  const RankedList single = rank_all(reps, 0, ex[0]);
  const std::uint32_t t0[] = {0};
  CHECK(metrics_at_k(single, t0, 2).ndcg == 1.0);
  CHECK_THROWS_AS(r.at(5), std::out_of_range);
  CHECK_THROWS_AS(evaluate(reps, Lists(2), tg, ks), DimensionError);
}

TEST_CASE("evaluate matches the brute-force evaluator") {
  std::mt19937_64 rng(32);
  for (int trial = 0; trial < 20; ++trial) {
    const Instance in = random_instance(rng);
    const std::size_t ks[] = {1, 3, 10};
    const EvalReport r = evaluate(in.reps, in.exclusions, in.targets, ks, 1 + trial % 3);
    for (std::size_t n = 0; n < 3; ++n) {
      oracle::BruteMetrics sum;
      std::size_t users = 0;
      for (std::size_t u = 0; u < in.targets.size(); ++u) {
        if (in.targets[u].empty()) continue;
        const auto m = oracle::brute_user(user_scores(in.reps, u), as_set(in.exclusions[u]), as_set(in.targets[u]), ks[n]);
        sum.p += m.p;
        sum.r += m.r;
        sum.hr += m.hr;
        sum.ndcg += m.ndcg;
        ++users;
      }
      REQUIRE(r.users == users);
      if (users == 0) continue;
      const double n_users = static_cast<double>(users);
      CHECK(std::abs(r.at_k[n].precision - sum.p / n_users) <= 1e-12);
      CHECK(std::abs(r.at_k[n].recall - sum.r / n_users) <= 1e-12);
      CHECK(std::abs(r.at_k[n].hit_ratio - sum.hr / n_users) <= 1e-12);
      CHECK(std::abs(r.at_k[n].ndcg - sum.ndcg / n_users) <= 1e-12);
    }
  }
}

TEST_CASE("per-user metric invariants") {
  std::mt19937_64 rng(33);
  for (int trial = 0; trial < 30; ++trial) {
    Vector scores(20);
    oracle::fill(scores, rng);
    std::vector<std::uint32_t> test;
    for (std::uint32_t i = 0; i < 20; ++i)
      if (rng() % 4 == 0) test.push_back(i);
    if (test.empty()) test.push_back(7);
    const std::size_t k = 1 + rng() % 8;
    const RankedList ranked = rank_all(0, scores, {});
    const Metrics m = metrics_at_k(ranked, test, k);
    std::size_t hits = 0;
    for (std::size_t pos = 0; pos < k; ++pos) hits += std::binary_search(test.begin(), test.end(), ranked.items[pos]);
    CHECK(std::round(m.precision * k) == hits);
    CHECK(std::round(m.recall * test.size()) == hits);

    RankedList shuffled = ranked;
    std::shuffle(shuffled.items.begin() + static_cast<std::ptrdiff_t>(k), shuffled.items.end(), rng);
    CHECK(metrics_at_k(shuffled, test, k).ndcg == m.ndcg);

    Vector squashed(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) squashed[i] = std::exp(3.0 * scores[i]) + 1.0;
    const Metrics t = metrics_at_k(rank_all(0, squashed, {}), test, k);
    CHECK(t.precision == m.precision);
    CHECK(t.ndcg == m.ndcg);
    for (double v : {m.precision, m.recall, m.hit_ratio, m.ndcg}) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
}

TEST_CASE("silhouette") {
  SUBCASE("tight separated clusters approach one") {
    Matrix pts(4, 2);
    pts.data = {0, 0, 0, 0, 100, 100, 100, 100};
    const int labels[] = {0, 0, 1, 1};
    CHECK(silhouette(pts, labels) == doctest::Approx(1.0));
  }
  SUBCASE("identical points give zero") {
    const Matrix pts(4, 3, 2.5);
    const int labels[] = {0, 1, 0, 1};
    CHECK(silhouette(pts, labels) == 0.0);
  }
  SUBCASE("singletons contribute zero") {
    Matrix pts(3, 1);
    pts.data = {0, 1, 10};
    const int labels[] = {0, 0, 1};
    CHECK(silhouette(pts, labels) == doctest::Approx((0.9 + 8.0 / 9.0) / 3.0).epsilon(1e-12));
  }
  SUBCASE("matches the pairwise-distance oracle") {
    std::mt19937_64 rng(34);
    for (int trial = 0; trial < 20; ++trial) {
      const std::size_t n = 6 + rng() % 10;
      const std::size_t d = 1 + rng() % 3;
      Matrix pts(n, d);
      oracle::fill(pts.data, rng);
      std::vector<int> labels(n);
      for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i < 2 ? i : rng() % 3);
      std::vector<std::vector<double>> rows;
      for (std::size_t i = 0; i < n; ++i) rows.emplace_back(pts.row(i).begin(), pts.row(i).end());
      CHECK(std::abs(silhouette(pts, labels) - oracle::brute_silhouette(rows, labels)) <= 1e-12);
    }
  }
  SUBCASE("errors") {
    const Matrix pts(3, 1);
    const int one[] = {0, 0, 0};
    CHECK_THROWS_AS(silhouette(pts, one), std::invalid_argument);
    const int short_labels[] = {0, 1};
    CHECK_THROWS_AS(silhouette(pts, short_labels), DimensionError);
  }
}

TEST_CASE("report serialization") {
  EvalReport r;
  r.ks = {10, 20};
  r.at_k = {{0.1, 0.2, 0.3, 0.4}, {0.05, 0.25, 0.35, 0.45}};
  r.users = 7;
  r.parameter_count = 123;
  std::ostringstream tsv, kv;
  write_report_tsv(tsv, r);
  write_report_kv(kv, r);
  CHECK(tsv.str() ==
        "K\tprecision\trecall\thr\tndcg\tusers\n"
        "10\t0.100000\t0.200000\t0.300000\t0.400000\t7\n"
        "20\t0.050000\t0.250000\t0.350000\t0.450000\t7\n");
  const std::string text = kv.str();
  CHECK(text.find("precision.10 = 0.100000\n") != std::string::npos);
  CHECK(text.find("ndcg.20 = 0.450000\n") != std::string::npos);
  CHECK(text.find("parameters = 123\n") != std::string::npos);
  std::size_t metric_lines = 0;
  std::istringstream lines(text);
  for (std::string line; std::getline(lines, line);)
    metric_lines += line.rfind("precision.", 0) == 0 || line.rfind("recall.", 0) == 0 || line.rfind("hr.", 0) == 0 ||
                    line.rfind("ndcg.", 0) == 0;
  CHECK(metric_lines == 8);
}
