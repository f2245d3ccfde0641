#include <doctest.h>

#include "metammf/errors.hpp"
#include "metammf/gradcheck.hpp"
#include "metammf/heads.hpp"
#include "oracles.hpp"

using namespace metammf;

namespace {

NodeReps random_reps(std::size_t users, std::size_t items, std::size_t d, std::mt19937_64& rng) {
  NodeReps r{Matrix(users, d), Matrix(items, d)};
  oracle::fill(r.users.data, rng);
  oracle::fill(r.items.data, rng);
  return r;
}

GcnLayer shared_layer(std::size_t d, std::mt19937_64& rng) {
  GcnLayer l{Matrix(d, d), Matrix(d, d), {}, {}};
  oracle::fill(l.self_weight.data, rng);
  oracle::fill(l.neighbor_weight.data, rng);
  return l;
}

}  // namespace

TEST_CASE("mf_score") {
  CollaborativeTable t(2, 3, 32, 32);
  CHECK(mf_score(0, Vector(64, 1.0), t) == 0.0);
  std::fill(t.users.data.begin(), t.users.data.end(), 1.0);
  CHECK(mf_score(1, Vector(64, 1.0), t) == 64.0);

  std::mt19937_64 rng(21);
  oracle::fill(t.users.data, rng);
  const Vector rep = oracle::random_vector(64, rng);
  double expected = 0.0;
  for (std::size_t c = 0; c < 64; ++c) expected += t.users(1, c) * rep[c];
  CHECK(mf_score(1, rep, t) == expected);
  CHECK_THROWS_AS(mf_score(2, rep, t), std::out_of_range);
  CHECK_THROWS_AS(mf_score(0, Vector(10, 1.0), t), DimensionError);
}

TEST_CASE("item representation is multimodal first") {
  CHECK(item_representation(Vector{1, 2}, Vector{3}) == Vector{1, 2, 3});
}

TEST_CASE("gcn_init layout") {
  std::mt19937_64 rng(22);
  CollaborativeTable t(2, 3, 32, 32);
  oracle::fill(t.users.data, rng);
  oracle::fill(t.items.data, rng);
  Matrix fused(3, 32);
  oracle::fill(fused.data, rng);
  const NodeReps r = gcn_init(fused, t);
  CHECK(r.items.cols == 64);
  CHECK(r.users.data == t.users.data);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t c = 0; c < 32; ++c) CHECK(r.items(i, c) == fused(i, c));
    for (std::size_t c = 0; c < 32; ++c) CHECK(r.items(i, 32 + c) == t.items(i, c));
  }
  const NodeReps z = gcn_init(Matrix(3, 32), t);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t c = 0; c < 32; ++c) CHECK(z.items(i, c) == 0.0);
  }
  CHECK_THROWS_AS(gcn_init(Matrix(2, 32), t), DimensionError);
}

TEST_CASE("interaction graph") {
  const std::vector<Interaction> pairs{{1, 0}, {0, 2}, {0, 2}, {0, 1}};
  const InteractionGraph g = InteractionGraph::from_pairs(2, 3, pairs);
  CHECK(g.user_items[0] == std::vector<std::uint32_t>{1, 2});
  CHECK(g.item_users[2] == std::vector<std::uint32_t>{0});
  CHECK_NOTHROW(g.validate());
  InteractionGraph broken = g;
  broken.item_users[2].clear();
  CHECK_THROWS_AS(broken.validate(), std::logic_error);
}

TEST_CASE("gcn_propagate identity self-loop leaves nonnegative reps unchanged") {
  std::mt19937_64 rng(23);
  NodeReps r = random_reps(2, 3, 4, rng);
  for (double& v : r.users.data) v = std::abs(v);
  for (double& v : r.items.data) v = std::abs(v);
  const std::vector<Interaction> pairs{{0, 0}, {1, 2}};
  const auto g = InteractionGraph::from_pairs(2, 3, pairs);
  const GcnLayer l{Matrix::identity(4), Matrix(4, 4), {}, {}};
  const NodeReps out = gcn_propagate(g, r, l, 0.01);
  CHECK(out.users.data == r.users.data);
  CHECK(out.items.data == r.items.data);
}

TEST_CASE("single edge with neighbor identity passes the user rep through the activation") {
  NodeReps r{Matrix(1, 3), Matrix(1, 3)};
  r.users.data = {1.0, -2.0, 0.5};
  r.items.data = {9.0, 9.0, 9.0};
  const std::vector<Interaction> pairs{{0, 0}};
  const auto g = InteractionGraph::from_pairs(1, 1, pairs);
  const GcnLayer l{Matrix(3, 3), Matrix::identity(3), {}, {}};
  const NodeReps out = gcn_propagate(g, r, l, 0.01);
  CHECK(out.items.data == Vector{1.0, -0.02, 0.5});
}

TEST_CASE("gcn_propagate matches the per-node loop oracle") {
  std::mt19937_64 rng(24);
  const std::vector<Interaction> pairs{{0, 0}, {0, 3}, {1, 1}, {1, 3}, {2, 4}, {3, 0}, {3, 1}, {3, 2}};
  const auto g = InteractionGraph::from_pairs(4, 5, pairs);
  const NodeReps r = random_reps(4, 5, 6, rng);
  const GcnLayer l = shared_layer(6, rng);
  const NodeReps out = gcn_propagate(g, r, l, 0.01);
  const NodeReps ref = oracle::propagate(g, r, l.self_weight, l.neighbor_weight, 0.01);
  CHECK(oracle::max_abs_diff(out.users.data, ref.users.data) <= 1e-12);
  CHECK(oracle::max_abs_diff(out.items.data, ref.items.data) <= 1e-12);
}

TEST_CASE("a graph without edges reduces to per-node self updates") {
  std::mt19937_64 rng(25);
  const auto g = InteractionGraph::from_pairs(2, 2, std::vector<Interaction>{});
  const NodeReps r = random_reps(2, 2, 3, rng);
  const GcnLayer l = shared_layer(3, rng);
  const NodeReps out = gcn_propagate(g, r, l, 0.2);
  for (std::size_t u = 0; u < 2; ++u) {
    Vector y = matvec(l.self_weight, r.users.row(u));
    for (double& v : y) v = v > 0 ? v : 0.2 * v;
    CHECK(oracle::max_abs_diff(Vector(out.users.row(u).begin(), out.users.row(u).end()), y) <= 1e-15);
  }
}

TEST_CASE("per-type weights update users with their own matrices") {
  std::mt19937_64 rng(26);
  const std::vector<Interaction> pairs{{0, 0}, {1, 1}, {1, 0}};
  const auto g = InteractionGraph::from_pairs(2, 2, pairs);
  const NodeReps r = random_reps(2, 2, 3, rng);
  GcnLayer l = shared_layer(3, rng);
  l.user_self_weight = Matrix(3, 3);
  l.user_neighbor_weight = Matrix(3, 3);
  oracle::fill(l.user_self_weight.data, rng);
  oracle::fill(l.user_neighbor_weight.data, rng);
  const NodeReps out = gcn_propagate(g, r, l, 0.01);
  const NodeReps item_ref = oracle::propagate(g, r, l.self_weight, l.neighbor_weight, 0.01);
  const NodeReps user_ref = oracle::propagate(g, r, l.user_self_weight, l.user_neighbor_weight, 0.01);
  CHECK(oracle::max_abs_diff(out.items.data, item_ref.items.data) <= 1e-12);
  CHECK(oracle::max_abs_diff(out.users.data, user_ref.users.data) <= 1e-12);

  const GcnParams shared(2, 4, false), typed(2, 4, true);
  CHECK(shared.params().size() == 4);
  CHECK(typed.params().size() == 8);
  CHECK(typed.params()[2].name == "layer1.user_self");
}

TEST_CASE("gcn_score") {
  std::mt19937_64 rng(27);
  const NodeReps r = random_reps(2, 3, 5, rng);
  double expected = 0.0;
  for (std::size_t c = 0; c < 5; ++c) expected += r.users(1, c) * r.items(2, c);
  CHECK(gcn_score(1, 2, r) == expected);

  NodeReps ortho{Matrix(1, 2), Matrix(1, 2)};
  ortho.users.data = {1, 0};
  ortho.items.data = {0, 3};
  CHECK(gcn_score(0, 0, ortho) == 0.0);

  // with no propagation, the score is the MF score of the initial reps
  CollaborativeTable t(1, 1, 2, 2);
  oracle::fill(t.users.data, rng);
  oracle::fill(t.items.data, rng);
  Matrix fused(1, 2);
  oracle::fill(fused.data, rng);
  const NodeReps init = gcn_init(fused, t);
  CHECK(gcn_score(0, 0, init) == doctest::Approx(mf_score(0, item_representation(fused.row(0), t.items.row(0)), t)));
}

TEST_CASE("ranking is invariant to a shared orthogonal rotation") {
  std::mt19937_64 rng(28);
  const NodeReps r = random_reps(3, 6, 2, rng);
  const double th = 0.83;
  const Matrix rot = [&] {
    Matrix m(2, 2);
    m.data = {std::cos(th), -std::sin(th), std::sin(th), std::cos(th)};
    return m;
  }();
  NodeReps turned{Matrix(3, 2), Matrix(6, 2)};
  for (std::size_t u = 0; u < 3; ++u) {
    const Vector y = matvec(rot, r.users.row(u));
    std::copy(y.begin(), y.end(), turned.users.row(u).begin());
  }
  for (std::size_t i = 0; i < 6; ++i) {
    const Vector y = matvec(rot, r.items.row(i));
    std::copy(y.begin(), y.end(), turned.items.row(i).begin());
  }
  for (std::size_t u = 0; u < 3; ++u)
    for (std::size_t i = 0; i < 6; ++i) CHECK(std::abs(gcn_score(u, i, r) - gcn_score(u, i, turned)) <= 1e-8);
}

TEST_CASE("gradient suite passes and catches a flipped kernel") {
  const auto results = run_gradient_suite(3);
  REQUIRE(results.size() == 11);
  for (const auto& r : results) {
    CAPTURE(r.group);
    CHECK(r.pass);
  }
  const auto mutated = run_gradient_suite(3, 1e-4, "heads.gcn_propagate");
  for (const auto& r : mutated) CHECK(r.pass == (r.group != "heads.gcn_propagate"));
}
