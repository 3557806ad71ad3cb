// Apache License, Version 2.0, refer to LICENSE.txt
#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "treehmm/inference.hpp"
#include "treehmm/logspace.hpp"

using namespace treehmm;
using treehmm::testing::random_tree;

namespace {

void check_posteriors_match(const Posteriors& got, const Posteriors& want, int node_count,
                            double tol) {
  using testing::near_abs;
  REQUIRE(got.node_marginal.size() == want.node_marginal.size());
  for (int u = 1; u <= node_count; ++u) {
    REQUIRE(got.node_marginal[u].size() == want.node_marginal[u].size());
    for (size_t i = 0; i < got.node_marginal[u].size(); ++i)
      CHECK_MESSAGE(near_abs(got.node_marginal[u][i], want.node_marginal[u][i], tol),
                    got.node_marginal[u][i], " vs ", want.node_marginal[u][i]);
  }
  if (!want.td_pair.empty()) {
    for (int u = 2; u <= node_count; ++u) {
      const Matrix& a = got.td_pair[u];
      const Matrix& b = want.td_pair[u];
      REQUIRE(a.rows() == b.rows());
      for (size_t k = 0; k < a.data().size(); ++k)
        CHECK_MESSAGE(near_abs(a.data()[k], b.data()[k], tol), a.data()[k], " vs ", b.data()[k]);
    }
  }
  if (!want.bu_triple.empty()) {
    for (int u = 1; u <= node_count; ++u) {
      REQUIRE(got.bu_triple[u].size() == want.bu_triple[u].size());
      for (size_t l = 0; l < want.bu_triple[u].size(); ++l) {
        const Matrix& a = got.bu_triple[u][l];
        const Matrix& b = want.bu_triple[u][l];
        REQUIRE(a.empty() == b.empty());
        for (size_t k = 0; k < a.data().size(); ++k)
          CHECK_MESSAGE(near_abs(a.data()[k], b.data()[k], tol), a.data()[k], " vs ",
                        b.data()[k]);
      }
    }
  }
}

void check_posterior_invariants_td(const Posteriors& post, const LabeledTree& tree) {
  const int n = tree.node_count();
  for (int u = 1; u <= n; ++u) {
    double s = 0.0;
    for (double x : post.node_marginal[u]) s += x;
    CHECK(s == doctest::Approx(1.0).epsilon(1e-8));
  }
  for (int u = 2; u <= n; ++u) {
    const Matrix& z = post.td_pair[u];
    double total = 0.0;
    for (int i = 0; i < z.rows(); ++i) {
      for (int j = 0; j < z.cols(); ++j) total += z(i, j);
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-8));
    // Marginalizing over the parent state recovers the node marginal,
    // over the child state the parent's marginal.
    for (int j = 0; j < z.cols(); ++j) {
      double col = 0.0;
      for (int i = 0; i < z.rows(); ++i) col += z(i, j);
      CHECK(testing::near_abs(col, post.node_marginal[u][j], 1e-8));
    }
    for (int i = 0; i < z.rows(); ++i) {
      double row = 0.0;
      for (int j = 0; j < z.cols(); ++j) row += z(i, j);
      CHECK(testing::near_abs(row, post.node_marginal[tree.parent(u)][i], 1e-8));
    }
  }
}

void check_posterior_invariants_bu(const Posteriors& post, const LabeledTree& tree) {
  const int n = tree.node_count();
  for (int u = 1; u <= n; ++u) {
    double s = 0.0;
    for (double x : post.node_marginal[u]) s += x;
    CHECK(s == doctest::Approx(1.0).epsilon(1e-8));
    if (tree.is_leaf(u)) continue;
    double total = 0.0;
    std::vector<double> by_parent_state(post.node_marginal[u].size(), 0.0);
    for (const Matrix& z : post.bu_triple[u]) {
      for (int i = 0; i < z.rows(); ++i) {
        for (int j = 0; j < z.cols(); ++j) {
          total += z(i, j);
          by_parent_state[i] += z(i, j);
        }
      }
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-8));
    for (size_t i = 0; i < by_parent_state.size(); ++i)
      CHECK(testing::near_abs(by_parent_state[i], post.node_marginal[u][i], 1e-8));
  }
}

}  // namespace

TEST_CASE("upward_td closed forms") {
  SUBCASE("single state sums emissions") {
    TdParams p = init_random_td(1, 4, 3);
    Rng rng = make_rng(8);
    LabeledTree t = random_tree(rng, 9, 3, 4);
    double expect = 0.0;
    for (int u = 1; u <= t.node_count(); ++u) expect += std::log(p.emission(0, t.label(u)));
    CHECK(upward_td(p, t).log_likelihood == doctest::Approx(expect).epsilon(1e-12));
  }
  SUBCASE("uniform emissions make states uninformative") {
    TdParams p = init_random_td(3, 4, 5);
    for (int i = 0; i < 3; ++i) {
      for (int m = 0; m < 4; ++m) p.emission(i, m) = 0.25;
    }
    Rng rng = make_rng(9);
    LabeledTree t = random_tree(rng, 8, 2, 4);
    CHECK(upward_td(p, t).log_likelihood ==
          doctest::Approx(-t.node_count() * std::log(4.0)).epsilon(1e-12));
  }
}

TEST_CASE("upward_bu closed forms") {
  SUBCASE("single node is a leaf-prior mixture") {
    BuParams p = init_random_bu(3, 4, 2, 13);
    LabeledTree t = parse_tree("(2)", 4, 2);
    double lin = 0.0;
    for (int i = 0; i < 3; ++i) lin += p.leaf_prior[i] * p.emission(i, 2);
    CHECK(upward_bu(p, t).log_likelihood == doctest::Approx(std::log(lin)).epsilon(1e-12));
  }
  SUBCASE("single state collapses switch and transition factors") {
    BuParams p = init_random_bu(1, 4, 3, 14);
    Rng rng = make_rng(10);
    LabeledTree t = random_tree(rng, 10, 3, 4);
    double expect = 0.0;
    for (int u = 1; u <= t.node_count(); ++u) expect += std::log(p.emission(0, t.label(u)));
    CHECK(upward_bu(p, t).log_likelihood == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("brute force closed forms") {
  SUBCASE("single state") {
    BuParams p = init_random_bu(1, 3, 2, 2);
    Rng rng = make_rng(11);
    LabeledTree t = random_tree(rng, 7, 2, 3);
    double expect = 0.0;
    for (int u = 1; u <= t.node_count(); ++u) expect += std::log(p.emission(0, t.label(u)));
    CHECK(brute_force(ModelParams(p), t).log_likelihood ==
          doctest::Approx(expect).epsilon(1e-10));
  }
  SUBCASE("one-hot parameters score 0 or -inf") {
    TdParams p;
    p.state_count = 1;
    p.alphabet_size = 2;
    p.root_prior = {1.0};
    p.transition = Matrix(1, 1, 1.0);
    p.emission = Matrix(1, 2, 0.0);
    p.emission(0, 0) = 1.0;
    LabeledTree match = parse_tree("(0 (0))", 2, 1);
    LabeledTree clash = parse_tree("(0 (1))", 2, 1);
    CHECK(testing::near_abs(brute_force(ModelParams(p), match).log_likelihood, 0.0, 1e-15));
    CHECK(brute_force(ModelParams(p), clash).log_likelihood == kLogZero);
  }
  SUBCASE("instance too large") {
    TdParams p = init_random_td(2, 2, 1);
    Rng rng = make_rng(12);
    LabeledTree t = random_tree(rng, 40, 2, 2, 0.9);
    CHECK_THROWS_AS(brute_force(ModelParams(p), t, 1000), InputError);
  }
}

// The certification this module rests on: message passing must agree with
// exhaustive enumeration before anything else is trusted.
TEST_CASE("oracle equivalence on randomized instances") {
  Rng rng = make_rng(123456);
  std::uniform_int_distribution<int> c_draw(1, 3), u_draw(1, 8), l_draw(1, 3), m_draw(2, 3);
  int done = 0;
  while (done < 60) {
    int C = c_draw(rng), U = u_draw(rng), L = l_draw(rng), M = m_draw(rng);
    LabeledTree t = random_tree(rng, U, L, M);
    if (testing::enumeration_work(t, C, true) > 200'000) continue;
    ++done;

    TdParams td = init_random_td(C, M, splitmix64(done * 2 + 1));
    Posteriors td_oracle = brute_force(ModelParams(td), t);
    TdUpward td_up = upward_td(td, t);
    CHECK(td_up.log_likelihood ==
          doctest::Approx(td_oracle.log_likelihood).epsilon(1e-8));
    Posteriors td_post = downward_td(td, t, td_up);
    check_posteriors_match(td_post, td_oracle, t.node_count(), 1e-7);
    check_posterior_invariants_td(td_post, t);

    BuParams bu = init_random_bu(C, M, L, splitmix64(done * 2), 1.0);
    Posteriors bu_oracle = brute_force(ModelParams(bu), t);
    BuUpward bu_up = upward_bu(bu, t);
    CHECK(bu_up.log_likelihood ==
          doctest::Approx(bu_oracle.log_likelihood).epsilon(1e-8));
    Posteriors bu_post = downward_bu(bu, t, bu_up);
    check_posteriors_match(bu_post, bu_oracle, t.node_count(), 1e-7);
    check_posterior_invariants_bu(bu_post, t);
  }
}

TEST_CASE("downward closed forms") {
  SUBCASE("single state gives certain posteriors") {
    TdParams p = init_random_td(1, 3, 6);
    Rng rng = make_rng(14);
    LabeledTree t = random_tree(rng, 6, 2, 3);
    Posteriors post = infer_td(p, t);
    for (int u = 1; u <= t.node_count(); ++u)
      CHECK(post.node_marginal[u][0] == doctest::Approx(1.0));
    for (int u = 2; u <= t.node_count(); ++u)
      CHECK(post.td_pair[u](0, 0) == doctest::Approx(1.0));
  }
  SUBCASE("single-node posterior is the Bayes rule in one factor") {
    TdParams p = init_random_td(3, 4, 15);
    LabeledTree t = parse_tree("(1)", 4, 1);
    Posteriors post = infer_td(p, t);
    double z = 0.0;
    for (int i = 0; i < 3; ++i) z += p.root_prior[i] * p.emission(i, 1);
    for (int i = 0; i < 3; ++i)
      CHECK(post.node_marginal[1][i] ==
            doctest::Approx(p.root_prior[i] * p.emission(i, 1) / z).epsilon(1e-12));

    BuParams q = init_random_bu(3, 4, 1, 16);
    Posteriors bpost = infer_bu(q, t);
    double bz = 0.0;
    for (int i = 0; i < 3; ++i) bz += q.leaf_prior[i] * q.emission(i, 1);
    for (int i = 0; i < 3; ++i)
      CHECK(bpost.node_marginal[1][i] ==
            doctest::Approx(q.leaf_prior[i] * q.emission(i, 1) / bz).epsilon(1e-12));
  }
  SUBCASE("bu single-state triples carry the renormalized switch weights") {
    BuParams p = init_random_bu(1, 2, 2, 17);
    LabeledTree t = parse_tree("(0 (1) (0))", 2, 2);
    Posteriors post = infer_bu(p, t);
    double total = p.switch_weights[0] + p.switch_weights[1];
    CHECK(post.bu_triple[1][0](0, 0) == doctest::Approx(p.switch_weights[0] / total));
    CHECK(post.bu_triple[1][1](0, 0) == doctest::Approx(p.switch_weights[1] / total));
  }
  SUBCASE("zero-probability tree has no posteriors") {
    TdParams p;
    p.state_count = 1;
    p.alphabet_size = 2;
    p.root_prior = {1.0};
    p.transition = Matrix(1, 1, 1.0);
    p.emission = Matrix(1, 2, 0.0);
    p.emission(0, 0) = 1.0;
    LabeledTree t = parse_tree("(1)", 2, 1);
    CHECK_THROWS_AS(infer_td(p, t), NumericalError);
  }
}

TEST_CASE("likelihood is invariant under hidden-state relabeling") {
  Rng rng = make_rng(31337);
  for (int rep = 0; rep < 20; ++rep) {
    LabeledTree t = random_tree(rng, 8, 2, 3);
    BuParams p = init_random_bu(3, 3, 2, 1000 + rep);
    // Rotate states by one: new index i holds old index (i+1) % C.
    auto perm = [](int i) { return (i + 1) % 3; };
    BuParams q = p;
    for (int i = 0; i < 3; ++i) {
      q.leaf_prior[perm(i)] = p.leaf_prior[i];
      for (int m = 0; m < 3; ++m) q.emission(perm(i), m) = p.emission(i, m);
      for (int l = 0; l < 2; ++l) {
        for (int j = 0; j < 3; ++j) q.transition[l](perm(i), perm(j)) = p.transition[l](i, j);
      }
    }
    CHECK(upward_bu(q, t).log_likelihood ==
          doctest::Approx(upward_bu(p, t).log_likelihood).epsilon(1e-10));

    TdParams tp = init_random_td(3, 3, 2000 + rep);
    TdParams tq = tp;
    for (int i = 0; i < 3; ++i) {
      tq.root_prior[perm(i)] = tp.root_prior[i];
      for (int m = 0; m < 3; ++m) tq.emission(perm(i), m) = tp.emission(i, m);
      for (int j = 0; j < 3; ++j) tq.transition(perm(i), perm(j)) = tp.transition(i, j);
    }
    CHECK(upward_td(tq, t).log_likelihood ==
          doctest::Approx(upward_td(tp, t).log_likelihood).epsilon(1e-10));
  }
}

TEST_CASE("sibling swap: td invariant, bu sensitive") {
  Rng rng = make_rng(777);
  int td_checked = 0, bu_changed = 0, bu_total = 0;
  while (bu_total < 40) {
    LabeledTree t = random_tree(rng, 10, 2, 3, 0.75);
    int u = testing::find_branching_node(t);
    if (u == kNoNode) continue;
    LabeledTree swapped = testing::swap_child_subtrees(t, u, 0, 1);

    TdParams td = init_random_td(2, 3, 5000 + bu_total);
    CHECK(std::abs(upward_td(td, t).log_likelihood -
                   upward_td(td, swapped).log_likelihood) < 1e-10);
    ++td_checked;

    BuParams bu = init_random_bu(2, 3, 2, 6000 + bu_total);
    double delta = std::abs(upward_bu(bu, t).log_likelihood -
                            upward_bu(bu, swapped).log_likelihood);
    ++bu_total;
    // Identical twin subtrees make the swap a no-op; only count real swaps.
    if (delta > 1e-6) ++bu_changed;
  }
  CHECK(td_checked == bu_total);
  CHECK(bu_changed >= bu_total * 8 / 10);
}

TEST_CASE("score_dataset") {
  SUBCASE("empty dataset flags perplexity as undefined") {
    Dataset ds;
    ds.alphabet_size = 2;
    ds.max_outdegree = 1;
    ScoreReport r = score_dataset(ModelParams(init_random_td(2, 2, 1)), ds);
    CHECK(r.total_log_likelihood == 0.0);
    CHECK(!r.perplexity.has_value());
    CHECK(score_report_text(r).find("null") != std::string::npos);
  }
  SUBCASE("uniform single-state model has perplexity M") {
    TdParams p = init_random_td(1, 5, 2);
    for (int m = 0; m < 5; ++m) p.emission(0, m) = 0.2;
    Rng rng = make_rng(18);
    Dataset ds;
    ds.alphabet_size = 5;
    ds.max_outdegree = 2;
    for (int i = 0; i < 4; ++i) ds.trees.push_back(random_tree(rng, 6, 2, 5));
    ScoreReport r = score_dataset(ModelParams(p), ds);
    REQUIRE(r.perplexity.has_value());
    CHECK(*r.perplexity == doctest::Approx(5.0).epsilon(1e-10));
  }
  SUBCASE("total is additive over trees") {
    BuParams p = init_random_bu(2, 3, 2, 77);
    Rng rng = make_rng(19);
    Dataset ds;
    ds.alphabet_size = 3;
    ds.max_outdegree = 2;
    for (int i = 0; i < 10; ++i)
      ds.trees.push_back(sample_tree(p, random_skeleton(rng, 8, 2, 0.6), rng));
    ScoreReport r = score_dataset(ModelParams(p), ds);
    double manual = 0.0;
    for (const auto& t : ds.trees) manual += upward_bu(p, t).log_likelihood;
    CHECK(r.total_log_likelihood == doctest::Approx(manual).epsilon(1e-12));
    CHECK(r.per_tree.size() == 10);
  }
  SUBCASE("thread count does not change results") {
    BuParams p = init_random_bu(2, 3, 2, 78);
    Rng rng = make_rng(20);
    Dataset ds;
    ds.alphabet_size = 3;
    ds.max_outdegree = 2;
    for (int i = 0; i < 200; ++i)
      ds.trees.push_back(sample_tree(p, random_skeleton(rng, 6, 2, 0.5), rng));
    ScoreReport a = score_dataset(ModelParams(p), ds, 1);
    ScoreReport b = score_dataset(ModelParams(p), ds, 4);
    CHECK(a.total_log_likelihood == b.total_log_likelihood);
    CHECK(a.per_tree == b.per_tree);
  }
}
