// Apache License, Version 2.0, refer to LICENSE.txt
#include "treehmm/inference.hpp"

#include <cmath>
#include <sstream>

#include <json.hpp>

#include "treehmm/errors.hpp"
#include "treehmm/logspace.hpp"
#include "treehmm/parallel.hpp"

namespace treehmm {

namespace {

std::vector<double> log_vector(std::span<const double> p) {
  std::vector<double> lp(p.size());
  for (size_t i = 0; i < p.size(); ++i) lp[i] = log_or_zero(p[i]);
  return lp;
}

// Sum of the sibling subtree log-likelihoods excluding slot l. Computed
// without subtraction so that impossible subtrees (-inf) stay -inf.
double spectator_log_n(const LabeledTree& tree, const std::vector<double>& log_n, int u,
                       int skip_slot) {
  double s = 0.0;
  auto slots = tree.slots(u);
  for (size_t l = 0; l < slots.size(); ++l) {
    if (slots[l] != kNoNode && static_cast<int>(l) != skip_slot) s += log_n[slots[l]];
  }
  return s;
}

}  // namespace

TdUpward upward_td(const TdParams& params, const LabeledTree& tree) {
  const int n = tree.node_count();
  const int C = params.state_count;
  TdUpward up;
  up.log_beta = Matrix(n + 1, C, kLogZero);
  std::vector<double> terms(C);
  for (int u = n; u >= 1; --u) {
    for (int i = 0; i < C; ++i) {
      double lb = log_or_zero(params.emission(i, tree.label(u)));
      for (int c : tree.slots(u)) {
        if (c == kNoNode) continue;
        for (int j = 0; j < C; ++j)
          terms[j] = log_or_zero(params.transition(i, j)) + up.log_beta(c, j);
        lb += log_sum_exp(terms);
      }
      up.log_beta(u, i) = lb;
    }
  }
  for (int i = 0; i < C; ++i)
    terms[i] = log_or_zero(params.root_prior[i]) + up.log_beta(1, i);
  up.log_likelihood = log_sum_exp(terms);
  return up;
}

Posteriors downward_td(const TdParams& params, const LabeledTree& tree, const TdUpward& up) {
  const int n = tree.node_count();
  const int C = params.state_count;
  if (up.log_beta.rows() != n + 1 || up.log_beta.cols() != C)
    throw InputError("upward table does not match (params, tree)");
  if (up.log_likelihood == kLogZero)
    throw NumericalError("tree has zero probability under the model; posteriors are undefined");

  Posteriors post;
  post.log_likelihood = up.log_likelihood;
  post.node_marginal.assign(n + 1, {});
  post.td_pair.assign(n + 1, Matrix());

  post.node_marginal[1].assign(C, 0.0);
  for (int i = 0; i < C; ++i) {
    post.node_marginal[1][i] =
        std::exp(log_or_zero(params.root_prior[i]) + up.log_beta(1, i) - up.log_likelihood);
  }

  std::vector<double> terms(C);
  for (int u = 2; u <= n; ++u) {
    const int p = tree.parent(u);
    Matrix zeta(C, C, 0.0);
    post.node_marginal[u].assign(C, 0.0);
    for (int i = 0; i < C; ++i) {
      double eps_p = post.node_marginal[p][i];
      if (eps_p <= 0.0) continue;
      for (int j = 0; j < C; ++j)
        terms[j] = log_or_zero(params.transition(i, j)) + up.log_beta(u, j);
      double norm = log_sum_exp(terms);
      if (norm == kLogZero) continue;
      for (int j = 0; j < C; ++j) {
        double z = eps_p * std::exp(terms[j] - norm);
        zeta(i, j) = z;
        post.node_marginal[u][j] += z;
      }
    }
    post.td_pair[u] = std::move(zeta);
  }
  return post;
}

BuUpward upward_bu(const BuParams& params, const LabeledTree& tree) {
  const int n = tree.node_count();
  const int C = params.state_count;
  const int L = params.max_outdegree;
  if (tree.out_degree() > L) throw InputError("tree out-degree exceeds the model's L");

  BuUpward up;
  up.log_beta = Matrix(n + 1, C, kLogZero);
  up.log_n.assign(n + 1, kLogZero);
  up.log_t.assign(n + 1, Matrix());

  std::vector<double> terms(C);
  for (int u = n; u >= 1; --u) {
    if (tree.is_leaf(u)) {
      for (int i = 0; i < C; ++i) {
        up.log_beta(u, i) =
            log_or_zero(params.leaf_prior[i]) + log_or_zero(params.emission(i, tree.label(u)));
      }
    } else {
      auto sw = params.switch_over(tree, u);
      auto log_sw = log_vector(sw);
      Matrix log_t(L, C, kLogZero);
      auto slots = tree.slots(u);
      for (size_t l = 0; l < slots.size(); ++l) {
        int child = slots[l];
        if (child == kNoNode) continue;
        double spect = spectator_log_n(tree, up.log_n, u, static_cast<int>(l));
        for (int i = 0; i < C; ++i) {
          for (int j = 0; j < C; ++j)
            terms[j] = log_or_zero(params.transition[l](i, j)) + up.log_beta(child, j);
          log_t(static_cast<int>(l), i) = log_sum_exp(terms) + spect;
        }
      }
      std::vector<double> mix(slots.size());
      for (int i = 0; i < C; ++i) {
        for (size_t l = 0; l < slots.size(); ++l)
          mix[l] = slots[l] == kNoNode ? kLogZero
                                       : log_sw[l] + log_t(static_cast<int>(l), i);
        up.log_beta(u, i) = log_or_zero(params.emission(i, tree.label(u))) + log_sum_exp(mix);
      }
      up.log_t[u] = std::move(log_t);
    }
    for (int i = 0; i < C; ++i) terms[i] = up.log_beta(u, i);
    up.log_n[u] = log_sum_exp(terms);
  }
  up.log_likelihood = up.log_n[1];
  return up;
}

Posteriors downward_bu(const BuParams& params, const LabeledTree& tree, const BuUpward& up) {
  const int n = tree.node_count();
  const int C = params.state_count;
  if (up.log_beta.rows() != n + 1 || up.log_beta.cols() != C ||
      static_cast<int>(up.log_n.size()) != n + 1)
    throw InputError("upward tables do not match (params, tree)");
  if (up.log_likelihood == kLogZero)
    throw NumericalError("tree has zero probability under the model; posteriors are undefined");

  Posteriors post;
  post.log_likelihood = up.log_likelihood;
  post.node_marginal.assign(n + 1, {});
  post.bu_triple.assign(n + 1, {});

  post.node_marginal[1].assign(C, 0.0);
  for (int i = 0; i < C; ++i)
    post.node_marginal[1][i] = std::exp(up.log_beta(1, i) - up.log_likelihood);

  // Parents precede children in canonical order, so each internal node's
  // marginal is ready by the time it is expanded.
  for (int u = 1; u <= n; ++u) {
    if (tree.is_leaf(u)) continue;
    auto slots = tree.slots(u);
    auto sw = params.switch_over(tree, u);
    auto log_sw = log_vector(sw);
    const Matrix& log_t = up.log_t[u];

    std::vector<double> log_a(C, kLogZero);
    std::vector<double> mix(slots.size());
    for (int i = 0; i < C; ++i) {
      for (size_t l = 0; l < slots.size(); ++l)
        mix[l] = slots[l] == kNoNode ? kLogZero : log_sw[l] + log_t(static_cast<int>(l), i);
      log_a[i] = log_sum_exp(mix);
    }

    std::vector<double> log_eps(C);
    for (int i = 0; i < C; ++i) log_eps[i] = log_or_zero(post.node_marginal[u][i]);

    post.bu_triple[u].assign(params.max_outdegree, Matrix());
    for (size_t l = 0; l < slots.size(); ++l) {
      int child = slots[l];
      if (child == kNoNode) continue;
      double spect = spectator_log_n(tree, up.log_n, u, static_cast<int>(l));
      Matrix zeta(C, C, 0.0);
      double mass = 0.0;
      for (int i = 0; i < C; ++i) {
        if (log_eps[i] == kLogZero || log_a[i] == kLogZero) continue;
        double base = log_eps[i] + log_sw[l] + spect - log_a[i];
        for (int j = 0; j < C; ++j) {
          double lz = base + log_or_zero(params.transition[l](i, j)) + up.log_beta(child, j);
          double z = lz == kLogZero ? 0.0 : std::exp(lz);
          zeta(i, j) = z;
          mass += z;
        }
      }
      // Child marginal: the slot-driving term plus the spectator term.
      double spectator_weight = std::max(0.0, 1.0 - mass);
      post.node_marginal[child].assign(C, 0.0);
      for (int j = 0; j < C; ++j) {
        double driving = 0.0;
        for (int i = 0; i < C; ++i) driving += zeta(i, j);
        post.node_marginal[child][j] =
            driving + spectator_weight * std::exp(up.log_beta(child, j) - up.log_n[child]);
      }
      post.bu_triple[u][l] = std::move(zeta);
    }
  }
  return post;
}

Posteriors infer_td(const TdParams& params, const LabeledTree& tree) {
  return downward_td(params, tree, upward_td(params, tree));
}

Posteriors infer_bu(const BuParams& params, const LabeledTree& tree) {
  return downward_bu(params, tree, upward_bu(params, tree));
}

double log_likelihood(const ModelParams& params, const LabeledTree& tree) {
  if (const auto* td = std::get_if<TdParams>(&params)) return upward_td(*td, tree).log_likelihood;
  return upward_bu(std::get<BuParams>(params), tree).log_likelihood;
}

Posteriors infer(const ModelParams& params, const LabeledTree& tree) {
  if (const auto* td = std::get_if<TdParams>(&params)) return infer_td(*td, tree);
  return infer_bu(std::get<BuParams>(params), tree);
}

namespace {

struct BruteAccumulator {
  double total = 0.0;
  Posteriors post;
};

long enumeration_size(const LabeledTree& tree, int C, const std::vector<std::vector<int>>& choices,
                      long max_assignments) {
  long size = 1;
  for (int u = 1; u <= tree.node_count(); ++u) {
    size *= C;
    if (size > max_assignments) return -1;
  }
  for (const auto& c : choices) {
    if (c.empty()) continue;
    size *= static_cast<long>(c.size());
    if (size > max_assignments) return -1;
  }
  return size;
}

}  // namespace

Posteriors brute_force(const ModelParams& params, const LabeledTree& tree, long max_assignments) {
  const int n = tree.node_count();
  const bool is_td = kind_of(params) == ModelKind::Td;
  const int C = is_td ? std::get<TdParams>(params).state_count
                      : std::get<BuParams>(params).state_count;
  const int L = is_td ? 0 : std::get<BuParams>(params).max_outdegree;

  // Per internal node, the occupied slots a switch may point to (BU only).
  std::vector<std::vector<int>> switch_choices(n + 1);
  if (!is_td) {
    for (int u = 1; u <= n; ++u) {
      auto slots = tree.slots(u);
      for (size_t l = 0; l < slots.size(); ++l) {
        if (slots[l] != kNoNode) switch_choices[u].push_back(static_cast<int>(l));
      }
    }
  }

  if (enumeration_size(tree, C, switch_choices, max_assignments) < 0)
    throw InputError("instance too large for brute-force enumeration");

  BruteAccumulator acc;
  acc.post.node_marginal.assign(n + 1, std::vector<double>(C, 0.0));
  if (is_td) {
    acc.post.td_pair.assign(n + 1, Matrix());
    for (int u = 2; u <= n; ++u) acc.post.td_pair[u] = Matrix(C, C, 0.0);
  } else {
    acc.post.bu_triple.assign(n + 1, {});
    for (int u = 1; u <= n; ++u) {
      if (!tree.is_leaf(u)) acc.post.bu_triple[u].assign(L, Matrix());
      for (int l : switch_choices[u]) acc.post.bu_triple[u][l] = Matrix(C, C, 0.0);
    }
  }

  std::vector<int> states(n + 1, 0);
  std::vector<int> switch_index(n + 1, 0);
  std::vector<int> switches(n + 1, -1);

  auto visit = [&]() {
    for (int u = 1; u <= n; ++u)
      switches[u] = switch_choices[u].empty() ? -1 : switch_choices[u][switch_index[u]];
    double lp = is_td ? complete_log_prob_td(std::get<TdParams>(params), tree, states)
                      : complete_log_prob_bu(std::get<BuParams>(params), tree, states, switches);
    double p = lp == kLogZero ? 0.0 : std::exp(lp);
    if (p == 0.0) return;
    acc.total += p;
    for (int u = 1; u <= n; ++u) {
      acc.post.node_marginal[u][states[u]] += p;
      if (is_td && u >= 2) acc.post.td_pair[u](states[tree.parent(u)], states[u]) += p;
      if (!is_td && !tree.is_leaf(u)) {
        int l = switches[u];
        acc.post.bu_triple[u][l](states[u], states[tree.child(u, l)]) += p;
      }
    }
  };

  // Odometer over state assignments, and within each one over switch choices.
  while (true) {
    while (true) {
      visit();
      int u = 1;
      while (u <= n) {
        if (!switch_choices[u].empty() &&
            ++switch_index[u] < static_cast<int>(switch_choices[u].size()))
          break;
        switch_index[u] = 0;
        ++u;
      }
      if (u > n) break;
    }
    int u = 1;
    while (u <= n && ++states[u] == C) states[u++] = 0;
    if (u > n) break;
  }

  if (acc.total <= 0.0) {
    acc.post.log_likelihood = kLogZero;
    return acc.post;
  }
  acc.post.log_likelihood = std::log(acc.total);
  for (int u = 1; u <= n; ++u) {
    for (double& x : acc.post.node_marginal[u]) x /= acc.total;
    if (is_td && u >= 2)
      for (double& x : acc.post.td_pair[u].data()) x /= acc.total;
    if (!is_td)
      for (auto& m : acc.post.bu_triple[u])
        for (double& x : m.data()) x /= acc.total;
  }
  return acc.post;
}

ScoreReport score_dataset(const ModelParams& params, const Dataset& dataset, int threads) {
  ScoreReport report;
  const int n = static_cast<int>(dataset.trees.size());
  report.per_tree.assign(n, 0.0);
  const int n_blocks = (n + kTreeBlockSize - 1) / kTreeBlockSize;
  parallel_blocks(n_blocks, threads, [&](int b) {
    int lo = b * kTreeBlockSize;
    int hi = std::min(n, lo + kTreeBlockSize);
    for (int t = lo; t < hi; ++t)
      report.per_tree[t] = log_likelihood(params, dataset.trees[t]);
  });
  for (double ll : report.per_tree) report.total_log_likelihood += ll;
  report.node_count = dataset.total_nodes();
  if (report.node_count > 0)
    report.perplexity = std::exp(-report.total_log_likelihood / report.node_count);
  return report;
}

std::string score_report_text(const ScoreReport& report) {
  std::ostringstream out;
  out.precision(17);
  for (size_t i = 0; i < report.per_tree.size(); ++i)
    out << i << '\t' << report.per_tree[i] << '\n';
  nlohmann::json footer;
  footer["total_log_likelihood"] = report.total_log_likelihood;
  footer["node_count"] = report.node_count;
  if (report.perplexity.has_value()) {
    footer["perplexity"] = *report.perplexity;
  } else {
    footer["perplexity"] = nullptr;
  }
  out << footer.dump() << '\n';
  return out.str();
}

}  // namespace treehmm
