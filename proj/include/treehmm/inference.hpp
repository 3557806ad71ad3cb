// Apache License, Version 2.0, refer to LICENSE.txt
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "treehmm/matrix.hpp"
#include "treehmm/params.hpp"
#include "treehmm/tree.hpp"

namespace treehmm {

// Smoothed posteriors of the hidden variables given one observed tree.
// All containers are 1-based per node; unused entries stay empty.
struct Posteriors {
  // node_marginal[u][i] = P(Q_u = i | x)
  std::vector<std::vector<double>> node_marginal;
  // td_pair[u](i, j) = P(Q_pa(u) = i, Q_u = j | x), non-root nodes, TD only
  std::vector<Matrix> td_pair;
  // bu_triple[u][l](i, j) = P(Q_u = i, S_u = l, Q_child_l(u) = j | x),
  // internal nodes and occupied slots only, BU only
  std::vector<std::vector<Matrix>> bu_triple;
  double log_likelihood = 0.0;
};

// Upward tables for the TD model. log_beta(u, i) is the log-probability
// of the observed subtree at u given Q_u = i.
struct TdUpward {
  Matrix log_beta;  // (U+1) x C
  double log_likelihood = 0.0;
};

// Upward tables for the BU model. log_beta(u, i) is the joint
// log-probability of Q_u = i and the observed subtree at u; log_n[u] is
// the subtree log-likelihood; log_t[u](l, i) is the slot-l mixture
// component including the spectator siblings' subtree likelihoods.
struct BuUpward {
  Matrix log_beta;            // (U+1) x C
  std::vector<double> log_n;  // length U+1
  std::vector<Matrix> log_t;  // internal nodes: L x C
  double log_likelihood = 0.0;
};

TdUpward upward_td(const TdParams& params, const LabeledTree& tree);
Posteriors downward_td(const TdParams& params, const LabeledTree& tree, const TdUpward& up);
BuUpward upward_bu(const BuParams& params, const LabeledTree& tree);
Posteriors downward_bu(const BuParams& params, const LabeledTree& tree, const BuUpward& up);

// Upward + downward in one call.
Posteriors infer_td(const TdParams& params, const LabeledTree& tree);
Posteriors infer_bu(const BuParams& params, const LabeledTree& tree);

double log_likelihood(const ModelParams& params, const LabeledTree& tree);
Posteriors infer(const ModelParams& params, const LabeledTree& tree);

// Exhaustive-enumeration oracle: sums exp(complete log-probability) over
// every hidden state (and, for BU, switch) assignment, and recovers the
// posteriors from normalized partial sums. Throws InputError when the
// enumeration would exceed max_assignments.
Posteriors brute_force(const ModelParams& params, const LabeledTree& tree,
                       long max_assignments = 1'000'000);

struct ScoreReport {
  double total_log_likelihood = 0.0;
  std::vector<double> per_tree;
  int node_count = 0;
  // exp(-total / node_count); unset for an empty dataset.
  std::optional<double> perplexity;
};

ScoreReport score_dataset(const ModelParams& params, const Dataset& dataset, int threads = 1);

// Line-oriented report: "index<TAB>log_likelihood" per tree, then a JSON
// summary footer.
std::string score_report_text(const ScoreReport& report);

}  // namespace treehmm
