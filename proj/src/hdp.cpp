// Apache License, Version 2.0, refer to LICENSE.txt
#include "treehmm/hdp.hpp"

#include <cmath>
#include <sstream>

#include <json.hpp>

#include "treehmm/errors.hpp"
#include "treehmm/inference.hpp"
#include "treehmm/logspace.hpp"

namespace treehmm {

void HdpHypers::validate(int max_outdegree) const {
  if (truncation < 1) throw InputError("truncation level K must be >= 1");
  if (!(top_concentration > 0.0) || !(transition_concentration > 0.0) ||
      !(switch_concentration > 0.0) || !(emission_base > 0.0))
    throw InputError("all concentrations must be positive");
  if (static_cast<int>(position_concentration.size()) != max_outdegree)
    throw InputError("need one position concentration per child slot");
  for (double a : position_concentration) {
    if (!(a > 0.0)) throw InputError("all concentrations must be positive");
  }
}

HdpHypers HdpHypers::defaults(int max_outdegree) {
  HdpHypers h;
  h.position_concentration.assign(max_outdegree, 1.0);
  return h;
}

namespace {

void check_simplex_1e9(std::span<const double> p, const char* what) {
  double sum = 0.0;
  for (double x : p) {
    if (x < 0.0 || !std::isfinite(x)) throw ValidationError(std::string(what) + ": bad entry");
    sum += x;
  }
  if (std::abs(sum - 1.0) > 1e-9)
    throw ValidationError(std::string(what) + ": not on the simplex");
}

// Weights renormalized over the node's occupied slots.
std::vector<double> switch_over_node(const std::vector<double>& weights, const LabeledTree& tree,
                                     int u) {
  auto slots = tree.slots(u);
  std::vector<double> w(slots.size(), 0.0);
  double total = 0.0;
  for (size_t l = 0; l < slots.size(); ++l) {
    if (slots[l] != kNoNode) total += w[l] = weights[l];
  }
  if (!(total > 0.0)) throw NumericalError("switch weights carry no mass on occupied slots");
  for (double& x : w) x /= total;
  return w;
}

// Chinese-restaurant table count: number of tables spawned by n customers
// under concentration mass a.
int sample_table_count(Rng& rng, int n, double a) {
  if (n <= 0) return 0;
  if (!(a > 0.0)) return 1;
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  int m = 1;
  for (int c = 2; c <= n; ++c) {
    if (unif(rng) * (a + c - 1) < a) ++m;
  }
  return m;
}

}  // namespace

void GibbsState::validate(const Dataset& dataset, const HdpHypers& hypers) const {
  const int K = hypers.truncation;
  const int L = dataset.max_outdegree;
  if (static_cast<int>(beta.size()) != K) throw ValidationError("beta has wrong length");
  check_simplex_1e9(beta, "beta");
  if (static_cast<int>(beta_position.size()) != L)
    throw ValidationError("beta_position has wrong length");
  for (const auto& b : beta_position) check_simplex_1e9(b, "beta_position");
  if (static_cast<int>(transition.size()) != K) throw ValidationError("transition wrong size");
  for (const auto& per_pos : transition) {
    if (static_cast<int>(per_pos.size()) != L) throw ValidationError("transition wrong size");
    for (const auto& dist : per_pos) check_simplex_1e9(dist, "transition atom");
  }
  if (emission.rows() != K || emission.cols() != dataset.alphabet_size)
    throw ValidationError("emission has wrong shape");
  for (int j = 0; j < K; ++j) {
    std::vector<double> row(emission.cols());
    for (int m = 0; m < emission.cols(); ++m) row[m] = emission(j, m);
    check_simplex_1e9(row, "emission row");
  }
  check_simplex_1e9(switch_weights, "switch distribution");
  check_simplex_1e9(leaf_prior, "leaf prior");

  if (states.size() != dataset.trees.size() || switches.size() != dataset.trees.size())
    throw ValidationError("assignments do not cover the dataset");
  for (size_t t = 0; t < dataset.trees.size(); ++t) {
    const LabeledTree& tree = dataset.trees[t];
    if (static_cast<int>(states[t].size()) != tree.node_count() + 1 ||
        static_cast<int>(switches[t].size()) != tree.node_count() + 1)
      throw ValidationError("assignments do not cover every node");
    for (int u = 1; u <= tree.node_count(); ++u) {
      if (states[t][u] < 0 || states[t][u] >= K)
        throw ValidationError("state assignment out of range");
      if (!tree.is_leaf(u)) {
        int l = switches[t][u];
        if (l < 0 || tree.child(u, l) == kNoNode)
          throw ValidationError("switch does not point at an occupied slot");
      }
    }
  }
}

std::vector<double> sample_gem(double gamma, int truncation, Rng& rng) {
  if (!(gamma > 0.0)) throw InputError("GEM concentration must be positive");
  if (truncation < 1) throw InputError("truncation must be >= 1");
  std::vector<double> w(truncation, 0.0);
  double remaining = 1.0;
  for (int k = 0; k + 1 < truncation; ++k) {
    double v = draw_beta(rng, 1.0, gamma);
    w[k] = v * remaining;
    remaining *= 1.0 - v;
  }
  w[truncation - 1] = remaining;  // absorb the tail so the sum is exact
  return w;
}

std::vector<double> sample_dp_weak_limit(double alpha, std::span<const double> base, Rng& rng) {
  if (!(alpha > 0.0)) throw InputError("DP concentration must be positive");
  if (base.empty()) throw InputError("DP base measure is empty");
  std::vector<double> conc(base.size());
  for (size_t k = 0; k < base.size(); ++k) {
    if (base[k] < 0.0) throw InputError("DP base measure has a negative entry");
    conc[k] = alpha * base[k];
  }
  return draw_dirichlet(rng, conc);
}

GibbsState init_state(const Dataset& dataset, const HdpHypers& hypers, std::uint64_t seed) {
  hypers.validate(dataset.max_outdegree);
  const int K = hypers.truncation;
  const int L = dataset.max_outdegree;
  const int M = dataset.alphabet_size;

  GibbsState state;
  state.rng = make_rng(seed);
  state.beta = sample_gem(hypers.top_concentration, K, state.rng);
  state.beta_position.resize(L);
  for (int l = 0; l < L; ++l)
    state.beta_position[l] =
        sample_dp_weak_limit(hypers.position_concentration[l], state.beta, state.rng);
  state.transition.assign(K, std::vector<std::vector<double>>(L));
  for (int j = 0; j < K; ++j) {
    for (int l = 0; l < L; ++l)
      state.transition[j][l] = sample_dp_weak_limit(hypers.transition_concentration,
                                                    state.beta_position[l], state.rng);
  }
  state.emission = Matrix(K, M);
  for (int j = 0; j < K; ++j) {
    auto row = draw_symmetric_dirichlet(state.rng, M, hypers.emission_base);
    for (int m = 0; m < M; ++m) state.emission(j, m) = row[m];
  }
  state.switch_weights = draw_symmetric_dirichlet(state.rng, L, hypers.switch_concentration);
  state.leaf_prior =
      sample_dp_weak_limit(hypers.transition_concentration, state.beta, state.rng);

  const int init_states = std::min(K, 10);
  std::uniform_int_distribution<int> state_draw(0, init_states - 1);
  state.states.resize(dataset.trees.size());
  state.switches.resize(dataset.trees.size());
  for (size_t t = 0; t < dataset.trees.size(); ++t) {
    const LabeledTree& tree = dataset.trees[t];
    state.states[t].assign(tree.node_count() + 1, 0);
    state.switches[t].assign(tree.node_count() + 1, -1);
    for (int u = 1; u <= tree.node_count(); ++u) {
      state.states[t][u] = state_draw(state.rng);
      if (!tree.is_leaf(u)) {
        std::vector<int> occupied;
        auto slots = tree.slots(u);
        for (size_t l = 0; l < slots.size(); ++l) {
          if (slots[l] != kNoNode) occupied.push_back(static_cast<int>(l));
        }
        std::uniform_int_distribution<int> pick(0, static_cast<int>(occupied.size()) - 1);
        state.switches[t][u] = occupied[pick(state.rng)];
      }
    }
  }
  return state;
}

namespace {

// Switch conditional at an internal node given its own and its children's
// states: proportional to phi'_l * pi_{child_state, l}(own state).
int draw_switch(GibbsState& state, const LabeledTree& tree, int t, int u) {
  auto sw = switch_over_node(state.switch_weights, tree, u);
  auto slots = tree.slots(u);
  std::vector<double> w(slots.size(), 0.0);
  int own = state.states[t][u];
  for (size_t l = 0; l < slots.size(); ++l) {
    if (slots[l] == kNoNode) continue;
    int child_state = state.states[t][slots[l]];
    w[l] = sw[l] * state.transition[child_state][l][own];
  }
  return draw_categorical(state.rng, w);
}

}  // namespace

void resample_assignments(GibbsState& state, const Dataset& dataset, const HdpHypers& hypers) {
  const int K = hypers.truncation;
  std::vector<double> weights(K);
  for (size_t t = 0; t < dataset.trees.size(); ++t) {
    const LabeledTree& tree = dataset.trees[t];
    for (int u = 1; u <= tree.node_count(); ++u) {
      // Incoming factor, with the node's own switch marginalized out.
      if (tree.is_leaf(u)) {
        for (int q = 0; q < K; ++q) weights[q] = state.leaf_prior[q];
      } else {
        std::fill(weights.begin(), weights.end(), 0.0);
        auto sw = switch_over_node(state.switch_weights, tree, u);
        auto slots = tree.slots(u);
        for (size_t l = 0; l < slots.size(); ++l) {
          if (slots[l] == kNoNode) continue;
          const auto& atom = state.transition[state.states[t][slots[l]]][l];
          for (int q = 0; q < K; ++q) weights[q] += sw[l] * atom[q];
        }
      }
      for (int q = 0; q < K; ++q) weights[q] *= state.emission(q, tree.label(u));
      // Outgoing factor: only live when the parent's switch selects u.
      int p = tree.parent(u);
      if (p != kNoNode && state.switches[t][p] == tree.parent_slot(u)) {
        int l = tree.parent_slot(u);
        int parent_state = state.states[t][p];
        for (int q = 0; q < K; ++q) weights[q] *= state.transition[q][l][parent_state];
      }
      state.states[t][u] = draw_categorical(state.rng, weights);
      // Completing the blocked (state, switch) update keeps the kernel
      // exact: the marginalized switch is redrawn from its conditional
      // before any neighbour conditions on it.
      if (!tree.is_leaf(u)) state.switches[t][u] = draw_switch(state, tree, t, u);
    }
  }
}

void resample_switches(GibbsState& state, const Dataset& dataset) {
  for (size_t t = 0; t < dataset.trees.size(); ++t) {
    const LabeledTree& tree = dataset.trees[t];
    for (int u = 1; u <= tree.node_count(); ++u) {
      if (!tree.is_leaf(u)) state.switches[t][u] = draw_switch(state, tree, t, u);
    }
  }
}

void resample_parameters(GibbsState& state, const Dataset& dataset, const HdpHypers& hypers) {
  const int K = hypers.truncation;
  const int L = dataset.max_outdegree;
  const int M = dataset.alphabet_size;

  std::vector<std::vector<std::vector<double>>> trans_counts(
      K, std::vector<std::vector<double>>(L, std::vector<double>(K, 0.0)));
  Matrix label_counts(K, M, 0.0);
  std::vector<double> switch_counts(L, 0.0);
  std::vector<double> leaf_counts(K, 0.0);

  for (size_t t = 0; t < dataset.trees.size(); ++t) {
    const LabeledTree& tree = dataset.trees[t];
    for (int u = 1; u <= tree.node_count(); ++u) {
      int q = state.states[t][u];
      label_counts(q, tree.label(u)) += 1.0;
      if (tree.is_leaf(u)) {
        leaf_counts[q] += 1.0;
      } else {
        int l = state.switches[t][u];
        int child_state = state.states[t][tree.child(u, l)];
        trans_counts[child_state][l][q] += 1.0;
        switch_counts[l] += 1.0;
      }
    }
  }

  std::vector<double> conc(K);
  for (int j = 0; j < K; ++j) {
    for (int l = 0; l < L; ++l) {
      for (int i = 0; i < K; ++i)
        conc[i] = hypers.transition_concentration * state.beta_position[l][i] +
                  trans_counts[j][l][i];
      state.transition[j][l] = draw_dirichlet(state.rng, conc);
    }
  }
  for (int j = 0; j < K; ++j) {
    std::vector<double> em_conc(M);
    for (int m = 0; m < M; ++m) em_conc[m] = hypers.emission_base + label_counts(j, m);
    auto row = draw_dirichlet(state.rng, em_conc);
    for (int m = 0; m < M; ++m) state.emission(j, m) = row[m];
  }
  std::vector<double> sw_conc(L);
  for (int l = 0; l < L; ++l) sw_conc[l] = hypers.switch_concentration + switch_counts[l];
  state.switch_weights = draw_dirichlet(state.rng, sw_conc);
  for (int i = 0; i < K; ++i)
    conc[i] = hypers.transition_concentration * state.beta[i] + leaf_counts[i];
  state.leaf_prior = draw_dirichlet(state.rng, conc);
}

void resample_sticks(GibbsState& state, const Dataset& dataset, const HdpHypers& hypers) {
  const int K = hypers.truncation;
  const int L = dataset.max_outdegree;

  // Hard transition counts per (child state j, position l, parent state i),
  // plus leaf-state counts, straight from the assignments.
  std::vector<std::vector<std::vector<int>>> trans_counts(
      K, std::vector<std::vector<int>>(L, std::vector<int>(K, 0)));
  std::vector<int> leaf_counts(K, 0);
  for (size_t t = 0; t < dataset.trees.size(); ++t) {
    const LabeledTree& tree = dataset.trees[t];
    for (int u = 1; u <= tree.node_count(); ++u) {
      if (tree.is_leaf(u)) {
        ++leaf_counts[state.states[t][u]];
      } else {
        int l = state.switches[t][u];
        ++trans_counts[state.states[t][tree.child(u, l)]][l][state.states[t][u]];
      }
    }
  }

  // Bottom-level tables: customers are transitions, restaurants are
  // (child state, position) contexts with base alpha_t * beta_l.
  std::vector<std::vector<int>> tables_position(L, std::vector<int>(K, 0));
  for (int j = 0; j < K; ++j) {
    for (int l = 0; l < L; ++l) {
      for (int i = 0; i < K; ++i) {
        tables_position[l][i] += sample_table_count(
            state.rng, trans_counts[j][l][i],
            hypers.transition_concentration * state.beta_position[l][i]);
      }
    }
  }
  // The leaf prior is treated as one more transition context based
  // directly on beta, so its tables feed the top level.
  std::vector<int> tables_top(K, 0);
  for (int i = 0; i < K; ++i) {
    tables_top[i] += sample_table_count(state.rng, leaf_counts[i],
                                        hypers.transition_concentration * state.beta[i]);
  }
  // Position-level tables feed the top level too.
  for (int l = 0; l < L; ++l) {
    for (int i = 0; i < K; ++i) {
      tables_top[i] += sample_table_count(state.rng, tables_position[l][i],
                                          hypers.position_concentration[l] * state.beta[i]);
    }
  }

  std::vector<double> conc(K);
  for (int i = 0; i < K; ++i)
    conc[i] = hypers.top_concentration / K + tables_top[i];
  state.beta = draw_dirichlet(state.rng, conc);
  for (int l = 0; l < L; ++l) {
    for (int i = 0; i < K; ++i)
      conc[i] = hypers.position_concentration[l] * state.beta[i] + tables_position[l][i];
    state.beta_position[l] = draw_dirichlet(state.rng, conc);
  }
}

void gibbs_sweep(GibbsState& state, const Dataset& dataset, const HdpHypers& hypers) {
  resample_assignments(state, dataset, hypers);
  resample_switches(state, dataset);
  resample_parameters(state, dataset, hypers);
  resample_sticks(state, dataset, hypers);
}

int active_states(const GibbsState& state) {
  std::vector<char> used;
  for (const auto& tree_states : state.states) {
    for (size_t u = 1; u < tree_states.size(); ++u) {
      int q = tree_states[u];
      if (q >= static_cast<int>(used.size())) used.resize(q + 1, 0);
      used[q] = 1;
    }
  }
  int n = 0;
  for (char c : used) n += c;
  return n;
}

BuParams embed_params(const GibbsState& state, int alphabet_size, int max_outdegree) {
  const int K = static_cast<int>(state.beta.size());
  BuParams p;
  p.state_count = K;
  p.alphabet_size = alphabet_size;
  p.max_outdegree = max_outdegree;
  p.leaf_prior = state.leaf_prior;
  p.transition.assign(max_outdegree, Matrix(K, K));
  for (int l = 0; l < max_outdegree; ++l) {
    for (int j = 0; j < K; ++j) {
      for (int i = 0; i < K; ++i) p.transition[l](i, j) = state.transition[j][l][i];
    }
  }
  p.switch_weights = state.switch_weights;
  p.emission = state.emission;
  p.validate();
  return p;
}

double joint_log_prob(const GibbsState& state, const Dataset& dataset) {
  BuParams params = embed_params(state, dataset.alphabet_size, dataset.max_outdegree);
  double total = 0.0;
  for (size_t t = 0; t < dataset.trees.size(); ++t)
    total += complete_log_prob_bu(params, dataset.trees[t], state.states[t], state.switches[t]);
  return total;
}

ChainResult run_chain(const Dataset& dataset, const HdpHypers& hypers, int sweeps, int burn_in,
                      int thin, std::uint64_t seed) {
  if (burn_in < 0 || sweeps <= burn_in) throw InputError("need sweeps > burn_in >= 0");
  if (thin < 1) throw InputError("thin must be >= 1");

  GibbsState state = init_state(dataset, hypers, seed);
  ChainResult result;
  for (int sweep = 1; sweep <= sweeps; ++sweep) {
    gibbs_sweep(state, dataset, hypers);
    SweepDiagnostics diag;
    diag.sweep = sweep;
    diag.joint_log_prob = joint_log_prob(state, dataset);
    diag.active_states = active_states(state);
    result.diagnostics.push_back(diag);
    if (sweep > burn_in && (sweep - burn_in - 1) % thin == 0) {
      GibbsSample sample;
      sample.sweep = sweep;
      sample.params = embed_params(state, dataset.alphabet_size, dataset.max_outdegree);
      sample.beta = state.beta;
      sample.beta_position = state.beta_position;
      sample.state_histogram.assign(hypers.truncation, 0);
      for (const auto& tree_states : state.states) {
        for (size_t u = 1; u < tree_states.size(); ++u) ++sample.state_histogram[tree_states[u]];
      }
      sample.active_states = diag.active_states;
      result.samples.push_back(std::move(sample));
    }
  }
  return result;
}

double predictive_score(const std::vector<GibbsSample>& samples, const LabeledTree& tree) {
  if (samples.empty()) throw InputError("predictive score needs at least one sample");
  std::vector<double> lls;
  lls.reserve(samples.size());
  for (const auto& s : samples) lls.push_back(upward_bu(s.params, tree).log_likelihood);
  return log_sum_exp(lls) - std::log(static_cast<double>(samples.size()));
}

std::string sample_to_json(const GibbsSample& sample) {
  nlohmann::json j =
      nlohmann::json::parse(model_to_json(ModelParams(sample.params)));
  j["sweep"] = sample.sweep;
  j["beta"] = sample.beta;
  j["beta_position"] = sample.beta_position;
  j["state_histogram"] = sample.state_histogram;
  j["active_states"] = sample.active_states;
  return j.dump() + "\n";
}

std::string diagnostics_to_csv(const std::vector<SweepDiagnostics>& diagnostics) {
  std::ostringstream out;
  out.precision(17);
  out << "sweep,joint_log_prob,active_states\n";
  for (const auto& d : diagnostics)
    out << d.sweep << ',' << d.joint_log_prob << ',' << d.active_states << '\n';
  return out.str();
}

}  // namespace treehmm
