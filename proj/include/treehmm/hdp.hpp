// Apache License, Version 2.0, refer to LICENSE.txt
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "treehmm/matrix.hpp"
#include "treehmm/params.hpp"
#include "treehmm/random.hpp"
#include "treehmm/tree.hpp"

namespace treehmm {

// Hyperparameters of the nonparametric BU model, realized by a weak-limit
// truncation at K states. Hyperparameters are fixed, never resampled.
struct HdpHypers {
  double top_concentration = 4.0;          // gamma, GEM prior on the shared sticks
  std::vector<double> position_concentration;  // alpha_l, one per child position
  double transition_concentration = 1.0;   // alpha_t
  double switch_concentration = 1.0;       // alpha_s, Dirichlet on the L-simplex
  double emission_base = 1.0;              // symmetric Dirichlet over the alphabet (base H)
  int truncation = 20;                     // K

  void validate(int max_outdegree) const;
  static HdpHypers defaults(int max_outdegree);
};

// Full sampler state: truncated sticks, per-position sticks, transition
// and emission atoms, switch distribution, leaf prior and per-node
// assignments. The RNG lives in the state so a chain's stream position is
// part of it.
struct GibbsState {
  std::vector<double> beta;                          // K shared stick weights
  std::vector<std::vector<double>> beta_position;    // L x K
  // transition[j][l][i] = P(parent state = i | child state = j at position l)
  std::vector<std::vector<std::vector<double>>> transition;
  Matrix emission;                                   // K x M
  std::vector<double> switch_weights;                // L
  std::vector<double> leaf_prior;                    // K
  std::vector<std::vector<int>> states;              // per tree, 1-based per node
  std::vector<std::vector<int>> switches;            // per tree, -1 for leaves
  Rng rng;

  void validate(const Dataset& dataset, const HdpHypers& hypers) const;
};

// Truncated stick-breaking draw: v_k ~ Beta(1, gamma), the last weight
// absorbs the remainder so the result sums to one exactly.
std::vector<double> sample_gem(double gamma, int truncation, Rng& rng);

// Finite weak-limit realization of a DP draw around `base`:
// Dirichlet(alpha * base). Zero base entries stay zero.
std::vector<double> sample_dp_weak_limit(double alpha, std::span<const double> base, Rng& rng);

GibbsState init_state(const Dataset& dataset, const HdpHypers& hypers, std::uint64_t seed);

// Sweep stages, exposed separately so tests can drive them in isolation.
// resample_assignments draws each node state with its own switch
// marginalized and immediately redraws that switch, which keeps the
// blocked update valid; resample_switches then rescans all switches.
void resample_assignments(GibbsState& state, const Dataset& dataset, const HdpHypers& hypers);
void resample_switches(GibbsState& state, const Dataset& dataset);
void resample_parameters(GibbsState& state, const Dataset& dataset, const HdpHypers& hypers);
void resample_sticks(GibbsState& state, const Dataset& dataset, const HdpHypers& hypers);

void gibbs_sweep(GibbsState& state, const Dataset& dataset, const HdpHypers& hypers);

// Number of distinct states used by the current assignments.
int active_states(const GibbsState& state);

// Complete-data log-probability of all trees under the state's current
// parameters and assignments; the per-sweep convergence diagnostic.
double joint_log_prob(const GibbsState& state, const Dataset& dataset);

// The state's parameters as a finite BU model of size K.
BuParams embed_params(const GibbsState& state, int alphabet_size, int max_outdegree);

struct GibbsSample {
  int sweep = 0;
  BuParams params;
  std::vector<double> beta;
  std::vector<std::vector<double>> beta_position;
  std::vector<int> state_histogram;  // assignment counts per state
  int active_states = 0;
};

struct SweepDiagnostics {
  int sweep = 0;
  double joint_log_prob = 0.0;
  int active_states = 0;
};

struct ChainResult {
  std::vector<GibbsSample> samples;
  std::vector<SweepDiagnostics> diagnostics;
};

ChainResult run_chain(const Dataset& dataset, const HdpHypers& hypers, int sweeps, int burn_in,
                      int thin, std::uint64_t seed);

// Posterior predictive: log-mean-exp over the samples of the tree's
// likelihood under each sample's embedded finite model.
double predictive_score(const std::vector<GibbsSample>& samples, const LabeledTree& tree);

std::string sample_to_json(const GibbsSample& sample);
std::string diagnostics_to_csv(const std::vector<SweepDiagnostics>& diagnostics);

}  // namespace treehmm
