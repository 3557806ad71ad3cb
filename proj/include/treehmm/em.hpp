// Apache License, Version 2.0, refer to LICENSE.txt
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "treehmm/inference.hpp"
#include "treehmm/params.hpp"
#include "treehmm/tree.hpp"

namespace treehmm {

struct EmConfig {
  int max_iters = 100;
  double rel_tol = 1e-6;      // on relative log-likelihood improvement
  double smoothing = 1e-6;    // additive pseudocount; 0 for strict EM
  std::uint64_t seed = 0;
  double init_concentration = 1.0;
  int restarts = 1;           // best of R independent seeded runs
  int threads = 1;

  void validate() const;
};

// log_likelihood[t] is the total log-likelihood of the parameters entering
// iteration t; the returned parameters of fit() are exactly the ones that
// produced the last entry.
struct EmTrace {
  std::vector<double> log_likelihood;
  int iterations = 0;  // number of M-steps applied
  bool converged = false;
};

// Expected sufficient statistics accumulated over a dataset, plus the
// total log-likelihood of the parameters they were computed under.
struct TdCounts {
  std::vector<double> root;  // C
  Matrix pair;               // C x C, (parent state, child state)
  Matrix label;              // C x M
  double total_log_likelihood = 0.0;
  int tree_count = 0;
};

struct BuCounts {
  std::vector<double> leaf;          // C
  std::vector<Matrix> pair;          // per position: C x C, (parent state, child state)
  std::vector<double> switch_counts; // L, posterior switch mass per position
  Matrix label;                      // C x M
  // Occupied-slot bitmask -> number of internal nodes with that occupancy.
  // Needed because the switch distribution is renormalized per node over
  // its occupied slots, which couples the switch update across patterns.
  std::map<std::uint32_t, double> occupancy;
  std::vector<double> switch_init;   // switch weights the counts were computed under
  double total_log_likelihood = 0.0;
  int tree_count = 0;
};

TdCounts e_step(const TdParams& params, const Dataset& dataset, int threads = 1);
BuCounts e_step(const BuParams& params, const Dataset& dataset, int threads = 1);

TdParams m_step(const TdCounts& counts, double smoothing);
BuParams m_step(const BuCounts& counts, double smoothing);

// Maximizes the switch part of the expected complete log-likelihood under
// per-node renormalization over occupied slots, by a minorize-maximize
// iteration started from `current`. Never decreases the objective, which
// keeps the full EM update monotone.
std::vector<double> maximize_switch_weights(const std::vector<double>& counts,
                                            const std::map<std::uint32_t, double>& occupancy,
                                            double smoothing, std::vector<double> current);

std::pair<TdParams, EmTrace> fit_td(const Dataset& dataset, int state_count,
                                    const EmConfig& config);
std::pair<BuParams, EmTrace> fit_bu(const Dataset& dataset, int state_count,
                                    const EmConfig& config);
std::pair<ModelParams, EmTrace> fit(ModelKind kind, const Dataset& dataset, int state_count,
                                    const EmConfig& config);

// CSV with header "iteration,log_likelihood".
std::string trace_to_csv(const EmTrace& trace);

}  // namespace treehmm
