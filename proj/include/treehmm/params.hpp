// Apache License, Version 2.0, refer to LICENSE.txt
#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "treehmm/matrix.hpp"
#include "treehmm/random.hpp"
#include "treehmm/tree.hpp"

namespace treehmm {

enum class ModelKind { Td, Bu };

std::string to_string(ModelKind kind);
ModelKind model_kind_from_string(const std::string& s);

// Parameters of the root-to-leaves model: one state prior at the root, a
// position-independent transition P(Q_u = j | Q_pa(u) = i) as row i of
// `transition`, and per-state emission rows over the label alphabet.
struct TdParams {
  int state_count = 0;   // C
  int alphabet_size = 0; // M
  std::vector<double> root_prior;  // length C
  Matrix transition;               // C x C, rows sum to 1
  Matrix emission;                 // C x M, rows sum to 1

  void validate() const;  // simplex invariants, 1e-9 tolerance
};

// Parameters of the leaves-to-root model: leaves draw their state from a
// prior; an internal node picks one occupied child slot via the switch
// distribution and draws its state from that slot's child-conditional
// transition. transition[l](i, j) = P(Q_u = i | Q_child_at_l = j), so
// columns sum to 1. The switch distribution is shared across nodes and is
// renormalized over a node's occupied slots at every point of use.
struct BuParams {
  int state_count = 0;    // C
  int alphabet_size = 0;  // M
  int max_outdegree = 0;  // L
  std::vector<double> leaf_prior;      // length C
  std::vector<Matrix> transition;      // L matrices, C x C, columns sum to 1
  std::vector<double> switch_weights;  // length L
  Matrix emission;                     // C x M, rows sum to 1

  void validate() const;

  // switch_weights restricted to the node's occupied slots and renormalized.
  // Throws NumericalError if the occupied slots carry zero total weight.
  std::vector<double> switch_over(const LabeledTree& tree, int u) const;
};

using ModelParams = std::variant<TdParams, BuParams>;

ModelKind kind_of(const ModelParams& params);

// Every distribution drawn from a symmetric Dirichlet with the given
// concentration. Deterministic per seed.
TdParams init_random_td(int state_count, int alphabet_size, std::uint64_t seed,
                        double concentration = 1.0);
BuParams init_random_bu(int state_count, int alphabet_size, int max_outdegree,
                        std::uint64_t seed, double concentration = 1.0);

// Log-probability of one complete-data configuration: the single term of
// the model's sum over hidden assignments selected by `states` (and, for
// the BU model, by the per-internal-node switch choices). states and
// switches are 1-based per node; switches entries are ignored for leaves.
double complete_log_prob_td(const TdParams& params, const LabeledTree& tree,
                            const std::vector<int>& states);
double complete_log_prob_bu(const BuParams& params, const LabeledTree& tree,
                            const std::vector<int>& states, const std::vector<int>& switches);

// Ancestral sampling of labels over a fixed skeleton (labels of the
// skeleton are ignored). TD draws states root-to-leaves, BU leaves-to-root.
LabeledTree sample_tree(const TdParams& params, const LabeledTree& skeleton, Rng& rng);
LabeledTree sample_tree(const BuParams& params, const LabeledTree& skeleton, Rng& rng);

// Model file: JSON object with kind, dimensions and the distribution
// arrays in linear space; the reader re-validates all invariants.
std::string model_to_json(const ModelParams& params);
ModelParams model_from_json(const std::string& json_text);
void save_model(const ModelParams& params, const std::string& path);
ModelParams load_model(const std::string& path);

}  // namespace treehmm
