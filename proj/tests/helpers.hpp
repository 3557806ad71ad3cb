// Apache License, Version 2.0, refer to LICENSE.txt
#pragma once

#include <cmath>
#include <vector>

#include "treehmm/inference.hpp"
#include "treehmm/params.hpp"
#include "treehmm/random.hpp"
#include "treehmm/tree.hpp"

namespace treehmm::testing {

inline bool near_abs(double a, double b, double tol) { return std::abs(a - b) <= tol; }

inline bool near_rel(double a, double b, double tol) {
  return std::abs(a - b) <= tol * std::max(1.0, std::max(std::abs(a), std::abs(b)));
}

inline LabeledTree with_random_labels(const LabeledTree& skeleton, int alphabet_size, Rng& rng) {
  std::uniform_int_distribution<int> label(0, alphabet_size - 1);
  std::vector<TreeNode> nodes(skeleton.node_count() + 1);
  for (int u = 1; u <= skeleton.node_count(); ++u) {
    nodes[u].label = label(rng);
    nodes[u].parent = skeleton.parent(u);
    nodes[u].parent_slot = skeleton.parent_slot(u);
    nodes[u].slots.assign(skeleton.slots(u).begin(), skeleton.slots(u).end());
  }
  return LabeledTree::from_nodes(std::move(nodes));
}

inline LabeledTree random_tree(Rng& rng, int max_nodes, int max_outdegree, int alphabet_size,
                               double child_prob = 0.6) {
  return with_random_labels(random_skeleton(rng, max_nodes, max_outdegree, child_prob),
                            alphabet_size, rng);
}

// Copy of `tree` with the subtrees at two slots of node u exchanged.
inline LabeledTree swap_child_subtrees(const LabeledTree& tree, int u, int slot_a, int slot_b) {
  std::vector<TreeNode> nodes(tree.node_count() + 1);
  for (int v = 1; v <= tree.node_count(); ++v) {
    nodes[v].label = tree.label(v);
    nodes[v].parent = tree.parent(v);
    nodes[v].parent_slot = tree.parent_slot(v);
    nodes[v].slots.assign(tree.slots(v).begin(), tree.slots(v).end());
  }
  int hi = std::max(slot_a, slot_b);
  if (hi >= static_cast<int>(nodes[u].slots.size())) nodes[u].slots.resize(hi + 1, kNoNode);
  std::swap(nodes[u].slots[slot_a], nodes[u].slots[slot_b]);
  for (int slot : {slot_a, slot_b}) {
    int c = nodes[u].slots[slot];
    if (c != kNoNode) nodes[c].parent_slot = slot;
  }
  return LabeledTree::from_nodes(std::move(nodes));
}

// First node with at least two occupied slots, or 0 if none.
inline int find_branching_node(const LabeledTree& tree) {
  for (int u = 1; u <= tree.node_count(); ++u) {
    if (tree.occupied_count(u) >= 2) return u;
  }
  return kNoNode;
}

inline long enumeration_work(const LabeledTree& tree, int state_count, int for_bu) {
  long work = 1;
  for (int u = 1; u <= tree.node_count(); ++u) {
    work *= state_count;
    if (work > 100'000'000L) return work;
    if (for_bu && !tree.is_leaf(u)) work *= tree.occupied_count(u);
  }
  return work;
}

}  // namespace treehmm::testing
