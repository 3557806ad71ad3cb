// Apache License, Version 2.0, refer to LICENSE.txt
#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "treehmm/errors.hpp"
#include "treehmm/random.hpp"

namespace treehmm {

// Node slot in a positional tree: a node has up to L child slots, and a
// slot is either empty or holds a child. Index 0 is reserved (it doubles
// as the "no node / empty slot" sentinel), the root is always index 1.
inline constexpr int kNoNode = 0;

struct TreeNode {
  int label = 0;
  int parent = kNoNode;       // kNoNode for the root
  int parent_slot = -1;       // slot this node occupies in its parent, -1 for the root
  std::vector<int> slots;     // child index per slot, kNoNode = gap; trailing gaps trimmed
};

// Structural sanity of a 1-based node array (nodes[0] is ignored):
// exactly one root, parent/slot links consistent, all nodes reachable
// from the root (which rules out cycles). Returns a description of the
// first violation, or nullopt if the structure is a valid tree.
std::optional<std::string> check_structure(const std::vector<TreeNode>& nodes);

// Immutable labeled rooted positional tree. Nodes are numbered 1..node_count()
// in depth-first, slot-ascending order, so a parent always precedes its
// children; leaf-to-root passes can simply iterate indices downwards.
class LabeledTree {
 public:
  LabeledTree() = default;

  int node_count() const { return static_cast<int>(nodes_.size()) - 1; }
  int label(int u) const { return nodes_[u].label; }
  int parent(int u) const { return nodes_[u].parent; }
  int parent_slot(int u) const { return nodes_[u].parent_slot; }
  std::span<const int> slots(int u) const { return nodes_[u].slots; }
  int child(int u, int l) const {
    const auto& s = nodes_[u].slots;
    return l < static_cast<int>(s.size()) ? s[l] : kNoNode;
  }
  bool is_leaf(int u) const { return nodes_[u].slots.empty(); }
  int occupied_count(int u) const;
  // Largest occupied slot index over all nodes, plus one. 0 for a single node.
  int out_degree() const;
  int leaf_count() const;

  bool structurally_equal(const LabeledTree& other) const;

  // Builds from a raw 1-based node array after checking structure; node
  // indices are canonicalized to depth-first order.
  static LabeledTree from_nodes(std::vector<TreeNode> nodes);

 private:
  std::vector<TreeNode> nodes_ = {TreeNode{}};  // slot 0 reserved
};

// Incremental construction helper used by the parser, the samplers and tests.
class TreeBuilder {
 public:
  // Returns the new node's provisional id. The first added node is the root.
  int add_root(int label);
  int add_child(int parent_id, int slot, int label);
  // Canonicalizes indices and validates structure.
  LabeledTree build() &&;

 private:
  std::vector<TreeNode> nodes_ = {TreeNode{}};
};

// Checks label range and out-degree against a dataset alphabet/arity
// declaration; throws ValidationError on the first violation.
void validate_tree(const LabeledTree& tree, int alphabet_size, int max_outdegree);

// Text format, one tree per line:  tree := "(" INT child* ")",
// child := tree | "_",  INT := decimal >= 0. "_" marks an empty slot;
// trailing empty slots are omitted on output.
LabeledTree parse_tree(const std::string& text, int alphabet_size, int max_outdegree);
std::string serialize_tree(const LabeledTree& tree);

struct Dataset {
  std::vector<LabeledTree> trees;
  int alphabet_size = 0;
  int max_outdegree = 0;

  int total_nodes() const;
};

// One tree per non-empty line; '#' starts a comment line. Parse errors
// are rethrown with the offending line number.
Dataset load_dataset(const std::string& path, int alphabet_size, int max_outdegree);
Dataset parse_dataset(const std::string& text, int alphabet_size, int max_outdegree);
void save_dataset(const Dataset& dataset, const std::string& path);

// Random skeleton (all labels 0): breadth-first growth where every slot
// of a frontier node spawns a child with probability child_prob until
// max_nodes is reached.
LabeledTree random_skeleton(Rng& rng, int max_nodes, int max_outdegree, double child_prob);

}  // namespace treehmm
