// Apache License, Version 2.0, refer to LICENSE.txt
#include "treehmm/tree.hpp"

#include <fstream>
#include <sstream>

namespace treehmm {

namespace {

void trim_trailing_gaps(std::vector<int>& slots) {
  while (!slots.empty() && slots.back() == kNoNode) slots.pop_back();
}

}  // namespace

std::optional<std::string> check_structure(const std::vector<TreeNode>& nodes) {
  const int n = static_cast<int>(nodes.size()) - 1;
  if (n < 1) return "tree has no nodes";

  int roots = 0;
  for (int u = 1; u <= n; ++u) {
    if (nodes[u].parent == kNoNode) ++roots;
  }
  if (roots != 1) return "tree must have exactly one root, found " + std::to_string(roots);

  for (int u = 1; u <= n; ++u) {
    const TreeNode& node = nodes[u];
    if (node.parent != kNoNode) {
      if (node.parent < 1 || node.parent > n)
        return "node " + std::to_string(u) + " has out-of-range parent";
      const TreeNode& p = nodes[node.parent];
      if (node.parent_slot < 0 || node.parent_slot >= static_cast<int>(p.slots.size()) ||
          p.slots[node.parent_slot] != u)
        return "node " + std::to_string(u) + " disagrees with its parent's slot table";
    }
    for (size_t l = 0; l < node.slots.size(); ++l) {
      int c = node.slots[l];
      if (c == kNoNode) continue;
      if (c < 1 || c > n) return "node " + std::to_string(u) + " has out-of-range child";
      if (nodes[c].parent != u || nodes[c].parent_slot != static_cast<int>(l))
        return "child link from node " + std::to_string(u) + " slot " + std::to_string(l) +
               " is not mirrored";
    }
  }

  // Reachability from the root; count == n rules out cycles and orphans.
  int root = 0;
  for (int u = 1; u <= n; ++u) {
    if (nodes[u].parent == kNoNode) root = u;
  }
  std::vector<int> stack = {root};
  int seen = 0;
  while (!stack.empty()) {
    int u = stack.back();
    stack.pop_back();
    ++seen;
    if (seen > n) return "tree contains a cycle";
    for (int c : nodes[u].slots) {
      if (c != kNoNode) stack.push_back(c);
    }
  }
  if (seen != n) return "tree has unreachable nodes (" + std::to_string(n - seen) + ")";
  return std::nullopt;
}

int LabeledTree::occupied_count(int u) const {
  int k = 0;
  for (int c : nodes_[u].slots) {
    if (c != kNoNode) ++k;
  }
  return k;
}

int LabeledTree::out_degree() const {
  size_t l = 0;
  for (int u = 1; u <= node_count(); ++u) l = std::max(l, nodes_[u].slots.size());
  return static_cast<int>(l);
}

int LabeledTree::leaf_count() const {
  int k = 0;
  for (int u = 1; u <= node_count(); ++u) {
    if (is_leaf(u)) ++k;
  }
  return k;
}

bool LabeledTree::structurally_equal(const LabeledTree& other) const {
  if (node_count() != other.node_count()) return false;
  for (int u = 1; u <= node_count(); ++u) {
    const TreeNode& a = nodes_[u];
    const TreeNode& b = other.nodes_[u];
    if (a.label != b.label || a.parent != b.parent || a.parent_slot != b.parent_slot ||
        a.slots != b.slots)
      return false;
  }
  return true;
}

LabeledTree LabeledTree::from_nodes(std::vector<TreeNode> nodes) {
  for (size_t u = 1; u < nodes.size(); ++u) trim_trailing_gaps(nodes[u].slots);
  if (auto err = check_structure(nodes)) throw ValidationError(*err);

  const int n = static_cast<int>(nodes.size()) - 1;
  int root = 0;
  for (int u = 1; u <= n; ++u) {
    if (nodes[u].parent == kNoNode) root = u;
  }

  // Renumber depth-first, slot-ascending, so parents precede children.
  std::vector<int> old_to_new(nodes.size(), kNoNode);
  std::vector<int> order;
  order.reserve(n);
  std::vector<int> stack = {root};
  while (!stack.empty()) {
    int u = stack.back();
    stack.pop_back();
    order.push_back(u);
    const auto& slots = nodes[u].slots;
    for (size_t l = slots.size(); l-- > 0;) {
      if (slots[l] != kNoNode) stack.push_back(slots[l]);
    }
  }
  for (int i = 0; i < n; ++i) old_to_new[order[i]] = i + 1;

  LabeledTree tree;
  tree.nodes_.resize(n + 1);
  for (int u = 1; u <= n; ++u) {
    TreeNode node = nodes[order[u - 1]];
    node.parent = node.parent == kNoNode ? kNoNode : old_to_new[node.parent];
    for (int& c : node.slots) {
      if (c != kNoNode) c = old_to_new[c];
    }
    tree.nodes_[u] = std::move(node);
  }
  return tree;
}

int TreeBuilder::add_root(int label) {
  if (nodes_.size() != 1) throw ValidationError("root already added");
  nodes_.push_back(TreeNode{label, kNoNode, -1, {}});
  return 1;
}

int TreeBuilder::add_child(int parent_id, int slot, int label) {
  if (parent_id < 1 || parent_id >= static_cast<int>(nodes_.size()))
    throw ValidationError("unknown parent id " + std::to_string(parent_id));
  if (slot < 0) throw ValidationError("negative child slot");
  TreeNode& p = nodes_[parent_id];
  if (slot < static_cast<int>(p.slots.size()) && p.slots[slot] != kNoNode)
    throw ValidationError("slot " + std::to_string(slot) + " already occupied");
  if (slot >= static_cast<int>(p.slots.size())) p.slots.resize(slot + 1, kNoNode);
  int id = static_cast<int>(nodes_.size());
  nodes_.push_back(TreeNode{label, parent_id, slot, {}});
  p.slots[slot] = id;
  return id;
}

LabeledTree TreeBuilder::build() && { return LabeledTree::from_nodes(std::move(nodes_)); }

void validate_tree(const LabeledTree& tree, int alphabet_size, int max_outdegree) {
  for (int u = 1; u <= tree.node_count(); ++u) {
    int label = tree.label(u);
    if (label < 0 || label >= alphabet_size)
      throw ValidationError("label " + std::to_string(label) + " at node " + std::to_string(u) +
                            " outside alphabet of size " + std::to_string(alphabet_size));
    if (static_cast<int>(tree.slots(u).size()) > max_outdegree)
      throw ValidationError("node " + std::to_string(u) + " uses slot " +
                            std::to_string(tree.slots(u).size() - 1) + ", beyond max out-degree " +
                            std::to_string(max_outdegree));
  }
}

namespace {

struct Lexer {
  const std::string& text;
  size_t pos = 0;

  void skip_ws() {
    while (pos < text.size() && std::isspace(static_cast<unsigned char>(text[pos]))) ++pos;
  }

  // Token kinds: '(', ')', '_', or a label ('0' stands for any integer).
  char peek() {
    skip_ws();
    if (pos >= text.size()) return '\0';
    char c = text[pos];
    if (c == '(' || c == ')' || c == '_') return c;
    if (std::isdigit(static_cast<unsigned char>(c))) return '0';
    throw ParseError(std::string("unexpected character '") + c + "'", pos);
  }

  void expect(char kind) {
    if (peek() != kind)
      throw ParseError(std::string("expected '") + kind + "'", pos);
    ++pos;
  }

  int read_label() {
    if (peek() != '0') throw ParseError("expected a label", pos);
    size_t start = pos;
    long v = 0;
    while (pos < text.size() && std::isdigit(static_cast<unsigned char>(text[pos]))) {
      v = v * 10 + (text[pos] - '0');
      if (v > 1'000'000'000L) throw ParseError("label too large", start);
      ++pos;
    }
    return static_cast<int>(v);
  }
};

int parse_node(Lexer& lex, TreeBuilder& builder, int parent, int slot) {
  lex.expect('(');
  int label = lex.read_label();
  int id = parent == kNoNode ? builder.add_root(label) : builder.add_child(parent, slot, label);
  int child_slot = 0;
  while (true) {
    char k = lex.peek();
    if (k == ')') {
      ++lex.pos;
      return id;
    }
    if (k == '_') {
      ++lex.pos;
      ++child_slot;
    } else if (k == '(') {
      parse_node(lex, builder, id, child_slot);
      ++child_slot;
    } else {
      throw ParseError("expected a subtree, '_' or ')'", lex.pos);
    }
  }
}

}  // namespace

LabeledTree parse_tree(const std::string& text, int alphabet_size, int max_outdegree) {
  Lexer lex{text};
  TreeBuilder builder;
  parse_node(lex, builder, kNoNode, 0);
  if (lex.peek() != '\0') throw ParseError("trailing content after tree", lex.pos);
  LabeledTree tree = std::move(builder).build();
  validate_tree(tree, alphabet_size, max_outdegree);
  return tree;
}

namespace {

void serialize_node(const LabeledTree& tree, int u, std::string& out) {
  out += '(';
  out += std::to_string(tree.label(u));
  for (int c : tree.slots(u)) {
    out += ' ';
    if (c == kNoNode) {
      out += '_';
    } else {
      serialize_node(tree, c, out);
    }
  }
  out += ')';
}

}  // namespace

std::string serialize_tree(const LabeledTree& tree) {
  std::string out;
  serialize_node(tree, 1, out);
  return out;
}

int Dataset::total_nodes() const {
  int n = 0;
  for (const auto& t : trees) n += t.node_count();
  return n;
}

Dataset parse_dataset(const std::string& text, int alphabet_size, int max_outdegree) {
  Dataset ds;
  ds.alphabet_size = alphabet_size;
  ds.max_outdegree = max_outdegree;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    size_t first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    try {
      ds.trees.push_back(parse_tree(line, alphabet_size, max_outdegree));
    } catch (const InputError& e) {
      throw InputError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return ds;
}

Dataset load_dataset(const std::string& path, int alphabet_size, int max_outdegree) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open dataset file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return parse_dataset(buf.str(), alphabet_size, max_outdegree);
  } catch (const InputError& e) {
    throw InputError(path + ": " + e.what());
  }
}

void save_dataset(const Dataset& dataset, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write dataset file: " + path);
  for (const auto& t : dataset.trees) out << serialize_tree(t) << '\n';
  if (!out) throw InputError("failed writing dataset file: " + path);
}

LabeledTree random_skeleton(Rng& rng, int max_nodes, int max_outdegree, double child_prob) {
  if (max_nodes < 1) throw InputError("skeleton needs at least one node");
  if (max_outdegree < 1) throw InputError("skeleton max out-degree must be >= 1");
  if (!(child_prob >= 0.0 && child_prob <= 1.0))
    throw InputError("child probability must be in [0, 1]");
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  TreeBuilder builder;
  int budget = max_nodes - 1;
  std::vector<int> frontier = {builder.add_root(0)};
  for (size_t f = 0; f < frontier.size() && budget > 0; ++f) {
    for (int l = 0; l < max_outdegree && budget > 0; ++l) {
      if (unif(rng) < child_prob) {
        frontier.push_back(builder.add_child(frontier[f], l, 0));
        --budget;
      }
    }
  }
  return std::move(builder).build();
}

}  // namespace treehmm
