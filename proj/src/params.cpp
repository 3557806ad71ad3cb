// Apache License, Version 2.0, refer to LICENSE.txt
#include "treehmm/params.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "treehmm/errors.hpp"
#include "treehmm/logspace.hpp"

namespace treehmm {

namespace {

constexpr double kSimplexTol = 1e-9;

void check_simplex(std::span<const double> p, const std::string& what) {
  double sum = 0.0;
  for (double x : p) {
    if (x < 0.0 || !std::isfinite(x))
      throw ValidationError(what + " has a negative or non-finite entry");
    sum += x;
  }
  if (std::abs(sum - 1.0) > kSimplexTol)
    throw ValidationError(what + " sums to " + std::to_string(sum) + ", expected 1");
}

void check_rows(const Matrix& m, const std::string& what) {
  for (int i = 0; i < m.rows(); ++i) {
    std::vector<double> row(m.cols());
    for (int j = 0; j < m.cols(); ++j) row[j] = m(i, j);
    check_simplex(row, what + " row " + std::to_string(i));
  }
}

void check_cols(const Matrix& m, const std::string& what) {
  for (int j = 0; j < m.cols(); ++j) {
    std::vector<double> col(m.rows());
    for (int i = 0; i < m.rows(); ++i) col[i] = m(i, j);
    check_simplex(col, what + " column " + std::to_string(j));
  }
}

}  // namespace

std::string to_string(ModelKind kind) { return kind == ModelKind::Td ? "td" : "bu"; }

ModelKind model_kind_from_string(const std::string& s) {
  if (s == "td") return ModelKind::Td;
  if (s == "bu") return ModelKind::Bu;
  throw InputError("unknown model kind '" + s + "', expected td or bu");
}

ModelKind kind_of(const ModelParams& params) {
  return std::holds_alternative<TdParams>(params) ? ModelKind::Td : ModelKind::Bu;
}

void TdParams::validate() const {
  if (state_count < 1 || alphabet_size < 1)
    throw ValidationError("td model dimensions must be positive");
  if (static_cast<int>(root_prior.size()) != state_count ||
      transition.rows() != state_count || transition.cols() != state_count ||
      emission.rows() != state_count || emission.cols() != alphabet_size)
    throw ValidationError("td parameter shapes do not match (C, M)");
  check_simplex(root_prior, "root prior");
  check_rows(transition, "transition");
  check_rows(emission, "emission");
}

void BuParams::validate() const {
  if (state_count < 1 || alphabet_size < 1 || max_outdegree < 1)
    throw ValidationError("bu model dimensions must be positive");
  if (static_cast<int>(leaf_prior.size()) != state_count ||
      static_cast<int>(transition.size()) != max_outdegree ||
      static_cast<int>(switch_weights.size()) != max_outdegree ||
      emission.rows() != state_count || emission.cols() != alphabet_size)
    throw ValidationError("bu parameter shapes do not match (C, M, L)");
  check_simplex(leaf_prior, "leaf prior");
  for (int l = 0; l < max_outdegree; ++l) {
    if (transition[l].rows() != state_count || transition[l].cols() != state_count)
      throw ValidationError("bu transition matrix " + std::to_string(l) + " has wrong shape");
    check_cols(transition[l], "transition[" + std::to_string(l) + "]");
  }
  check_simplex(switch_weights, "switch distribution");
  check_rows(emission, "emission");
}

std::vector<double> BuParams::switch_over(const LabeledTree& tree, int u) const {
  auto slots = tree.slots(u);
  std::vector<double> w(slots.size(), 0.0);
  double total = 0.0;
  for (size_t l = 0; l < slots.size(); ++l) {
    if (slots[l] != kNoNode) {
      w[l] = switch_weights[l];
      total += w[l];
    }
  }
  if (!(total > 0.0))
    throw NumericalError("switch distribution carries no mass on node's occupied slots");
  for (double& x : w) x /= total;
  return w;
}

TdParams init_random_td(int state_count, int alphabet_size, std::uint64_t seed,
                        double concentration) {
  if (state_count < 1 || alphabet_size < 1)
    throw InputError("model dimensions must be positive");
  Rng rng = make_rng(seed);
  TdParams p;
  p.state_count = state_count;
  p.alphabet_size = alphabet_size;
  p.root_prior = draw_symmetric_dirichlet(rng, state_count, concentration);
  p.transition = Matrix(state_count, state_count);
  for (int i = 0; i < state_count; ++i) {
    auto row = draw_symmetric_dirichlet(rng, state_count, concentration);
    for (int j = 0; j < state_count; ++j) p.transition(i, j) = row[j];
  }
  p.emission = Matrix(state_count, alphabet_size);
  for (int i = 0; i < state_count; ++i) {
    auto row = draw_symmetric_dirichlet(rng, alphabet_size, concentration);
    for (int m = 0; m < alphabet_size; ++m) p.emission(i, m) = row[m];
  }
  p.validate();
  return p;
}

BuParams init_random_bu(int state_count, int alphabet_size, int max_outdegree,
                        std::uint64_t seed, double concentration) {
  if (state_count < 1 || alphabet_size < 1 || max_outdegree < 1)
    throw InputError("model dimensions must be positive");
  Rng rng = make_rng(seed);
  BuParams p;
  p.state_count = state_count;
  p.alphabet_size = alphabet_size;
  p.max_outdegree = max_outdegree;
  p.leaf_prior = draw_symmetric_dirichlet(rng, state_count, concentration);
  p.transition.assign(max_outdegree, Matrix(state_count, state_count));
  for (int l = 0; l < max_outdegree; ++l) {
    for (int j = 0; j < state_count; ++j) {
      auto col = draw_symmetric_dirichlet(rng, state_count, concentration);
      for (int i = 0; i < state_count; ++i) p.transition[l](i, j) = col[i];
    }
  }
  p.switch_weights = draw_symmetric_dirichlet(rng, max_outdegree, concentration);
  p.emission = Matrix(state_count, alphabet_size);
  for (int i = 0; i < state_count; ++i) {
    auto row = draw_symmetric_dirichlet(rng, alphabet_size, concentration);
    for (int m = 0; m < alphabet_size; ++m) p.emission(i, m) = row[m];
  }
  p.validate();
  return p;
}

namespace {

void check_assignment(const LabeledTree& tree, const std::vector<int>& states, int state_count) {
  if (static_cast<int>(states.size()) != tree.node_count() + 1)
    throw InputError("state assignment must cover every node (1-based)");
  for (int u = 1; u <= tree.node_count(); ++u) {
    if (states[u] < 0 || states[u] >= state_count)
      throw InputError("state assignment out of range at node " + std::to_string(u));
  }
}

}  // namespace

double complete_log_prob_td(const TdParams& params, const LabeledTree& tree,
                            const std::vector<int>& states) {
  check_assignment(tree, states, params.state_count);
  double lp = log_or_zero(params.root_prior[states[1]]);
  lp += log_or_zero(params.emission(states[1], tree.label(1)));
  for (int u = 2; u <= tree.node_count(); ++u) {
    lp += log_or_zero(params.emission(states[u], tree.label(u)));
    lp += log_or_zero(params.transition(states[tree.parent(u)], states[u]));
  }
  return lp;
}

double complete_log_prob_bu(const BuParams& params, const LabeledTree& tree,
                            const std::vector<int>& states, const std::vector<int>& switches) {
  check_assignment(tree, states, params.state_count);
  if (static_cast<int>(switches.size()) != tree.node_count() + 1)
    throw InputError("switch assignment must cover every node (1-based)");
  double lp = 0.0;
  for (int u = 1; u <= tree.node_count(); ++u) {
    lp += log_or_zero(params.emission(states[u], tree.label(u)));
    if (tree.is_leaf(u)) {
      lp += log_or_zero(params.leaf_prior[states[u]]);
    } else {
      int l = switches[u];
      if (l < 0 || tree.child(u, l) == kNoNode)
        throw InputError("switch at node " + std::to_string(u) + " points at an empty slot");
      auto sw = params.switch_over(tree, u);
      lp += log_or_zero(sw[l]);
      lp += log_or_zero(params.transition[l](states[u], states[tree.child(u, l)]));
    }
  }
  return lp;
}

LabeledTree sample_tree(const TdParams& params, const LabeledTree& skeleton, Rng& rng) {
  const int n = skeleton.node_count();
  std::vector<int> state(n + 1, 0);
  std::vector<TreeNode> nodes(n + 1);
  // Parents precede children in canonical order, so a single forward scan
  // is a root-to-leaves traversal.
  for (int u = 1; u <= n; ++u) {
    if (u == 1) {
      state[u] = draw_categorical(rng, params.root_prior);
    } else {
      int pi = state[skeleton.parent(u)];
      std::vector<double> row(params.state_count);
      for (int j = 0; j < params.state_count; ++j) row[j] = params.transition(pi, j);
      state[u] = draw_categorical(rng, row);
    }
    std::vector<double> em(params.alphabet_size);
    for (int m = 0; m < params.alphabet_size; ++m) em[m] = params.emission(state[u], m);
    nodes[u].label = draw_categorical(rng, em);
    nodes[u].parent = skeleton.parent(u);
    nodes[u].parent_slot = skeleton.parent_slot(u);
    nodes[u].slots.assign(skeleton.slots(u).begin(), skeleton.slots(u).end());
  }
  return LabeledTree::from_nodes(std::move(nodes));
}

LabeledTree sample_tree(const BuParams& params, const LabeledTree& skeleton, Rng& rng) {
  const int n = skeleton.node_count();
  if (skeleton.out_degree() > params.max_outdegree)
    throw InputError("skeleton out-degree exceeds the model's max out-degree");
  std::vector<int> state(n + 1, 0);
  // Children first: reverse canonical order visits leaves before parents.
  for (int u = n; u >= 1; --u) {
    if (skeleton.is_leaf(u)) {
      state[u] = draw_categorical(rng, params.leaf_prior);
    } else {
      auto sw = params.switch_over(skeleton, u);
      int l = draw_categorical(rng, sw);
      int child_state = state[skeleton.child(u, l)];
      std::vector<double> col(params.state_count);
      for (int i = 0; i < params.state_count; ++i) col[i] = params.transition[l](i, child_state);
      state[u] = draw_categorical(rng, col);
    }
  }
  std::vector<TreeNode> nodes(n + 1);
  for (int u = 1; u <= n; ++u) {
    std::vector<double> em(params.alphabet_size);
    for (int m = 0; m < params.alphabet_size; ++m) em[m] = params.emission(state[u], m);
    nodes[u].label = draw_categorical(rng, em);
    nodes[u].parent = skeleton.parent(u);
    nodes[u].parent_slot = skeleton.parent_slot(u);
    nodes[u].slots.assign(skeleton.slots(u).begin(), skeleton.slots(u).end());
  }
  return LabeledTree::from_nodes(std::move(nodes));
}

namespace {

using nlohmann::json;

json matrix_to_json(const Matrix& m) {
  json rows = json::array();
  for (int i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (int j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Matrix matrix_from_json(const json& j, const std::string& what) {
  if (!j.is_array() || j.empty()) throw InputError(what + ": expected a non-empty 2d array");
  int rows = static_cast<int>(j.size());
  int cols = static_cast<int>(j[0].size());
  Matrix m(rows, cols);
  for (int i = 0; i < rows; ++i) {
    if (static_cast<int>(j[i].size()) != cols) throw InputError(what + ": ragged rows");
    for (int c = 0; c < cols; ++c) m(i, c) = j[i][c].get<double>();
  }
  return m;
}

}  // namespace

std::string model_to_json(const ModelParams& params) {
  json j;
  if (const auto* td = std::get_if<TdParams>(&params)) {
    j["kind"] = "td";
    j["C"] = td->state_count;
    j["M"] = td->alphabet_size;
    j["root_prior"] = td->root_prior;
    j["transition"] = matrix_to_json(td->transition);
    j["emission"] = matrix_to_json(td->emission);
  } else {
    const auto& bu = std::get<BuParams>(params);
    j["kind"] = "bu";
    j["C"] = bu.state_count;
    j["M"] = bu.alphabet_size;
    j["L"] = bu.max_outdegree;
    j["leaf_prior"] = bu.leaf_prior;
    json trans = json::array();
    for (const auto& m : bu.transition) trans.push_back(matrix_to_json(m));
    j["transition"] = std::move(trans);
    j["switch"] = bu.switch_weights;
    j["emission"] = matrix_to_json(bu.emission);
  }
  return j.dump(2) + "\n";
}

ModelParams model_from_json(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw InputError(std::string("model file is not valid JSON: ") + e.what());
  }
  try {
    ModelKind kind = model_kind_from_string(j.at("kind").get<std::string>());
    if (kind == ModelKind::Td) {
      TdParams p;
      p.state_count = j.at("C").get<int>();
      p.alphabet_size = j.at("M").get<int>();
      p.root_prior = j.at("root_prior").get<std::vector<double>>();
      p.transition = matrix_from_json(j.at("transition"), "transition");
      p.emission = matrix_from_json(j.at("emission"), "emission");
      p.validate();
      return p;
    }
    BuParams p;
    p.state_count = j.at("C").get<int>();
    p.alphabet_size = j.at("M").get<int>();
    p.max_outdegree = j.at("L").get<int>();
    p.leaf_prior = j.at("leaf_prior").get<std::vector<double>>();
    const json& trans = j.at("transition");
    for (const auto& m : trans) p.transition.push_back(matrix_from_json(m, "transition"));
    p.switch_weights = j.at("switch").get<std::vector<double>>();
    p.emission = matrix_from_json(j.at("emission"), "emission");
    p.validate();
    return p;
  } catch (const json::exception& e) {
    throw InputError(std::string("model file is missing fields: ") + e.what());
  }
}

void save_model(const ModelParams& params, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write model file: " + path);
  out << model_to_json(params);
  if (!out) throw InputError("failed writing model file: " + path);
}

ModelParams load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open model file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return model_from_json(buf.str());
}

}  // namespace treehmm
