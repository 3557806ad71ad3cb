// Apache License, Version 2.0, refer to LICENSE.txt
#include "treehmm/em.hpp"

#include <cmath>
#include <sstream>

#include "treehmm/errors.hpp"
#include "treehmm/parallel.hpp"

namespace treehmm {

void EmConfig::validate() const {
  if (max_iters < 1) throw InputError("max_iters must be >= 1");
  if (!(rel_tol > 0.0)) throw InputError("rel_tol must be positive");
  if (smoothing < 0.0) throw InputError("smoothing must be >= 0");
  if (init_concentration <= 0.0) throw InputError("init_concentration must be positive");
  if (restarts < 1) throw InputError("restarts must be >= 1");
  if (threads < 1) throw InputError("threads must be >= 1");
}

namespace {

std::vector<double> normalize_counts(const std::vector<double>& counts, double smoothing,
                                     const std::string& what) {
  double sum = 0.0;
  std::vector<double> p(counts.size());
  for (size_t i = 0; i < counts.size(); ++i) {
    if (counts[i] < 0.0) throw NumericalError("negative count in " + what);
    p[i] = counts[i] + smoothing;
    sum += p[i];
  }
  if (sum <= 0.0) {
    // Dead distribution: uniform tie-break.
    std::fill(p.begin(), p.end(), 1.0 / static_cast<double>(p.size()));
    return p;
  }
  for (double& x : p) x /= sum;
  return p;
}

std::vector<double> matrix_row(const Matrix& m, int i) {
  std::vector<double> row(m.cols());
  for (int j = 0; j < m.cols(); ++j) row[j] = m(i, j);
  return row;
}

std::vector<double> matrix_col(const Matrix& m, int j) {
  std::vector<double> col(m.rows());
  for (int i = 0; i < m.rows(); ++i) col[i] = m(i, j);
  return col;
}

std::uint32_t occupancy_mask(const LabeledTree& tree, int u) {
  auto slots = tree.slots(u);
  // Occupancy patterns are tracked as 32-bit masks.
  if (slots.size() > 31) throw InputError("EM supports out-degree up to 31");
  std::uint32_t mask = 0;
  for (size_t l = 0; l < slots.size(); ++l) {
    if (slots[l] != kNoNode) mask |= 1u << l;
  }
  return mask;
}

void merge_into(TdCounts& into, const TdCounts& from) {
  for (size_t i = 0; i < into.root.size(); ++i) into.root[i] += from.root[i];
  for (size_t i = 0; i < into.pair.data().size(); ++i)
    into.pair.data()[i] += from.pair.data()[i];
  for (size_t i = 0; i < into.label.data().size(); ++i)
    into.label.data()[i] += from.label.data()[i];
  into.total_log_likelihood += from.total_log_likelihood;
  into.tree_count += from.tree_count;
}

void merge_into(BuCounts& into, const BuCounts& from) {
  for (size_t i = 0; i < into.leaf.size(); ++i) into.leaf[i] += from.leaf[i];
  for (size_t l = 0; l < into.pair.size(); ++l)
    for (size_t i = 0; i < into.pair[l].data().size(); ++i)
      into.pair[l].data()[i] += from.pair[l].data()[i];
  for (size_t l = 0; l < into.switch_counts.size(); ++l)
    into.switch_counts[l] += from.switch_counts[l];
  for (size_t i = 0; i < into.label.data().size(); ++i)
    into.label.data()[i] += from.label.data()[i];
  for (const auto& [mask, count] : from.occupancy) into.occupancy[mask] += count;
  into.total_log_likelihood += from.total_log_likelihood;
  into.tree_count += from.tree_count;
}

TdCounts empty_td_counts(const TdParams& params) {
  TdCounts c;
  c.root.assign(params.state_count, 0.0);
  c.pair = Matrix(params.state_count, params.state_count, 0.0);
  c.label = Matrix(params.state_count, params.alphabet_size, 0.0);
  return c;
}

BuCounts empty_bu_counts(const BuParams& params) {
  BuCounts c;
  c.leaf.assign(params.state_count, 0.0);
  c.pair.assign(params.max_outdegree, Matrix(params.state_count, params.state_count, 0.0));
  c.switch_counts.assign(params.max_outdegree, 0.0);
  c.label = Matrix(params.state_count, params.alphabet_size, 0.0);
  c.switch_init = params.switch_weights;
  return c;
}

}  // namespace

TdCounts e_step(const TdParams& params, const Dataset& dataset, int threads) {
  const int n = static_cast<int>(dataset.trees.size());
  const int n_blocks = (n + kTreeBlockSize - 1) / kTreeBlockSize;
  std::vector<TdCounts> block_counts(n_blocks, empty_td_counts(params));
  parallel_blocks(n_blocks, threads, [&](int b) {
    TdCounts& acc = block_counts[b];
    int lo = b * kTreeBlockSize;
    int hi = std::min(n, lo + kTreeBlockSize);
    for (int t = lo; t < hi; ++t) {
      const LabeledTree& tree = dataset.trees[t];
      Posteriors post = infer_td(params, tree);
      acc.total_log_likelihood += post.log_likelihood;
      acc.tree_count += 1;
      for (int i = 0; i < params.state_count; ++i) acc.root[i] += post.node_marginal[1][i];
      for (int u = 1; u <= tree.node_count(); ++u) {
        for (int i = 0; i < params.state_count; ++i)
          acc.label(i, tree.label(u)) += post.node_marginal[u][i];
        if (u >= 2) {
          const Matrix& z = post.td_pair[u];
          for (size_t k = 0; k < z.data().size(); ++k) acc.pair.data()[k] += z.data()[k];
        }
      }
    }
  });
  TdCounts total = empty_td_counts(params);
  for (const auto& bc : block_counts) merge_into(total, bc);
  return total;
}

BuCounts e_step(const BuParams& params, const Dataset& dataset, int threads) {
  const int n = static_cast<int>(dataset.trees.size());
  const int n_blocks = (n + kTreeBlockSize - 1) / kTreeBlockSize;
  std::vector<BuCounts> block_counts(n_blocks, empty_bu_counts(params));
  parallel_blocks(n_blocks, threads, [&](int b) {
    BuCounts& acc = block_counts[b];
    int lo = b * kTreeBlockSize;
    int hi = std::min(n, lo + kTreeBlockSize);
    for (int t = lo; t < hi; ++t) {
      const LabeledTree& tree = dataset.trees[t];
      Posteriors post = infer_bu(params, tree);
      acc.total_log_likelihood += post.log_likelihood;
      acc.tree_count += 1;
      for (int u = 1; u <= tree.node_count(); ++u) {
        for (int i = 0; i < params.state_count; ++i)
          acc.label(i, tree.label(u)) += post.node_marginal[u][i];
        if (tree.is_leaf(u)) {
          for (int i = 0; i < params.state_count; ++i) acc.leaf[i] += post.node_marginal[u][i];
          continue;
        }
        acc.occupancy[occupancy_mask(tree, u)] += 1.0;
        for (size_t l = 0; l < post.bu_triple[u].size(); ++l) {
          const Matrix& z = post.bu_triple[u][l];
          if (z.empty()) continue;
          double mass = 0.0;
          for (size_t k = 0; k < z.data().size(); ++k) {
            acc.pair[l].data()[k] += z.data()[k];
            mass += z.data()[k];
          }
          acc.switch_counts[l] += mass;
        }
      }
    }
  });
  BuCounts total = empty_bu_counts(params);
  for (const auto& bc : block_counts) merge_into(total, bc);
  return total;
}

TdParams m_step(const TdCounts& counts, double smoothing) {
  TdParams p;
  p.state_count = static_cast<int>(counts.root.size());
  p.alphabet_size = counts.label.cols();
  p.root_prior = normalize_counts(counts.root, smoothing, "root counts");
  p.transition = Matrix(p.state_count, p.state_count);
  for (int i = 0; i < p.state_count; ++i) {
    auto row = normalize_counts(matrix_row(counts.pair, i), smoothing, "transition counts");
    for (int j = 0; j < p.state_count; ++j) p.transition(i, j) = row[j];
  }
  p.emission = Matrix(p.state_count, p.alphabet_size);
  for (int i = 0; i < p.state_count; ++i) {
    auto row = normalize_counts(matrix_row(counts.label, i), smoothing, "label counts");
    for (int m = 0; m < p.alphabet_size; ++m) p.emission(i, m) = row[m];
  }
  p.validate();
  return p;
}

std::vector<double> maximize_switch_weights(const std::vector<double>& counts,
                                            const std::map<std::uint32_t, double>& occupancy,
                                            double smoothing, std::vector<double> current) {
  const int L = static_cast<int>(counts.size());
  if (L > 31) throw InputError("EM supports out-degree up to 31");
  std::vector<double> n(counts);
  std::map<std::uint32_t, double> masks(occupancy);
  double total = 0.0;
  for (double c : n) {
    if (c < 0.0) throw NumericalError("negative switch count");
    total += c;
  }
  if (smoothing > 0.0) {
    // A pseudocount behaves as an extra observation whose occupied set is
    // all L slots, where renormalization is the identity.
    for (double& c : n) c += smoothing;
    masks[(1u << L) - 1u] += smoothing * L;
    total += smoothing * L;
  }
  if (total <= 0.0) return std::vector<double>(L, 1.0 / L);

  std::vector<double>& phi = current;
  if (static_cast<int>(phi.size()) != L) phi.assign(L, 1.0 / L);
  for (int l = 0; l < L; ++l) {
    if (n[l] > 0.0 && phi[l] <= 0.0) phi[l] = 1e-12;
  }

  for (int iter = 0; iter < 500; ++iter) {
    std::vector<double> denom(L, 0.0);
    for (const auto& [mask, count] : masks) {
      double s = 0.0;
      for (int l = 0; l < L; ++l) {
        if (mask & (1u << l)) s += phi[l];
      }
      if (!(s > 0.0)) throw NumericalError("switch weights vanished on an occupancy pattern");
      double w = count / s;
      for (int l = 0; l < L; ++l) {
        if (mask & (1u << l)) denom[l] += w;
      }
    }
    std::vector<double> next(L, 0.0);
    double sum = 0.0;
    for (int l = 0; l < L; ++l) {
      next[l] = n[l] > 0.0 && denom[l] > 0.0 ? n[l] / denom[l] : 0.0;
      sum += next[l];
    }
    if (!(sum > 0.0)) throw NumericalError("switch update degenerated");
    double delta = 0.0;
    for (int l = 0; l < L; ++l) {
      next[l] /= sum;
      delta = std::max(delta, std::abs(next[l] - phi[l]));
    }
    phi = std::move(next);
    if (delta < 1e-14) break;
  }
  return phi;
}

BuParams m_step(const BuCounts& counts, double smoothing) {
  BuParams p;
  p.state_count = static_cast<int>(counts.leaf.size());
  p.alphabet_size = counts.label.cols();
  p.max_outdegree = static_cast<int>(counts.pair.size());
  p.leaf_prior = normalize_counts(counts.leaf, smoothing, "leaf counts");
  p.transition.assign(p.max_outdegree, Matrix(p.state_count, p.state_count));
  for (int l = 0; l < p.max_outdegree; ++l) {
    for (int j = 0; j < p.state_count; ++j) {
      auto col =
          normalize_counts(matrix_col(counts.pair[l], j), smoothing, "transition counts");
      for (int i = 0; i < p.state_count; ++i) p.transition[l](i, j) = col[i];
    }
  }
  p.switch_weights =
      maximize_switch_weights(counts.switch_counts, counts.occupancy, smoothing,
                              counts.switch_init);
  p.emission = Matrix(p.state_count, p.alphabet_size);
  for (int i = 0; i < p.state_count; ++i) {
    auto row = normalize_counts(matrix_row(counts.label, i), smoothing, "label counts");
    for (int m = 0; m < p.alphabet_size; ++m) p.emission(i, m) = row[m];
  }
  p.validate();
  return p;
}

namespace {

template <typename Params, typename Counts>
std::pair<Params, EmTrace> run_em(Params params, const Dataset& dataset, const EmConfig& config,
                                  Counts (*estep)(const Params&, const Dataset&, int)) {
  EmTrace trace;
  for (int iter = 1; iter <= config.max_iters; ++iter) {
    Counts counts = estep(params, dataset, config.threads);
    trace.log_likelihood.push_back(counts.total_log_likelihood);
    if (iter > 1) {
      double prev = trace.log_likelihood[trace.log_likelihood.size() - 2];
      double cur = counts.total_log_likelihood;
      double denom = std::max(std::abs(prev), 1e-12);
      if ((cur - prev) / denom < config.rel_tol) {
        trace.converged = true;
        break;
      }
    }
    if (iter == config.max_iters) break;
    params = m_step(counts, config.smoothing);
    trace.iterations += 1;
  }
  return {std::move(params), std::move(trace)};
}

}  // namespace

std::pair<TdParams, EmTrace> fit_td(const Dataset& dataset, int state_count,
                                    const EmConfig& config) {
  config.validate();
  if (dataset.trees.empty()) throw InputError("cannot fit a model on an empty dataset");
  std::pair<TdParams, EmTrace> best;
  for (int r = 0; r < config.restarts; ++r) {
    TdParams init = init_random_td(state_count, dataset.alphabet_size,
                                   derive_seed(config.seed, r), config.init_concentration);
    auto run = run_em<TdParams, TdCounts>(std::move(init), dataset, config, &e_step);
    if (r == 0 || run.second.log_likelihood.back() > best.second.log_likelihood.back())
      best = std::move(run);
  }
  return best;
}

std::pair<BuParams, EmTrace> fit_bu(const Dataset& dataset, int state_count,
                                    const EmConfig& config) {
  config.validate();
  if (dataset.trees.empty()) throw InputError("cannot fit a model on an empty dataset");
  std::pair<BuParams, EmTrace> best;
  for (int r = 0; r < config.restarts; ++r) {
    BuParams init =
        init_random_bu(state_count, dataset.alphabet_size, dataset.max_outdegree,
                       derive_seed(config.seed, r), config.init_concentration);
    auto run = run_em<BuParams, BuCounts>(std::move(init), dataset, config, &e_step);
    if (r == 0 || run.second.log_likelihood.back() > best.second.log_likelihood.back())
      best = std::move(run);
  }
  return best;
}

std::pair<ModelParams, EmTrace> fit(ModelKind kind, const Dataset& dataset, int state_count,
                                    const EmConfig& config) {
  if (kind == ModelKind::Td) {
    auto [params, trace] = fit_td(dataset, state_count, config);
    return {ModelParams(std::move(params)), std::move(trace)};
  }
  auto [params, trace] = fit_bu(dataset, state_count, config);
  return {ModelParams(std::move(params)), std::move(trace)};
}

std::string trace_to_csv(const EmTrace& trace) {
  std::ostringstream out;
  out.precision(17);
  out << "iteration,log_likelihood\n";
  for (size_t i = 0; i < trace.log_likelihood.size(); ++i)
    out << i << ',' << trace.log_likelihood[i] << '\n';
  return out.str();
}

}  // namespace treehmm
