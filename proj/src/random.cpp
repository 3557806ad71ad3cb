// Apache License, Version 2.0, refer to LICENSE.txt
#include "treehmm/random.hpp"

#include <stdexcept>

namespace treehmm {

double draw_gamma(Rng& rng, double shape) {
  if (shape <= 0.0) throw std::invalid_argument("gamma shape must be positive");
  std::gamma_distribution<double> g(shape, 1.0);
  return g(rng);
}

double draw_beta(Rng& rng, double a, double b) {
  double x = draw_gamma(rng, a);
  double y = draw_gamma(rng, b);
  double s = x + y;
  if (s <= 0.0) return 0.5;
  return x / s;
}

std::vector<double> draw_dirichlet(Rng& rng, std::span<const double> alpha) {
  std::vector<double> w(alpha.size(), 0.0);
  double sum = 0.0;
  for (size_t k = 0; k < alpha.size(); ++k) {
    if (alpha[k] < 0.0) throw std::invalid_argument("dirichlet concentration must be >= 0");
    if (alpha[k] == 0.0) continue;
    // Floor guards against gamma underflow at very small shapes, which
    // would otherwise put exact zeros into distributions that must stay
    // strictly positive on their support.
    w[k] = std::max(draw_gamma(rng, alpha[k]), 1e-300);
    sum += w[k];
  }
  if (sum <= 0.0) throw std::invalid_argument("dirichlet needs at least one positive concentration");
  for (double& x : w) x /= sum;
  return w;
}

std::vector<double> draw_symmetric_dirichlet(Rng& rng, int dim, double concentration) {
  if (dim < 1) throw std::invalid_argument("dirichlet dimension must be >= 1");
  if (concentration <= 0.0) throw std::invalid_argument("dirichlet concentration must be positive");
  std::vector<double> alpha(dim, concentration);
  return draw_dirichlet(rng, alpha);
}

int draw_categorical(Rng& rng, std::span<const double> weights) {
  double total = 0.0;
  for (double w : weights) total += w;
  if (!(total > 0.0)) throw std::runtime_error("categorical draw over all-zero weights");
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  double r = unif(rng) * total;
  double acc = 0.0;
  for (size_t k = 0; k < weights.size(); ++k) {
    acc += weights[k];
    if (r < acc) return static_cast<int>(k);
  }
  // Floating-point slack: fall back to the last positive weight.
  for (size_t k = weights.size(); k-- > 0;) {
    if (weights[k] > 0.0) return static_cast<int>(k);
  }
  return 0;
}

}  // namespace treehmm
