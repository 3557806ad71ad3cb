// Apache License, Version 2.0, refer to LICENSE.txt
#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace treehmm {

using Rng = std::mt19937_64;

// Stateless mix used to derive independent seeds (per restart, per chain)
// from one user-facing seed.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  return splitmix64(seed ^ splitmix64(stream + 1));
}

inline Rng make_rng(std::uint64_t seed) { return Rng(splitmix64(seed)); }

double draw_gamma(Rng& rng, double shape);
double draw_beta(Rng& rng, double a, double b);

// Dirichlet draw over the given (possibly asymmetric) concentration vector.
// Entries with zero concentration get weight zero. Gamma draws that
// underflow to zero are floored at a tiny positive value so that returned
// weights stay usable in log space.
std::vector<double> draw_dirichlet(Rng& rng, std::span<const double> alpha);
std::vector<double> draw_symmetric_dirichlet(Rng& rng, int dim, double concentration);

// Index draw proportional to non-negative weights (not necessarily normalized).
int draw_categorical(Rng& rng, std::span<const double> weights);

}  // namespace treehmm
