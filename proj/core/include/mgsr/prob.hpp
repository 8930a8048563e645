#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace mgsr {

/// Per-token output distribution over the M-token vocabulary.
using ProbVector = std::vector<double>;

inline double simplex_deviation(const ProbVector& p) {
  double s = 0.0;
  for (double v : p) s += v;
  return s - 1.0;
}

inline bool is_simplex(const ProbVector& p, double tol = 1e-6) {
  if (p.empty()) return false;
  for (double v : p)
    if (v < -tol) return false;
  const double dev = simplex_deviation(p);
  return dev > -tol && dev < tol;
}

inline void require_simplex(const ProbVector& p, const char* name,
                            double tol = 1e-6) {
  if (!is_simplex(p, tol))
    throw std::invalid_argument(std::string(name) +
                                ": not a probability distribution");
}

inline std::size_t argmax_index(const ProbVector& p) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < p.size(); ++i)
    if (p[i] > p[best]) best = i;  // ties -> smallest index
  return best;
}

}  // namespace mgsr
