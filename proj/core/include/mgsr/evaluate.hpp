#pragma once

#include <cstdint>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "mgsr/divergences.hpp"
#include "mgsr/lm.hpp"
#include "mgsr/scrg.hpp"

namespace mgsr::eval {

struct RougeScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// Longest-common-subsequence ROUGE. Empty hypothesis or reference scores 0.
RougeScore rouge_l(std::span<const int> hypothesis, std::span<const int> reference);

struct SeedResult {
  std::uint64_t seed = 0;
  RougeScore mean;  // mean over dataset prompts
};

struct MultiSeedResult {
  std::vector<SeedResult> per_seed;
  RougeScore mean;  // arithmetic mean of per-seed means
};

inline const std::vector<std::uint64_t> kDefaultEvalSeeds = {10, 20, 30, 40, 50};

// For every seed, generates one completion per prompt (seed and prompt index
// derive the per-prompt stream) and scores it against the dataset response.
// `dump`, when non-null, receives one JSON line per (prompt, seed) pair.
MultiSeedResult evaluate_multiseed(const lm::TransformerLM& model,
                                   const scrg::Dataset& dataset,
                                   std::span<const std::uint64_t> seeds,
                                   const lm::DecodeMode& gen_mode,
                                   int max_len = 24, int stop_token = 0,
                                   std::ostream* dump = nullptr);

struct DensityExport {
  std::vector<double> grid;
  std::vector<double> density_all;      // KDE over every class probability
  std::vector<double> density_clipped;  // KDE restricted to the selection
  double bandwidth = 0.0;
};

// Gaussian kernel density over the teacher's probability values, full versus
// clipped, with Silverman bandwidth. grid_size must be >= 16.
DensityExport export_density(const ProbVector& teacher,
                             const div::ClipSelection& selection, int grid_size);

// Two columns per curve: grid,density_all,density_clipped header + rows.
void write_density_csv(const DensityExport& d, std::ostream& out);

}  // namespace mgsr::eval
