#include "mgsr/evaluate.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "mgsr/rng.hpp"

namespace mgsr::eval {

using nlohmann::json;

RougeScore rouge_l(std::span<const int> hypothesis, std::span<const int> reference) {
  RougeScore s;
  if (hypothesis.empty() || reference.empty()) return s;
  const size_t n = hypothesis.size(), m = reference.size();
  std::vector<int> prev(m + 1, 0), cur(m + 1, 0);
  for (size_t i = 1; i <= n; ++i) {
    for (size_t j = 1; j <= m; ++j) {
      if (hypothesis[i - 1] == reference[j - 1])
        cur[j] = prev[j - 1] + 1;
      else
        cur[j] = std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  const double lcs = prev[m];
  s.precision = lcs / static_cast<double>(n);
  s.recall = lcs / static_cast<double>(m);
  s.f1 = (s.precision + s.recall) > 0.0
             ? 2.0 * s.precision * s.recall / (s.precision + s.recall)
             : 0.0;
  return s;
}

MultiSeedResult evaluate_multiseed(const lm::TransformerLM& model,
                                   const scrg::Dataset& dataset,
                                   std::span<const std::uint64_t> seeds,
                                   const lm::DecodeMode& gen_mode, int max_len,
                                   int stop_token, std::ostream* dump) {
  if (dataset.empty())
    throw std::invalid_argument("evaluate_multiseed: empty dataset");
  if (seeds.empty())
    throw std::invalid_argument("evaluate_multiseed: empty seed list");
  MultiSeedResult out;
  for (const std::uint64_t seed : seeds) {
    RougeScore acc;
    for (size_t i = 0; i < dataset.size(); ++i) {
      lm::DecodeMode mode = gen_mode;
      mode.rng_seed = derive_seed(seed, static_cast<std::uint64_t>(i));
      const lm::TokenSequence gen =
          model.generate(dataset[i].prompt, max_len, mode, stop_token);
      const RougeScore r = rouge_l(gen.response, dataset[i].response);
      acc.precision += r.precision;
      acc.recall += r.recall;
      acc.f1 += r.f1;
      if (dump) {
        json rec;
        rec["prompt_id"] = i;
        rec["seed"] = seed;
        rec["hypothesis"] = gen.response;
        rec["reference"] = dataset[i].response;
        rec["precision"] = r.precision;
        rec["recall"] = r.recall;
        rec["f1"] = r.f1;
        *dump << rec.dump() << '\n';
      }
    }
    const double n = static_cast<double>(dataset.size());
    out.per_seed.push_back(
        {seed, {acc.precision / n, acc.recall / n, acc.f1 / n}});
  }
  for (const auto& s : out.per_seed) {
    out.mean.precision += s.mean.precision;
    out.mean.recall += s.mean.recall;
    out.mean.f1 += s.mean.f1;
  }
  const double k = static_cast<double>(out.per_seed.size());
  out.mean.precision /= k;
  out.mean.recall /= k;
  out.mean.f1 /= k;
  return out;
}

namespace {

double silverman_bandwidth(const std::vector<double>& xs,
                           const std::vector<double>& weights) {
  double wsum = 0.0, mean = 0.0;
  for (size_t i = 0; i < xs.size(); ++i) {
    wsum += weights[i];
    mean += weights[i] * xs[i];
  }
  mean /= wsum;
  double var = 0.0;
  for (size_t i = 0; i < xs.size(); ++i)
    var += weights[i] * (xs[i] - mean) * (xs[i] - mean);
  var /= wsum;
  const double sd = std::sqrt(var);
  const double h = 0.9 * sd * std::pow(wsum, -0.2);
  return h > 1e-9 ? h : 1e-9;
}

std::vector<double> kde(const std::vector<double>& grid,
                        const std::vector<double>& xs,
                        const std::vector<double>& weights, double h) {
  double wsum = 0.0;
  for (double w : weights) wsum += w;
  std::vector<double> out(grid.size(), 0.0);
  const double norm = 1.0 / (wsum * h * std::sqrt(2.0 * M_PI));
  for (size_t g = 0; g < grid.size(); ++g) {
    double v = 0.0;
    for (size_t i = 0; i < xs.size(); ++i) {
      const double z = (grid[g] - xs[i]) / h;
      v += weights[i] * std::exp(-0.5 * z * z);
    }
    out[g] = norm * v;
  }
  return out;
}

}  // namespace

DensityExport export_density(const ProbVector& teacher,
                             const div::ClipSelection& selection, int grid_size) {
  if (grid_size < 16)
    throw std::invalid_argument("export_density: grid_size must be >= 16");
  if (teacher.empty()) throw std::invalid_argument("export_density: empty teacher");
  require_simplex(teacher, "export_density teacher");

  std::vector<double> w_all(teacher.size(), 1.0);
  std::vector<double> w_sel(teacher.size(), 0.0);
  if (selection.kind == div::ClipModeKind::Hard) {
    for (int k : selection.indices) w_sel[k] = 1.0;
  } else {
    w_sel = selection.weights.values();
  }
  double sel_sum = 0.0;
  for (double w : w_sel) sel_sum += w;
  if (sel_sum <= 0.0)
    throw std::invalid_argument("export_density: empty selection");

  DensityExport d;
  d.bandwidth = silverman_bandwidth(teacher, w_all);
  const auto [lo_it, hi_it] = std::minmax_element(teacher.begin(), teacher.end());
  const double lo = *lo_it - 3.0 * d.bandwidth;
  const double hi = *hi_it + 3.0 * d.bandwidth;
  d.grid.resize(grid_size);
  for (int g = 0; g < grid_size; ++g)
    d.grid[g] = lo + (hi - lo) * g / static_cast<double>(grid_size - 1);
  d.density_all = kde(d.grid, teacher, w_all, d.bandwidth);
  d.density_clipped = kde(d.grid, teacher, w_sel, d.bandwidth);
  return d;
}

void write_density_csv(const DensityExport& d, std::ostream& out) {
  out << "grid,density_all,density_clipped\n";
  for (size_t i = 0; i < d.grid.size(); ++i)
    out << d.grid[i] << ',' << d.density_all[i] << ',' << d.density_clipped[i]
        << '\n';
}

}  // namespace mgsr::eval
