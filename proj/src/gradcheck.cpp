#include "volseg/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "volseg/ops.hpp"

namespace volseg {

namespace {

double projected(const Tensor<double>& out, const std::vector<double>& projection) {
  auto v = out.data();
  double acc = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) acc += v[i] * projection[i];
  return acc;
}

}  // namespace

GradCheckReport grad_check(const std::function<Tensor<double>()>& fn, std::span<Tensor<double>> leaves,
                           std::uint64_t seed, const GradCheckOptions& options) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  for (auto& leaf : leaves) {
    leaf.set_requires_grad(true);
    leaf.zero_grad();
  }
  Tensor<double> out = fn();
  std::vector<double> projection(static_cast<std::size_t>(out.numel()));
  for (auto& r : projection) r = normal(rng);
  sum(mul(out, Tensor<double>(out.shape(), projection))).backward();

  std::vector<std::vector<double>> analytic;
  for (auto& leaf : leaves) {
    auto g = leaf.grad();
    analytic.emplace_back(g.begin(), g.end());
    if (analytic.back().empty()) analytic.back().assign(static_cast<std::size_t>(leaf.numel()), 0.0);
  }

  GradCheckReport report;
  NoGradGuard no_grad;
  for (std::size_t l = 0; l < leaves.size(); ++l) {
    auto& leaf = leaves[l];
    std::vector<std::int64_t> probes(static_cast<std::size_t>(leaf.numel()));
    std::iota(probes.begin(), probes.end(), 0);
    if (options.max_elements_per_leaf > 0 && leaf.numel() > options.max_elements_per_leaf) {
      std::shuffle(probes.begin(), probes.end(), rng);
      probes.resize(static_cast<std::size_t>(options.max_elements_per_leaf));
    }
    auto values = leaf.mutable_data();
    for (auto i : probes) {
      const double saved = values[i];
      values[i] = saved + options.step;
      const double plus = projected(fn(), projection);
      values[i] = saved - options.step;
      const double minus = projected(fn(), projection);
      values[i] = saved;
      const double numeric = (plus - minus) / (2.0 * options.step);
      const double a = analytic[l][static_cast<std::size_t>(i)];
      const double denom = std::max({std::abs(a), std::abs(numeric), options.magnitude_floor});
      const double err = std::abs(a - numeric) / denom;
      ++report.checked;
      if (err > report.max_rel_error || report.worst_element < 0) {
        report.max_rel_error = err;
        report.worst_leaf = l;
        report.worst_element = i;
        report.analytic = a;
        report.numeric = numeric;
      }
    }
  }
  return report;
}

GradCheckReport grad_check(const std::function<Tensor<double>(std::span<const Tensor<double>>)>& op,
                           const std::vector<Shape>& input_shapes, std::uint64_t seed,
                           const GradCheckOptions& options) {
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<Tensor<double>> inputs;
  for (const auto& shape : input_shapes) {
    std::vector<double> v(static_cast<std::size_t>(numel(shape)));
    for (auto& x : v) x = normal(rng);
    inputs.emplace_back(shape, std::move(v));
  }
  return grad_check([&] { return op(inputs); }, inputs, seed, options);
}

}  // namespace volseg
