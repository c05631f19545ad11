#include "checks.hpp"

#include <random>

#include "oracles.hpp"
#include "volseg/blocks.hpp"
#include "volseg/loss.hpp"
#include "volseg/ops.hpp"

using namespace volseg;
using oracle::abs_values;
using oracle::Dims5;
using oracle::i64;

namespace checks {

namespace {

// Float inputs, with the oracle fed the same rounded values in double.
struct Rounded {
  Tensor<float> tensor;
  std::vector<double> values;
};

Rounded rounded(Shape shape, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<float> f(static_cast<std::size_t>(numel(shape)));
  std::vector<double> d(f.size());
  for (std::size_t i = 0; i < f.size(); ++i) {
    f[i] = static_cast<float>(u(rng));
    d[i] = f[i];
  }
  return {Tensor<float>(std::move(shape), std::move(f)), std::move(d)};
}

std::vector<double> widen(const Tensor<float>& t) { return {t.data().begin(), t.data().end()}; }

i64 pick(std::mt19937_64& rng, i64 lo, i64 hi) { return std::uniform_int_distribution<i64>(lo, hi)(rng); }

double conv_case(std::mt19937_64& rng) {
  for (;;) {
    const i64 n = pick(rng, 1, 2), ci = pick(rng, 1, 4), co = pick(rng, 1, 4);
    const i64 k = std::array<i64, 4>{1, 3, 3, 5}[pick(rng, 0, 3)];
    const i64 stride = pick(rng, 1, 2);
    const bool same = pick(rng, 0, 1) == 1;
    const i64 pad = same ? (k - 1) / 2 : pick(rng, 0, k - 1);
    const Dims5 d{n, ci, pick(rng, 1, 6), pick(rng, 1, 6), pick(rng, 1, 6)};
    if (d.d + 2 * pad < k || d.h + 2 * pad < k || d.w + 2 * pad < k) continue;
    auto x = rounded({d.n, d.c, d.d, d.h, d.w}, rng);
    auto w = rounded({co, ci, k, k, k}, rng);
    auto b = rounded({co}, rng);
    ConvParams<float> p{w.tensor, b.tensor, stride, same ? Padding::Same() : Padding::Explicit(pad)};
    const auto expected = oracle::conv3d(x.values, d, w.values, b.values, co, k, stride, pad, nullptr);
    const auto magnitude = oracle::conv3d(abs_values(x.values), d, abs_values(w.values), abs_values(b.values), co, k,
                                          stride, pad, nullptr);
    return oracle::max_rel_error(widen(conv3d(x.tensor, p)), expected, magnitude);
  }
}

double transposed_case(std::mt19937_64& rng) {
  for (;;) {
    const i64 n = pick(rng, 1, 2), ci = pick(rng, 1, 4), co = pick(rng, 1, 4);
    const i64 k = pick(rng, 1, 3), stride = pick(rng, 1, 2), pad = pick(rng, 0, (k - 1) / 2);
    const Dims5 d{n, ci, pick(rng, 1, 4), pick(rng, 1, 4), pick(rng, 1, 4)};
    if ((std::min({d.d, d.h, d.w}) - 1) * stride - 2 * pad + k < 1) continue;
    auto x = rounded({d.n, d.c, d.d, d.h, d.w}, rng);
    auto w = rounded({ci, co, k, k, k}, rng);
    auto b = rounded({co}, rng);
    ConvParams<float> p{w.tensor, b.tensor, stride, Padding::Explicit(pad)};
    const auto expected = oracle::transposed_conv3d(x.values, d, w.values, b.values, co, k, stride, pad, nullptr);
    const auto magnitude = oracle::transposed_conv3d(abs_values(x.values), d, abs_values(w.values),
                                                     abs_values(b.values), co, k, stride, pad, nullptr);
    return oracle::max_rel_error(widen(transposed_conv3d(x.tensor, p)), expected, magnitude);
  }
}

double pool_case(std::mt19937_64& rng, bool& argmax_ok) {
  for (;;) {
    const i64 window = pick(rng, 1, 3), stride = pick(rng, 1, 2), pad = pick(rng, 0, window / 2);
    i64 e[3];
    for (auto& v : e) v = (pick(rng, 1, 3) - 1) * stride + window - 2 * pad;
    if (std::min({e[0], e[1], e[2]}) < 1) continue;
    const Dims5 d{pick(rng, 1, 2), pick(rng, 1, 3), e[0], e[1], e[2]};
    auto x = rounded({d.n, d.c, d.d, d.h, d.w}, rng);
    const auto r = maxpool3d(x.tensor, window, stride, pad);
    const auto expected = oracle::maxpool3d(x.values, d, window, stride, pad);
    if (*r.argmax != expected.argmax) argmax_ok = false;
    return oracle::max_rel_error(widen(r.output), expected.values, abs_values(expected.values));
  }
}

double gap_case(std::mt19937_64& rng) {
  const i64 n = pick(rng, 1, 3), c = pick(rng, 1, 4), d = pick(rng, 1, 6), h = pick(rng, 1, 6), w = pick(rng, 1, 6);
  auto x = rounded({n, c, d, h, w}, rng);
  const auto volume = d * h * w;
  return oracle::max_rel_error(widen(global_avg_pool(x.tensor)), oracle::global_avg_pool(x.values, n, c, volume),
                               oracle::global_avg_pool(abs_values(x.values), n, c, volume));
}

double dense_case(std::mt19937_64& rng) {
  const i64 n = pick(rng, 1, 4), f = pick(rng, 1, 16), g = pick(rng, 1, 16);
  auto x = rounded({n, f}, rng);
  auto w = rounded({f, g}, rng);
  auto b = rounded({g}, rng);
  return oracle::max_rel_error(widen(dense(x.tensor, w.tensor, b.tensor)),
                               oracle::dense(x.values, n, f, w.values, b.values, g),
                               oracle::dense(abs_values(x.values), n, f, abs_values(w.values), abs_values(b.values), g));
}

GradCheckOptions probe_limit(std::int64_t n) {
  GradCheckOptions o;
  o.max_elements_per_leaf = n;
  return o;
}

GradCheckReport check_module(Module<double>& m, Shape input, std::uint64_t seed, std::int64_t probes) {
  initialize_parameters(m, seed);
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> xs(static_cast<std::size_t>(numel(input)));
  for (auto& v : xs) v = normal(rng);
  std::vector<Tensor<double>> leaves{Tensor<double>(std::move(input), std::move(xs))};
  for (auto& [name, t] : m.named_parameters()) leaves.push_back(t);
  const Tensor<double> x = leaves.front();
  return grad_check([&] { return m.forward(x, Mode::train); }, leaves, seed, probe_limit(probes));
}

BlockSpec spec_of(BlockKind kind, i64 in, i64 out, bool se = false) {
  BlockSpec s;
  s.kind = kind;
  s.in_channels = in;
  s.out_channels = out;
  s.se_reduction = 2;
  s.with_se = se;
  return s;
}

}  // namespace

OracleSweep oracle_sweep(int shapes, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  OracleSweep r;
  r.shapes = shapes;
  for (int i = 0; i < shapes; ++i) {
    r.conv3d = std::max(r.conv3d, conv_case(rng));
    r.transposed_conv3d = std::max(r.transposed_conv3d, transposed_case(rng));
    r.maxpool3d = std::max(r.maxpool3d, pool_case(rng, r.argmax_match));
    r.global_avg_pool = std::max(r.global_avg_pool, gap_case(rng));
    r.dense = std::max(r.dense, dense_case(rng));
  }
  return r;
}

std::vector<NamedReport> op_gradients(std::uint64_t seed) {
  using Inputs = std::span<const Tensor<double>>;
  std::vector<NamedReport> out;
  auto run = [&](const std::string& name, auto op, std::vector<Shape> shapes) {
    out.push_back({name, grad_check(op, shapes, seed)});
  };
  run("conv3d k3 same", [](Inputs in) { return conv3d(in[0], ConvParams<double>{in[1], in[2], 1, Padding::Same()}); },
      {{1, 2, 3, 3, 3}, {2, 2, 3, 3, 3}, {2}});
  run("conv3d k1", [](Inputs in) { return conv3d(in[0], ConvParams<double>{in[1], in[2], 1, Padding::Same()}); },
      {{2, 3, 2, 3, 2}, {2, 3, 1, 1, 1}, {2}});
  run("conv3d k3 stride 2 pad 1",
      [](Inputs in) { return conv3d(in[0], ConvParams<double>{in[1], in[2], 2, Padding::Explicit(1)}); },
      {{1, 2, 5, 4, 3}, {3, 2, 3, 3, 3}, {3}});
  run("conv3d k5 same", [](Inputs in) { return conv3d(in[0], ConvParams<double>{in[1], in[2], 1, Padding::Same()}); },
      {{1, 1, 4, 4, 4}, {2, 1, 5, 5, 5}, {2}});
  run("transposed_conv3d k2 s2",
      [](Inputs in) { return transposed_conv3d(in[0], ConvParams<double>{in[1], in[2], 2, Padding::Explicit(0)}); },
      {{1, 3, 2, 2, 2}, {3, 2, 2, 2, 2}, {2}});
  run("transposed_conv3d k3 s2 p1",
      [](Inputs in) { return transposed_conv3d(in[0], ConvParams<double>{in[1], in[2], 2, Padding::Explicit(1)}); },
      {{2, 2, 2, 3, 2}, {2, 2, 3, 3, 3}, {2}});
  run("maxpool3d", [](Inputs in) { return maxpool3d(in[0], 2, 2).output; }, {{2, 2, 4, 4, 4}});
  run("maxpool3d window 3 pad 1", [](Inputs in) { return maxpool3d(in[0], 3, 1, 1).output; }, {{1, 2, 3, 3, 3}});
  run("batchnorm3d train",
      [](Inputs in) {
        BatchNormState<double> state(2);
        return batchnorm3d(in[0], in[1], in[2], state, Mode::train);
      },
      {{2, 2, 2, 2, 2}, {2}, {2}});
  run("batchnorm3d eval",
      [](Inputs in) {
        BatchNormState<double> state(2);
        state.running_mean = Tensor<double>(Shape{2}, std::vector<double>{0.3, -0.2});
        state.running_var = Tensor<double>(Shape{2}, std::vector<double>{1.5, 0.7});
        return batchnorm3d(in[0], in[1], in[2], state, Mode::eval);
      },
      {{2, 2, 2, 2, 2}, {2}, {2}});
  run("relu", [](Inputs in) { return relu(in[0]); }, {{2, 3, 4}});
  run("sigmoid", [](Inputs in) { return sigmoid(in[0]); }, {{2, 3, 4}});
  run("add", [](Inputs in) { return add(in[0], in[1]); }, {{2, 3}, {2, 3}});
  run("mul", [](Inputs in) { return mul(in[0], in[1]); }, {{2, 3}, {2, 3}});
  run("scale", [](Inputs in) { return scale(in[0], 2.5); }, {{4, 2}});
  run("concat_channels",
      [](Inputs in) {
        std::vector<Tensor<double>> parts{in[0], in[1]};
        return concat_channels<double>(parts);
      },
      {{2, 2, 2, 2, 2}, {2, 3, 2, 2, 2}});
  run("scale_channels", [](Inputs in) { return scale_channels(in[0], in[1]); }, {{2, 3, 2, 2, 2}, {2, 3}});
  run("global_avg_pool", [](Inputs in) { return global_avg_pool(in[0]); }, {{2, 3, 2, 3, 2}});
  run("dense", [](Inputs in) { return dense(in[0], in[1], in[2]); }, {{2, 3}, {3, 4}, {4}});
  run("upsample_nearest", [](Inputs in) { return upsample_nearest(in[0], 2); }, {{1, 2, 2, 2, 2}});
  run("sum", [](Inputs in) { return sum(in[0]); }, {{3, 4}});
  run("mean", [](Inputs in) { return mean(in[0]); }, {{3, 4}});
  const std::vector<std::uint8_t> labels2{0, 1, 1, 0, 0, 0, 1, 0, 1, 1, 0, 0, 0, 0, 1, 1};
  const std::vector<std::uint8_t> labels3{0, 2, 1, 0, 0, 2, 1, 0, 1, 1, 0, 2, 0, 0, 1, 2};
  run("soft_dice_loss C=2", [&](Inputs in) { return soft_dice_loss(in[0], labels2); }, {{2, 2, 2, 2, 2}});
  run("soft_dice_loss C=3", [&](Inputs in) { return soft_dice_loss(in[0], labels3); }, {{2, 3, 2, 2, 2}});
  run("cross_entropy_loss", [&](Inputs in) { return cross_entropy_loss(in[0], labels3); }, {{2, 3, 2, 2, 2}});
  return out;
}

std::vector<NamedReport> block_gradients(std::uint64_t seed) {
  std::vector<NamedReport> out;
  auto run = [&](const std::string& name, const BlockSpec& spec, Shape input) {
    auto block = make_block<double>(spec);
    out.push_back({name, check_module(*block, std::move(input), seed, 24)});
  };
  run("double_conv", spec_of(BlockKind::double_conv, 2, 4), {2, 2, 3, 3, 3});
  run("double_conv + se", spec_of(BlockKind::double_conv, 2, 4, true), {2, 2, 3, 3, 3});
  run("inception", spec_of(BlockKind::inception, 2, 4), {2, 2, 3, 3, 3});
  run("inception + se", spec_of(BlockKind::inception, 2, 4, true), {2, 2, 3, 3, 3});
  run("se", spec_of(BlockKind::se, 4, 4), {2, 4, 2, 2, 2});
  for (bool se : {false, true}) {
    for (i64 in : {2, 4}) {
      auto spec = spec_of(BlockKind::residual_wrap, in, 4, se);
      spec.inner = std::make_shared<const BlockSpec>(spec_of(BlockKind::double_conv, in, 4));
      run(std::string("residual_wrap ") + (in == 4 ? "identity" : "projection") + (se ? " + se" : ""), spec,
          {2, in, 3, 3, 3});
    }
  }
  auto agg = spec_of(BlockKind::aggregated, 2, 4);
  run("aggregated conv x2", agg, {2, 2, 3, 3, 3});
  agg.cardinality = 3;
  agg.with_se = true;
  run("aggregated conv x3 + se", agg, {2, 2, 3, 3, 3});
  agg.cardinality = 2;
  agg.with_se = false;
  agg.inception_branches = true;
  run("aggregated inception x2", agg, {2, 2, 3, 3, 3});
  return out;
}

ModelConfig tiny_config(ArchId arch) {
  ModelConfig c;
  c.arch = arch;
  c.in_channels = 2;
  c.num_classes = 2;
  c.depth = 1;
  c.se_reduction = 2;
  switch (arch) {
    case ArchId::unet3d_inception:
    case ArchId::se_unet3d_inception: c.base_filters = 4; break;
    case ArchId::unext3d_inception: c.base_filters = 8; break;
    default: c.base_filters = 2; break;
  }
  return c;
}

NamedReport arch_gradient(ArchId arch, std::uint64_t seed) {
  const auto c = tiny_config(arch);
  auto model = build_model<double>(c);
  const Shape input = arch == ArchId::baseline ? Shape{1, 2, 8, 8, 8} : Shape{2, 2, 4, 4, 4};
  return {to_string(arch), check_module(*model, input, seed, 8)};
}

}  // namespace checks
