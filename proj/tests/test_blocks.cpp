#include <doctest.h>

#include <nlohmann/json.hpp>

#include "checks.hpp"
#include "helpers.hpp"
#include "oracles.hpp"
#include "volseg/blocks.hpp"

using namespace volseg;
using helpers::random_tensor;
using helpers::values;

namespace {

BlockSpec spec(BlockKind kind, std::int64_t in, std::int64_t out) {
  BlockSpec s;
  s.kind = kind;
  s.in_channels = in;
  s.out_channels = out;
  return s;
}

std::unique_ptr<Module<float>> built(const BlockSpec& s, std::uint64_t seed = 1) {
  auto b = make_block<float>(s);
  initialize_parameters(*b, seed);
  return b;
}

}  // namespace

TEST_CASE("double_conv: shape and parameter count") {
  auto b = built(spec(BlockKind::double_conv, 4, 8));
  auto y = b->forward(random_tensor({1, 4, 8, 8, 8}, 2), Mode::train);
  CHECK(y.shape() == Shape{1, 8, 8, 8, 8});
  CHECK(b->param_count() == oracle::conv_path_params(4, 8, 3) + oracle::bn_params(8));
  CHECK(b->count_kind("conv3d") == 2);
}

TEST_CASE("double_conv: gradient check 2 -> 4 on 3^3") {
  auto b = make_block<double>(spec(BlockKind::double_conv, 2, 4));
  initialize_parameters(*b, 3);
  std::vector<Tensor<double>> leaves{helpers::random_tensor<double>({1, 2, 3, 3, 3}, 4)};
  for (auto& [n, t] : b->named_parameters()) leaves.push_back(t);
  const Tensor<double> x = leaves[0];
  auto r = grad_check([&] { return b->forward(x, Mode::train); }, leaves, 5);
  CHECK(r.max_rel_error < 1e-4);
}

TEST_CASE("inception: shape, six convolutions and parameter count") {
  auto b = built(spec(BlockKind::inception, 4, 8));
  CHECK(b->forward(random_tensor({1, 4, 8, 8, 8}, 2), Mode::train).shape() == Shape{1, 8, 8, 8, 8});
  CHECK(b->count_kind("conv3d") == 6);
  CHECK(b->param_count() == oracle::inception_path_params(4, 8) + oracle::bn_params(8));
  CHECK(inception_bottleneck(8) == 1);
  CHECK(inception_bottleneck(64) == 8);
  CHECK(inception_bottleneck(4) == 1);
  CHECK_THROWS_AS(make_block<float>(spec(BlockKind::inception, 4, 6)), ConfigError);
}

TEST_CASE("se: zero dense weights halve the input") {
  auto s = spec(BlockKind::se, 8, 8);
  s.se_reduction = 4;
  auto b = make_block<float>(s);
  auto x = random_tensor({2, 8, 2, 2, 2}, 3);
  auto y = b->forward(x, Mode::train);
  for (std::int64_t i = 0; i < x.numel(); ++i) CHECK(y.data()[i] == x.data()[i] / 2);
  CHECK(b->param_count() == oracle::se_params(8, 4));
  s.in_channels = s.out_channels = 6;
  CHECK_THROWS_AS(make_block<float>(s), ConfigError);
}

TEST_CASE("se: gate matches a hand computation") {
  auto s = spec(BlockKind::se, 4, 4);
  s.se_reduction = 2;
  auto b = make_block<double>(s);
  initialize_parameters(*b, 9);
  auto x = helpers::random_tensor<double>({1, 4, 2, 2, 2}, 10);
  auto y = b->forward(x, Mode::eval);
  auto& se = dynamic_cast<SEBlock<double>&>(*b);
  const auto pooled = oracle::global_avg_pool(values(x), 1, 4, 8);
  auto hidden = oracle::dense(pooled, 1, 4, values(se.squeeze().weight()), values(se.squeeze().bias()), 2);
  for (auto& h : hidden) h = std::max(0.0, h);
  auto gate = oracle::dense(hidden, 1, 2, values(se.excite().weight()), values(se.excite().bias()), 4);
  for (std::int64_t i = 0; i < 32; ++i) {
    const double g = 1.0 / (1.0 + std::exp(-gate[i / 8]));
    CHECK(y.data()[i] == doctest::Approx(x.data()[i] * g).epsilon(1e-12));
  }
}

TEST_CASE("residual_wrap: projection only when channels change") {
  auto s = spec(BlockKind::residual_wrap, 4, 8);
  s.inner = std::make_shared<const BlockSpec>(spec(BlockKind::double_conv, 4, 8));
  auto b = built(s);
  CHECK(b->child("proj") != nullptr);
  CHECK(b->param_count() == oracle::conv_path_params(4, 8, 3) + oracle::bn_params(8) + oracle::conv_params(4, 8, 1));
  CHECK(b->forward(random_tensor({1, 4, 4, 4, 4}, 1), Mode::train).shape() == Shape{1, 8, 4, 4, 4});

  auto same = spec(BlockKind::residual_wrap, 8, 8);
  same.inner = std::make_shared<const BlockSpec>(spec(BlockKind::double_conv, 8, 8));
  auto id = built(same);
  CHECK(id->child("proj") == nullptr);
  // With a zeroed body the wrap is the identity.
  for (auto& [n, t] : id->named_parameters()) {
    for (auto& v : t.mutable_data()) v = 0.0f;
  }
  auto x = random_tensor({1, 8, 4, 4, 4}, 2);
  CHECK(values(id->forward(x, Mode::eval)) == values(x));
}

TEST_CASE("aggregated: cardinality bookkeeping") {
  auto one = spec(BlockKind::aggregated, 4, 8);
  one.cardinality = 1;
  auto two = one;
  two.cardinality = 2;
  auto b1 = built(one), b2 = built(two);
  auto plain = built(spec(BlockKind::double_conv, 4, 8));
  CHECK(b1->param_count() == plain->param_count());
  const auto bn = oracle::bn_params(8);
  CHECK(b2->param_count() - bn == 2 * (b1->param_count() - bn));

  // Same parameters, same output as the plain block.
  auto src = plain->named_parameters();
  auto dst = b1->named_parameters();
  REQUIRE(src.size() == dst.size());
  for (std::size_t i = 0; i < src.size(); ++i) {
    auto s = src[i].second.data();
    std::copy(s.begin(), s.end(), dst[i].second.mutable_data().begin());
  }
  auto x = random_tensor({2, 4, 4, 4, 4}, 3);
  CHECK(values(b1->forward(x, Mode::train)) == values(plain->forward(x, Mode::train)));
}

TEST_CASE("aggregated: equal branches double the preactivation") {
  auto two = spec(BlockKind::aggregated, 2, 4);
  auto one = two;
  one.cardinality = 1;
  two.cardinality = 2;
  auto b1 = make_block<double>(one), b2 = make_block<double>(two);
  initialize_parameters(*b1, 4);
  auto p1 = b1->named_parameters();
  for (auto& [name, t] : b2->named_parameters()) {
    // branch{i}.* <- branch0.* of the single-branch block
    const auto tail = name.substr(name.find('.'));
    for (auto& [n1, t1] : p1) {
      if (n1 == "branch0" + tail || n1 == name) std::copy(t1.data().begin(), t1.data().end(), t.mutable_data().begin());
    }
  }
  auto x = helpers::random_tensor<double>({2, 2, 3, 3, 3}, 5);
  auto a = dynamic_cast<GatedBlock<double>&>(*b1).preactivation(x, Mode::train);
  auto b = dynamic_cast<GatedBlock<double>&>(*b2).preactivation(x, Mode::train);
  for (std::int64_t i = 0; i < a.numel(); ++i) CHECK(b.data()[i] == doctest::Approx(2 * a.data()[i]).epsilon(1e-12));
}

TEST_CASE("param_count: single conv and empty module") {
  Conv3d<float> conv(1, 8, 3);
  CHECK(conv.param_count() == 224);
  MaxPool3d<float> pool(2, 2);
  CHECK(pool.param_count() == 0);
}

TEST_CASE("block_summary: structured form") {
  auto b = built(spec(BlockKind::double_conv, 4, 8));
  auto j = block_summary("enc0", *b);
  CHECK(j["name"] == "enc0");
  CHECK(j["kind"] == "double_conv");
  CHECK(j["out_channels"] == 8);
  CHECK(j["params"] == b->param_count());
  CHECK(j["children"].size() == 2);
}

TEST_CASE("block spec validation") {
  auto bad = spec(BlockKind::double_conv, 4, 8);
  bad.kernel = 2;
  CHECK_THROWS_AS(validate(bad), ConfigError);
  auto wrap = spec(BlockKind::residual_wrap, 4, 8);
  CHECK_THROWS_AS(validate(wrap), ConfigError);
  auto agg = spec(BlockKind::aggregated, 4, 8);
  agg.cardinality = 0;
  CHECK_THROWS_AS(validate(agg), ConfigError);
}

TEST_CASE("gradient suite: every block kind") {
  for (const auto& r : checks::block_gradients(7)) {
    CAPTURE(r.name);
    CHECK(r.report.max_rel_error < 1e-4);
  }
}
