#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "volseg/tensor.hpp"

namespace helpers {

template <typename T = float>
volseg::Tensor<T> random_tensor(volseg::Shape shape, std::uint64_t seed, double sd = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, sd);
  std::vector<T> v(static_cast<std::size_t>(volseg::numel(shape)));
  for (auto& x : v) x = static_cast<T>(normal(rng));
  return volseg::Tensor<T>(std::move(shape), std::move(v));
}

template <typename T>
std::vector<double> values(const volseg::Tensor<T>& t) {
  return {t.data().begin(), t.data().end()};
}

template <typename T>
std::vector<double> grads(const volseg::Tensor<T>& t) {
  return {t.grad().begin(), t.grad().end()};
}

// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("volseg_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace helpers
