#include "volseg/volume.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace volseg {

namespace {

constexpr double kTissue[] = {0.8, 1.0, 0.6, 0.9};
constexpr double kLesionOffset[] = {0.5, 0.7, -0.35, 0.6};
constexpr double kBrainSemiAxis = 0.45;  // fraction of each extent

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

void check_sample(const VolumeSample& s, std::int64_t num_classes) {
  if (!s.image.defined() || s.image.ndim() != 4) {
    throw ShapeError("sample '" + s.id + "': image must be 4-d C,D,H,W");
  }
  const auto e = s.extents();
  if (static_cast<std::int64_t>(s.label.size()) != e[0] * e[1] * e[2]) {
    throw ShapeError("sample '" + s.id + "': label volume has " + std::to_string(s.label.size()) +
                     " voxels but the image is " + to_string(s.image.shape()));
  }
  for (auto v : s.label) {
    if (v >= num_classes) {
      throw ValueError("sample '" + s.id + "': label " + std::to_string(v) + " is not below the class count " +
                       std::to_string(num_classes));
    }
  }
}

std::uint64_t sample_seed(std::uint64_t base, std::uint64_t index) {
  return splitmix64(splitmix64(base) ^ (index * 0xd1342543de82ef95ULL + 1));
}

VolumeSample generate_phantom(const PhantomSpec& spec, const std::string& id) {
  const auto [D, H, W] = spec.extents;
  if (D < 1 || H < 1 || W < 1) throw ConfigError("phantom: extents must be positive");
  if (spec.num_modalities < 1) throw ConfigError("phantom: num_modalities must be positive");
  if (spec.num_classes < 2 || spec.num_classes > 255) throw ConfigError("phantom: num_classes must be in 2..255");
  if (spec.noise_sigma < 0) throw ConfigError("phantom: noise_sigma must be non-negative");
  const auto min_extent = std::min({D, H, W});

  std::mt19937_64 rng(spec.seed);
  std::vector<Lesion> lesions;
  if (spec.lesions) {
    lesions = *spec.lesions;
  } else {
    const auto [cmin, cmax] = spec.tumor_count;
    const auto [rmin, rmax] = spec.radius;
    if (cmin < 0 || cmax < cmin) throw ConfigError("phantom: tumor_count range is empty or negative");
    if (rmin <= 0 || rmax < rmin) throw ConfigError("phantom: radius range is empty or non-positive");
    if (2 * rmax + 1 > static_cast<double>(min_extent)) {
      throw ConfigError("phantom: infeasible radii, 2 * " + std::to_string(rmax) + " + 1 exceeds the smallest extent " +
                        std::to_string(min_extent));
    }
    std::uniform_int_distribution<std::int64_t> count_dist(cmin, cmax);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const auto count = count_dist(rng);
    for (std::int64_t i = 0; i < count; ++i) {
      Lesion l;
      for (int a = 0; a < 3; ++a) l.radii[a] = rmin + (rmax - rmin) * unit(rng);
      for (int a = 0; a < 3; ++a) {
        const double extent = static_cast<double>(spec.extents[a]);
        const double mid = (extent - 1) / 2;
        // Keep the lesion inside the volume and near the brain interior.
        const double reach = std::max(0.0, std::min(kBrainSemiAxis * extent - l.radii[a], mid - l.radii[a]));
        l.center[a] = mid + (2 * unit(rng) - 1) * reach / std::sqrt(3.0);
      }
      l.label = static_cast<std::uint8_t>(1 + (spec.num_classes > 2 ? rng() % (spec.num_classes - 1) : 0));
      lesions.push_back(l);
    }
  }
  for (const auto& l : lesions) {
    if (l.label < 1 || l.label >= spec.num_classes) throw ConfigError("phantom: lesion label out of range");
    for (int a = 0; a < 3; ++a) {
      if (l.radii[a] <= 0) throw ConfigError("phantom: lesion radii must be positive");
    }
  }

  const auto C = spec.num_modalities;
  const auto volume = D * H * W;
  std::vector<float> image(static_cast<std::size_t>(C * volume), 0.0f);
  std::vector<std::uint8_t> label(static_cast<std::size_t>(volume), 0);
  std::normal_distribution<double> noise(0.0, spec.noise_sigma > 0 ? spec.noise_sigma : 1.0);
  const std::array<double, 3> mid{(D - 1) / 2.0, (H - 1) / 2.0, (W - 1) / 2.0};
  const std::array<double, 3> semi{kBrainSemiAxis * D, kBrainSemiAxis * H, kBrainSemiAxis * W};
  for (std::int64_t d = 0; d < D; ++d) {
    for (std::int64_t h = 0; h < H; ++h) {
      for (std::int64_t w = 0; w < W; ++w) {
        const std::array<double, 3> p{static_cast<double>(d), static_cast<double>(h), static_cast<double>(w)};
        double brain = 0.0;
        for (int a = 0; a < 3; ++a) brain += std::pow((p[a] - mid[a]) / semi[a], 2);
        std::uint8_t lab = 0;
        for (const auto& l : lesions) {
          double r = 0.0;
          for (int a = 0; a < 3; ++a) r += std::pow((p[a] - l.center[a]) / l.radii[a], 2);
          if (r <= 1.0) lab = std::max(lab, l.label);
        }
        const auto v = (d * H + h) * W + w;
        label[v] = lab;
        if (brain > 1.0 && lab == 0) continue;
        for (std::int64_t c = 0; c < C; ++c) {
          double value = kTissue[c % 4];
          if (lab > 0) value += kLesionOffset[c % 4] * (1.0 + 0.6 * (lab - 1));
          if (spec.noise_sigma > 0) value += noise(rng);
          image[c * volume + v] = static_cast<float>(value);
        }
      }
    }
  }
  VolumeSample s;
  s.id = id;
  s.image = Tensor<float>(Shape{C, D, H, W}, std::move(image));
  s.label = std::move(label);
  return s;
}

std::vector<VolumeSample> generate_phantom_set(const PhantomSpec& spec, std::int64_t count,
                                               const std::string& prefix) {
  std::vector<VolumeSample> out;
  out.reserve(static_cast<std::size_t>(count));
  for (std::int64_t i = 0; i < count; ++i) {
    auto s = spec;
    s.seed = sample_seed(spec.seed, static_cast<std::uint64_t>(i));
    out.push_back(generate_phantom(s, prefix + std::to_string(i)));
  }
  return out;
}

Tensor<float> normalize(const Tensor<float>& image, NormMethod method) {
  if (image.ndim() < 2 || image.numel() == 0) throw ShapeError("normalize: expected a nonempty C,... volume");
  const auto C = image.dim(0);
  const auto volume = image.numel() / C;
  std::vector<float> out(image.data().begin(), image.data().end());
  for (std::int64_t c = 0; c < C; ++c) {
    float* x = out.data() + c * volume;
    if (method == NormMethod::minmax) {
      const auto [lo, hi] = std::minmax_element(x, x + volume);
      const double a = *lo, b = *hi;
      for (std::int64_t i = 0; i < volume; ++i) x[i] = b > a ? static_cast<float>((x[i] - a) / (b - a)) : 0.0f;
      continue;
    }
    double sum = 0.0, sq = 0.0;
    std::int64_t n = 0;
    for (std::int64_t i = 0; i < volume; ++i) {
      if (x[i] == 0.0f) continue;
      sum += x[i];
      ++n;
    }
    const double mu = n > 0 ? sum / static_cast<double>(n) : 0.0;
    for (std::int64_t i = 0; i < volume; ++i) {
      if (x[i] != 0.0f) sq += (x[i] - mu) * (x[i] - mu);
    }
    const double sd = n > 0 ? std::sqrt(sq / static_cast<double>(n)) : 0.0;
    for (std::int64_t i = 0; i < volume; ++i) {
      if (x[i] == 0.0f) continue;
      x[i] = sd > 0 ? static_cast<float>((x[i] - mu) / sd) : 0.0f;
    }
  }
  return Tensor<float>(image.shape(), std::move(out));
}

VolumeSample crop_or_pad(const VolumeSample& sample, const Extents& target) {
  for (auto t : target) {
    if (t < 1) throw ValueError("crop_or_pad: target extents must be positive");
  }
  const auto src = sample.extents();
  const auto C = sample.channels();
  // Offset of the source origin inside the target (negative when cropping).
  std::array<std::int64_t, 3> shift{};
  for (int a = 0; a < 3; ++a) {
    const auto diff = target[a] - src[a];
    shift[a] = diff >= 0 ? diff / 2 : -((-diff) / 2);
  }
  const auto tvol = target[0] * target[1] * target[2];
  const auto svol = src[0] * src[1] * src[2];
  std::vector<float> image(static_cast<std::size_t>(C * tvol), 0.0f);
  std::vector<std::uint8_t> label(static_cast<std::size_t>(tvol), 0);
  const float* x = sample.image.data().data();
  for (std::int64_t d = 0; d < target[0]; ++d) {
    const auto sd = d - shift[0];
    if (sd < 0 || sd >= src[0]) continue;
    for (std::int64_t h = 0; h < target[1]; ++h) {
      const auto sh = h - shift[1];
      if (sh < 0 || sh >= src[1]) continue;
      for (std::int64_t w = 0; w < target[2]; ++w) {
        const auto sw = w - shift[2];
        if (sw < 0 || sw >= src[2]) continue;
        const auto t = (d * target[1] + h) * target[2] + w;
        const auto s = (sd * src[1] + sh) * src[2] + sw;
        label[t] = sample.label[s];
        for (std::int64_t c = 0; c < C; ++c) image[c * tvol + t] = x[c * svol + s];
      }
    }
  }
  VolumeSample out;
  out.id = sample.id;
  out.voxel_spacing = sample.voxel_spacing;
  out.image = Tensor<float>(Shape{C, target[0], target[1], target[2]}, std::move(image));
  out.label = std::move(label);
  return out;
}

Split split_dataset(const std::vector<std::string>& ids, double val_fraction, std::uint64_t seed) {
  if (ids.empty()) throw ValueError("split_dataset: no samples");
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw ValueError("split_dataset: val_fraction must be in (0, 1)");
  std::vector<std::size_t> order(ids.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  for (std::size_t i = order.size(); i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(order[i - 1], order[pick(rng)]);
  }
  const auto n_val = static_cast<std::size_t>(std::llround(static_cast<double>(ids.size()) * val_fraction));
  Split split;
  for (std::size_t i = 0; i < order.size(); ++i) (i < n_val ? split.val : split.train).push_back(ids[order[i]]);
  return split;
}

}  // namespace volseg
