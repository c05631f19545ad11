#include "volseg/model.hpp"

#include <iomanip>
#include <sstream>

#include <nlohmann/json.hpp>

namespace volseg {

namespace {

struct ArchName {
  ArchId id;
  const char* name;
};

constexpr ArchName kArchNames[] = {
    {ArchId::baseline, "baseline"},
    {ArchId::unet3d, "unet3d"},
    {ArchId::unet3d_inception, "unet3d_inception"},
    {ArchId::se_unet3d, "se_unet3d"},
    {ArchId::se_unet3d_inception, "se_unet3d_inception"},
    {ArchId::uresnet3d, "uresnet3d"},
    {ArchId::se_uresnet3d, "se_uresnet3d"},
    {ArchId::unext3d, "unext3d"},
    {ArchId::unext3d_inception, "unext3d_inception"},
};

constexpr std::int64_t kBaselineWidths[] = {8, 16, 32};

bool uses_se(ArchId a) {
  return a == ArchId::se_unet3d || a == ArchId::se_unet3d_inception || a == ArchId::se_uresnet3d;
}

bool uses_inception(ArchId a) {
  return a == ArchId::unet3d_inception || a == ArchId::se_unet3d_inception || a == ArchId::unext3d_inception;
}

bool is_unext(ArchId a) { return a == ArchId::unext3d || a == ArchId::unext3d_inception; }

}  // namespace

const char* to_string(ArchId arch) {
  for (const auto& a : kArchNames) {
    if (a.id == arch) return a.name;
  }
  return "unknown";
}

ArchId parse_arch(const std::string& name) {
  for (const auto& a : kArchNames) {
    if (name == a.name) return a.id;
  }
  std::string known;
  for (const auto& a : kArchNames) known += std::string(known.empty() ? "" : ", ") + a.name;
  throw ConfigError("unknown arch_id '" + name + "' (expected one of " + known + ")");
}

std::int64_t stage_filters(const ModelConfig& config) {
  return is_unext(config.arch) ? config.base_filters / 2 : config.base_filters;
}

std::int64_t spatial_multiple(const ModelConfig& config) {
  return config.arch == ArchId::baseline ? 8 : std::int64_t{1} << config.depth;
}

std::vector<std::string> validation_errors(const ModelConfig& c) {
  std::vector<std::string> errors;
  auto need = [&](bool ok, const std::string& msg) {
    if (!ok) errors.push_back(msg);
  };
  need(c.in_channels >= 1, "model.in_channels must be at least 1");
  need(c.num_classes >= 2, "model.num_classes must be at least 2");
  need(c.base_filters >= 1, "model.base_filters must be at least 1");
  need(c.kernel >= 1 && c.kernel % 2 == 1, "model.kernel must be odd");
  need(c.cardinality >= 1, "model.cardinality must be at least 1");
  need(c.se_reduction >= 1, "model.se_reduction must be at least 1");
  if (c.arch == ArchId::baseline) return errors;
  need(c.depth >= 1 && c.depth <= 8, "model.depth must be in 1..8");
  if (!errors.empty()) return errors;
  const auto f = stage_filters(c);
  if (is_unext(c.arch)) {
    need(c.base_filters % 2 == 0, "model.base_filters must be even for " + std::string(to_string(c.arch)) +
                                      " (branches use half the filters)");
  }
  if (uses_inception(c.arch)) {
    need(f % 4 == 0, "model.base_filters gives " + std::to_string(f) +
                         " stage filters, which inception blocks cannot split into 4 branches");
  }
  if (uses_se(c.arch)) {
    need(f % c.se_reduction == 0, "model.base_filters gives " + std::to_string(f) +
                                      " stage filters, not divisible by se_reduction " +
                                      std::to_string(c.se_reduction));
  }
  return errors;
}

BlockSpec stage_block(const ModelConfig& c, std::int64_t in_channels, std::int64_t out_channels) {
  BlockSpec spec;
  spec.in_channels = in_channels;
  spec.out_channels = out_channels;
  spec.kernel = c.kernel;
  spec.se_reduction = c.se_reduction;
  spec.cardinality = c.cardinality;
  spec.with_se = uses_se(c.arch);
  switch (c.arch) {
    case ArchId::unet3d:
    case ArchId::se_unet3d:
      spec.kind = BlockKind::double_conv;
      break;
    case ArchId::unet3d_inception:
    case ArchId::se_unet3d_inception:
      spec.kind = BlockKind::inception;
      break;
    case ArchId::uresnet3d:
    case ArchId::se_uresnet3d: {
      auto inner = spec;
      inner.kind = BlockKind::double_conv;
      inner.with_se = false;
      spec.kind = BlockKind::residual_wrap;
      spec.inner = std::make_shared<const BlockSpec>(inner);
      break;
    }
    case ArchId::unext3d:
    case ArchId::unext3d_inception:
      spec.kind = BlockKind::aggregated;
      spec.inception_branches = c.arch == ArchId::unext3d_inception;
      break;
    case ArchId::baseline:
      throw ConfigError("baseline has no unet stages");
  }
  return spec;
}

template <typename T>
Model<T>::Model(const ModelConfig& config) : config_(config) {
  const auto errors = validation_errors(config);
  if (!errors.empty()) throw ConfigError(errors.front());
  if (config.arch == ArchId::baseline) {
    std::int64_t in = config.in_channels;
    for (int i = 0; i < 3; ++i) {
      const auto idx = std::to_string(i + 1);
      encoders_.push_back(
          &this->register_child("conv" + idx, std::make_unique<Conv3d<T>>(in, kBaselineWidths[i], config.kernel)));
      pools_.push_back(&this->register_child("pool" + idx, std::make_unique<MaxPool3d<T>>(2, 2)));
      in = kBaselineWidths[i];
    }
    head_ = &this->register_child("classifier", std::make_unique<Conv3d<T>>(in, config.num_classes, 1));
    return;
  }
  const auto f = stage_filters(config);
  std::int64_t in = config.in_channels;
  for (std::int64_t i = 0; i < config.depth; ++i) {
    const auto idx = std::to_string(i);
    const auto out = f << i;
    encoders_.push_back(&this->register_child("enc" + idx, make_block<T>(stage_block(config, in, out))));
    pools_.push_back(&this->register_child("pool" + idx, std::make_unique<MaxPool3d<T>>(2, 2)));
    in = out;
  }
  bottleneck_ = &this->register_child("bottleneck", make_block<T>(stage_block(config, in, f << config.depth)));
  for (std::int64_t i = config.depth - 1; i >= 0; --i) {
    const auto idx = std::to_string(i);
    const auto out = f << i;
    ups_.push_back(&this->register_child("up" + idx, std::make_unique<TransposedConv3d<T>>(out * 2, out, 2, 2)));
    decoders_.push_back(&this->register_child("dec" + idx, make_block<T>(stage_block(config, out * 2, out))));
  }
  head_ = &this->register_child("head", std::make_unique<Conv3d<T>>(f, config.num_classes, 1));
}

template <typename T>
Tensor<T> Model<T>::forward(const Tensor<T>& x, Mode mode) {
  if (x.ndim() != 5) throw ShapeError("model: input must be 5-d N,C,D,H,W, got " + to_string(x.shape()));
  if (x.dim(1) != config_.in_channels) {
    throw ShapeError("model: axis 1 (C) is " + std::to_string(x.dim(1)) + " but the model expects " +
                     std::to_string(config_.in_channels) + " input channels");
  }
  const auto multiple = spatial_multiple(config_);
  const char* axes[] = {"D", "H", "W"};
  for (int a = 0; a < 3; ++a) {
    if (x.dim(2 + a) % multiple != 0) {
      throw ShapeError("model: axis " + std::to_string(2 + a) + " (" + axes[a] + ") extent " +
                       std::to_string(x.dim(2 + a)) + " must be a multiple of " + std::to_string(multiple));
    }
  }
  return config_.arch == ArchId::baseline ? forward_baseline(x, mode) : forward_unet(x, mode);
}

template <typename T>
Tensor<T> Model<T>::forward_baseline(const Tensor<T>& x, Mode mode) {
  Tensor<T> h = x;
  for (std::size_t i = 0; i < encoders_.size(); ++i) {
    h = relu(pools_[i]->forward(encoders_[i]->forward(h, mode), mode));
  }
  return head_->forward(upsample_nearest(h, x.dim(2) / h.dim(2)), mode);
}

template <typename T>
Tensor<T> Model<T>::forward_unet(const Tensor<T>& x, Mode mode) {
  std::vector<Tensor<T>> skips;
  Tensor<T> h = x;
  for (std::size_t i = 0; i < encoders_.size(); ++i) {
    skips.push_back(encoders_[i]->forward(h, mode));
    h = pools_[i]->forward(skips.back(), mode);
  }
  h = bottleneck_->forward(h, mode);
  for (std::size_t j = 0; j < decoders_.size(); ++j) {
    const Tensor<T> parts[] = {skips[skips.size() - 1 - j], ups_[j]->forward(h, mode)};
    h = decoders_[j]->forward(concat_channels<T>(parts), mode);
  }
  return head_->forward(h, mode);
}

template <typename T>
std::unique_ptr<Model<T>> build_model(const ModelConfig& config) {
  auto model = std::make_unique<Model<T>>(config);
  initialize_parameters<T>(*model, config.seed);
  return model;
}

template <typename T>
ModelSummary summarize(const Model<T>& model) {
  ModelSummary s;
  s.arch = to_string(model.config().arch);
  for (const auto& [name, child] : model.children()) {
    SummaryRow row;
    row.name = name;
    row.kind = child->kind();
    row.out_channels = child->out_channels();
    row.params = child->param_count();
    row.convs = child->count_kind("conv3d");
    row.transposed_convs = child->count_kind("transposed_conv3d");
    row.pools = child->count_kind("maxpool3d");
    s.total_params += row.params;
    s.convs += row.convs;
    s.transposed_convs += row.transposed_convs;
    s.pools += row.pools;
    s.rows.push_back(std::move(row));
  }
  return s;
}

nlohmann::json ModelSummary::to_json() const {
  auto rows_json = nlohmann::json::array();
  for (const auto& r : rows) {
    rows_json.push_back({{"name", r.name},
                         {"kind", r.kind},
                         {"out_channels", r.out_channels},
                         {"params", r.params},
                         {"convs", r.convs},
                         {"transposed_convs", r.transposed_convs},
                         {"pools", r.pools}});
  }
  return {{"arch", arch},
          {"total_params", total_params},
          {"convs", convs},
          {"transposed_convs", transposed_convs},
          {"pools", pools},
          {"rows", rows_json}};
}

std::string ModelSummary::to_table() const {
  std::size_t name_w = 4, kind_w = 4;
  for (const auto& r : rows) {
    name_w = std::max(name_w, r.name.size());
    kind_w = std::max(kind_w, r.kind.size());
  }
  std::ostringstream out;
  auto line = [&](const std::string& name, const std::string& kind, const std::string& ch, const std::string& params,
                  const std::string& convs, const std::string& up, const std::string& pools) {
    out << std::left << std::setw(static_cast<int>(name_w)) << name << "  " << std::setw(static_cast<int>(kind_w))
        << kind << "  " << std::right << std::setw(8) << ch << "  " << std::setw(12) << params << "  "
        << std::setw(5) << convs << "  " << std::setw(6) << up << "  " << std::setw(5) << pools << '\n';
  };
  line("name", "kind", "channels", "params", "convs", "upconv", "pools");
  for (const auto& r : rows) {
    line(r.name, r.kind, std::to_string(r.out_channels), std::to_string(r.params), std::to_string(r.convs),
         std::to_string(r.transposed_convs), std::to_string(r.pools));
  }
  line("total", arch, "", std::to_string(total_params), std::to_string(convs), std::to_string(transposed_convs),
       std::to_string(pools));
  return out.str();
}

template class Model<float>;
template class Model<double>;
template std::unique_ptr<Model<float>> build_model(const ModelConfig&);
template std::unique_ptr<Model<double>> build_model(const ModelConfig&);
template ModelSummary summarize(const Model<float>&);
template ModelSummary summarize(const Model<double>&);

}  // namespace volseg
