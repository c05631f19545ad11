#include "volseg/blocks.hpp"

#include <nlohmann/json.hpp>

namespace volseg {

const char* to_string(BlockKind kind) {
  switch (kind) {
    case BlockKind::double_conv: return "double_conv";
    case BlockKind::inception: return "inception";
    case BlockKind::se: return "se";
    case BlockKind::residual_wrap: return "residual_wrap";
    case BlockKind::aggregated: return "aggregated";
  }
  return "unknown";
}

std::int64_t inception_bottleneck(std::int64_t out_channels) {
  return std::max<std::int64_t>(1, (out_channels + 7) / 8);
}

void validate(const BlockSpec& spec) {
  const std::string where = std::string(to_string(spec.kind)) + " block: ";
  if (spec.in_channels < 1 || spec.out_channels < 1) throw ConfigError(where + "channel counts must be positive");
  if (spec.kernel < 1 || spec.kernel % 2 == 0) {
    throw ConfigError(where + "kernel must be odd, got " + std::to_string(spec.kernel));
  }
  const bool inception = spec.kind == BlockKind::inception ||
                         (spec.kind == BlockKind::aggregated && spec.inception_branches);
  if (inception && spec.out_channels % 4 != 0) {
    throw ConfigError(where + "out_channels " + std::to_string(spec.out_channels) + " is not divisible by 4");
  }
  if (spec.kind == BlockKind::aggregated && spec.cardinality < 1) {
    throw ConfigError(where + "cardinality must be at least 1");
  }
  if (spec.kind == BlockKind::se || spec.with_se) {
    if (spec.se_reduction < 1 || spec.out_channels % spec.se_reduction != 0) {
      throw ConfigError(where + "channels " + std::to_string(spec.out_channels) +
                        " are not divisible by the SE reduction " + std::to_string(spec.se_reduction));
    }
  }
  if (spec.kind == BlockKind::se && spec.in_channels != spec.out_channels) {
    throw ConfigError(where + "gating cannot change the channel count");
  }
  if (spec.kind == BlockKind::residual_wrap) {
    if (!spec.inner) throw ConfigError(where + "missing inner block");
    if (spec.inner->in_channels != spec.in_channels || spec.inner->out_channels != spec.out_channels) {
      throw ConfigError(where + "inner block channels do not match the wrap");
    }
    validate(*spec.inner);
  }
}

template <typename T>
ConvPath<T>::ConvPath(std::int64_t in_channels, std::int64_t out_channels, std::int64_t kernel)
    : out_(out_channels) {
  conv1_ = &this->register_child("conv1", std::make_unique<Conv3d<T>>(in_channels, out_channels, kernel));
  bn1_ = &this->register_child("bn1", std::make_unique<BatchNorm3d<T>>(out_channels));
  conv2_ = &this->register_child("conv2", std::make_unique<Conv3d<T>>(out_channels, out_channels, kernel));
}

template <typename T>
Tensor<T> ConvPath<T>::forward(const Tensor<T>& x, Mode mode) {
  return conv2_->forward(bn1_->forward(relu(conv1_->forward(x, mode)), mode), mode);
}

template <typename T>
InceptionPath<T>::InceptionPath(std::int64_t in_channels, std::int64_t out_channels) : out_(out_channels) {
  if (out_channels % 4 != 0) {
    throw ConfigError("inception: out_channels " + std::to_string(out_channels) + " is not divisible by 4");
  }
  const auto quarter = out_channels / 4;
  const auto b = inception_bottleneck(out_channels);
  b1_ = &this->register_child("b1", std::make_unique<Conv3d<T>>(in_channels, quarter, 1));
  b3_reduce_ = &this->register_child("b3_reduce", std::make_unique<Conv3d<T>>(in_channels, b, 1));
  b3_ = &this->register_child("b3", std::make_unique<Conv3d<T>>(b, quarter, 3));
  b5_reduce_ = &this->register_child("b5_reduce", std::make_unique<Conv3d<T>>(in_channels, b, 1));
  b5_ = &this->register_child("b5", std::make_unique<Conv3d<T>>(b, quarter, 5));
  pool_proj_ = &this->register_child("pool_proj", std::make_unique<Conv3d<T>>(in_channels, quarter, 1));
}

template <typename T>
Tensor<T> InceptionPath<T>::forward(const Tensor<T>& x, Mode mode) {
  const Tensor<T> parts[] = {
      b1_->forward(x, mode),
      b3_->forward(relu(b3_reduce_->forward(x, mode)), mode),
      b5_->forward(relu(b5_reduce_->forward(x, mode)), mode),
      pool_proj_->forward(maxpool3d(x, 3, 1, 1).output, mode),
  };
  return concat_channels<T>(parts);
}

template <typename T>
SEBlock<T>::SEBlock(std::int64_t channels, std::int64_t reduction) : channels_(channels) {
  if (reduction < 1 || channels % reduction != 0) {
    throw ConfigError("se: channels " + std::to_string(channels) + " are not divisible by the reduction " +
                      std::to_string(reduction));
  }
  squeeze_ = &this->register_child("squeeze", std::make_unique<Dense<T>>(channels, channels / reduction));
  excite_ = &this->register_child("excite", std::make_unique<Dense<T>>(channels / reduction, channels));
}

template <typename T>
Tensor<T> SEBlock<T>::forward(const Tensor<T>& x, Mode mode) {
  auto gates = sigmoid(excite_->forward(relu(squeeze_->forward(global_avg_pool(x), mode)), mode));
  return scale_channels(x, gates);
}

template <typename T>
GatedBlock<T>::GatedBlock(const BlockSpec& spec) : spec_(spec) {
  validate(spec);
  std::int64_t branches = 1;
  bool inception = spec.kind == BlockKind::inception;
  if (spec.kind == BlockKind::aggregated) {
    branches = spec.cardinality;
    inception = spec.inception_branches;
  } else if (spec.kind != BlockKind::double_conv && spec.kind != BlockKind::inception) {
    throw ConfigError(std::string("gated block cannot be built from kind ") + to_string(spec.kind));
  }
  for (std::int64_t i = 0; i < branches; ++i) {
    const auto name = "branch" + std::to_string(i);
    if (inception) {
      branches_.push_back(
          &this->register_child(name, std::make_unique<InceptionPath<T>>(spec.in_channels, spec.out_channels)));
    } else {
      branches_.push_back(&this->register_child(
          name, std::make_unique<ConvPath<T>>(spec.in_channels, spec.out_channels, spec.kernel)));
    }
  }
  bn_ = &this->register_child("bn", std::make_unique<BatchNorm3d<T>>(spec.out_channels));
  if (spec.with_se) {
    se_ = &this->register_child("se", std::make_unique<SEBlock<T>>(spec.out_channels, spec.se_reduction));
  }
}

template <typename T>
Tensor<T> GatedBlock<T>::preactivation(const Tensor<T>& x, Mode mode) {
  Tensor<T> acc = branches_.front()->forward(x, mode);
  for (std::size_t i = 1; i < branches_.size(); ++i) acc = add(acc, branches_[i]->forward(x, mode));
  return acc;
}

template <typename T>
Tensor<T> GatedBlock<T>::forward(const Tensor<T>& x, Mode mode) {
  auto y = bn_->forward(relu(preactivation(x, mode)), mode);
  return se_ ? se_->forward(y, mode) : y;
}

template <typename T>
ResidualWrap<T>::ResidualWrap(const BlockSpec& spec) : spec_(spec) {
  validate(spec);
  body_ = &this->register_child("body", make_block<T>(*spec.inner));
  if (spec.with_se) {
    se_ = &this->register_child("se", std::make_unique<SEBlock<T>>(spec.out_channels, spec.se_reduction));
  }
  if (spec.in_channels != spec.out_channels) {
    proj_ = &this->register_child("proj", std::make_unique<Conv3d<T>>(spec.in_channels, spec.out_channels, 1));
  }
}

template <typename T>
Tensor<T> ResidualWrap<T>::forward(const Tensor<T>& x, Mode mode) {
  auto y = body_->forward(x, mode);
  if (y.ndim() != x.ndim() || !std::equal(y.shape().begin() + 2, y.shape().end(), x.shape().begin() + 2)) {
    throw ShapeError("residual_wrap: inner block changed the spatial shape from " + to_string(x.shape()) + " to " +
                     to_string(y.shape()));
  }
  if (se_) y = se_->forward(y, mode);
  return add(y, proj_ ? proj_->forward(x, mode) : x);
}

template <typename T>
std::unique_ptr<Module<T>> make_block(const BlockSpec& spec) {
  validate(spec);
  switch (spec.kind) {
    case BlockKind::se: return std::make_unique<SEBlock<T>>(spec.out_channels, spec.se_reduction);
    case BlockKind::residual_wrap: return std::make_unique<ResidualWrap<T>>(spec);
    default: return std::make_unique<GatedBlock<T>>(spec);
  }
}

template <typename T>
nlohmann::json block_summary(const std::string& name, const Module<T>& block) {
  nlohmann::json out = {
      {"name", name},
      {"kind", block.kind()},
      {"out_channels", block.out_channels()},
      {"params", block.param_count()},
  };
  auto children = nlohmann::json::array();
  for (const auto& [child_name, child] : block.children()) children.push_back(block_summary(child_name, *child));
  if (!children.empty()) out["children"] = std::move(children);
  return out;
}

template class ConvPath<float>;
template class ConvPath<double>;
template class InceptionPath<float>;
template class InceptionPath<double>;
template class SEBlock<float>;
template class SEBlock<double>;
template class GatedBlock<float>;
template class GatedBlock<double>;
template class ResidualWrap<float>;
template class ResidualWrap<double>;
template std::unique_ptr<Module<float>> make_block(const BlockSpec&);
template std::unique_ptr<Module<double>> make_block(const BlockSpec&);
template nlohmann::json block_summary(const std::string&, const Module<float>&);
template nlohmann::json block_summary(const std::string&, const Module<double>&);

}  // namespace volseg
