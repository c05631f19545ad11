#pragma once

#include <cstdint>
#include <memory>
#include <string>

#include <nlohmann/json_fwd.hpp>

#include "volseg/layers.hpp"

namespace volseg {

enum class BlockKind { double_conv, inception, se, residual_wrap, aggregated };

const char* to_string(BlockKind kind);

/// Declarative description of one block.
///
/// `with_se` attaches channel gating: after the final batchnorm for
/// double_conv / inception / aggregated, and on the inner output before the
/// add for residual_wrap. `inception_branches` selects inception paths as the
/// branches of an aggregated block.
struct BlockSpec {
  BlockKind kind = BlockKind::double_conv;
  std::int64_t in_channels = 1;
  std::int64_t out_channels = 1;
  std::int64_t kernel = 3;
  std::int64_t se_reduction = 4;
  std::int64_t cardinality = 2;
  bool inception_branches = false;
  bool with_se = false;
  std::shared_ptr<const BlockSpec> inner;  // residual_wrap only
};

// Throws ConfigError describing the first violated constraint.
void validate(const BlockSpec& spec);

/// Inception bottleneck width for the 3^3 and 5^3 branches.
std::int64_t inception_bottleneck(std::int64_t out_channels);

/// conv(k) -> relu -> batchnorm -> conv(k); the trailing relu and batchnorm
/// belong to the enclosing block so that branches can be summed first.
template <typename T>
class ConvPath final : public Module<T> {
 public:
  ConvPath(std::int64_t in_channels, std::int64_t out_channels, std::int64_t kernel);
  Tensor<T> forward(const Tensor<T>& x, Mode mode) override;
  std::string kind() const override { return "conv_path"; }
  std::int64_t out_channels() const override { return out_; }

 private:
  std::int64_t out_;
  Conv3d<T>* conv1_;
  BatchNorm3d<T>* bn1_;
  Conv3d<T>* conv2_;
};

/// Four concatenated branches of out/4 channels: 1^3; 1^3 -> 3^3; 1^3 -> 5^3;
/// 3-window maxpool -> 1^3.
template <typename T>
class InceptionPath final : public Module<T> {
 public:
  InceptionPath(std::int64_t in_channels, std::int64_t out_channels);
  Tensor<T> forward(const Tensor<T>& x, Mode mode) override;
  std::string kind() const override { return "inception_path"; }
  std::int64_t out_channels() const override { return out_; }

 private:
  std::int64_t out_;
  Conv3d<T>* b1_;
  Conv3d<T>* b3_reduce_;
  Conv3d<T>* b3_;
  Conv3d<T>* b5_reduce_;
  Conv3d<T>* b5_;
  Conv3d<T>* pool_proj_;
};

/// global_avg_pool -> dense C -> C/r -> relu -> dense C/r -> C -> sigmoid,
/// then per-channel gating of the input.
template <typename T>
class SEBlock final : public Module<T> {
 public:
  SEBlock(std::int64_t channels, std::int64_t reduction);
  Tensor<T> forward(const Tensor<T>& x, Mode mode) override;
  std::string kind() const override { return "se"; }
  std::int64_t out_channels() const override { return channels_; }

  Dense<T>& squeeze() { return *squeeze_; }
  Dense<T>& excite() { return *excite_; }

 private:
  std::int64_t channels_;
  Dense<T>* squeeze_;
  Dense<T>* excite_;
};

/// sum of branch outputs -> relu -> batchnorm [-> se]. One conv path is the
/// plain double convolution; one inception path is the inception block.
template <typename T>
class GatedBlock final : public Module<T> {
 public:
  explicit GatedBlock(const BlockSpec& spec);
  Tensor<T> forward(const Tensor<T>& x, Mode mode) override;
  std::string kind() const override { return to_string(spec_.kind); }
  std::int64_t out_channels() const override { return spec_.out_channels; }

  // Sum of branch outputs before the shared relu and batchnorm.
  Tensor<T> preactivation(const Tensor<T>& x, Mode mode);

 private:
  BlockSpec spec_;
  std::vector<Module<T>*> branches_;
  BatchNorm3d<T>* bn_;
  SEBlock<T>* se_ = nullptr;
};

/// inner(x) [-> se] + proj(x); proj is a 1^3 conv when channel counts differ.
template <typename T>
class ResidualWrap final : public Module<T> {
 public:
  explicit ResidualWrap(const BlockSpec& spec);
  Tensor<T> forward(const Tensor<T>& x, Mode mode) override;
  std::string kind() const override { return "residual_wrap"; }
  std::int64_t out_channels() const override { return spec_.out_channels; }

 private:
  BlockSpec spec_;
  Module<T>* body_;
  SEBlock<T>* se_ = nullptr;
  Conv3d<T>* proj_ = nullptr;
};

template <typename T>
std::unique_ptr<Module<T>> make_block(const BlockSpec& spec);

/// name, kind, channels, param count and nested children.
template <typename T>
nlohmann::json block_summary(const std::string& name, const Module<T>& block);

extern template class ConvPath<float>;
extern template class ConvPath<double>;
extern template class InceptionPath<float>;
extern template class InceptionPath<double>;
extern template class SEBlock<float>;
extern template class SEBlock<double>;
extern template class GatedBlock<float>;
extern template class GatedBlock<double>;
extern template class ResidualWrap<float>;
extern template class ResidualWrap<double>;

}  // namespace volseg
