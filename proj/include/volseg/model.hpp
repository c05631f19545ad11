#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "volseg/blocks.hpp"

namespace volseg {

enum class ArchId {
  baseline,
  unet3d,
  unet3d_inception,
  se_unet3d,
  se_unet3d_inception,
  uresnet3d,
  se_uresnet3d,
  unext3d,
  unext3d_inception,
};

inline constexpr std::array<ArchId, 9> kAllArchs = {
    ArchId::baseline,  ArchId::unet3d,       ArchId::unet3d_inception, ArchId::se_unet3d,         ArchId::se_unet3d_inception,
    ArchId::uresnet3d, ArchId::se_uresnet3d, ArchId::unext3d,          ArchId::unext3d_inception,
};

const char* to_string(ArchId arch);
ArchId parse_arch(const std::string& name);  // ConfigError on unknown names

struct ModelConfig {
  ArchId arch = ArchId::unet3d;
  std::int64_t in_channels = 4;
  std::int64_t num_classes = 2;
  std::int64_t base_filters = 8;
  std::int64_t depth = 4;  // pooling stages of the unet family; the baseline always has 3
  std::int64_t cardinality = 2;
  std::int64_t kernel = 3;
  std::int64_t se_reduction = 4;
  std::uint64_t seed = 0;
};

/// Every violated constraint, one message each; empty when valid.
std::vector<std::string> validation_errors(const ModelConfig& config);

/// Filters of the first encoder stage (halved for the unext variants).
std::int64_t stage_filters(const ModelConfig& config);

/// Block used at a unet-family stage mapping in -> out channels.
BlockSpec stage_block(const ModelConfig& config, std::int64_t in_channels, std::int64_t out_channels);

/// Spatial extents must be multiples of this.
std::int64_t spatial_multiple(const ModelConfig& config);

template <typename T>
class Model final : public Module<T> {
 public:
  explicit Model(const ModelConfig& config);

  /// [N, in_channels, D, H, W] -> logits [N, num_classes, D, H, W].
  Tensor<T> forward(const Tensor<T>& x, Mode mode) override;
  std::string kind() const override { return "model"; }
  std::int64_t out_channels() const override { return config_.num_classes; }

  const ModelConfig& config() const { return config_; }

 private:
  Tensor<T> forward_baseline(const Tensor<T>& x, Mode mode);
  Tensor<T> forward_unet(const Tensor<T>& x, Mode mode);

  ModelConfig config_;
  std::vector<Module<T>*> encoders_;
  std::vector<Module<T>*> pools_;
  Module<T>* bottleneck_ = nullptr;
  std::vector<Module<T>*> ups_;
  std::vector<Module<T>*> decoders_;
  Module<T>* head_ = nullptr;
};

/// Builds and seeds a model; identical configs give bit-identical parameters.
template <typename T>
std::unique_ptr<Model<T>> build_model(const ModelConfig& config);

struct SummaryRow {
  std::string name;
  std::string kind;
  std::int64_t out_channels = 0;
  std::int64_t params = 0;
  std::int64_t convs = 0;  // every standard conv, including 1^3 projections and heads
  std::int64_t transposed_convs = 0;
  std::int64_t pools = 0;
};

struct ModelSummary {
  std::string arch;
  std::vector<SummaryRow> rows;
  std::int64_t total_params = 0;
  std::int64_t convs = 0;
  std::int64_t transposed_convs = 0;
  std::int64_t pools = 0;

  nlohmann::json to_json() const;
  std::string to_table() const;
};

template <typename T>
ModelSummary summarize(const Model<T>& model);

extern template class Model<float>;
extern template class Model<double>;

}  // namespace volseg
