#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vaetk/autodiff.hpp"
#include "vaetk/objective.hpp"

namespace vaetk {

enum class ArchKind : std::uint8_t { MLP = 0, Conv2D = 1 };

const char* name(ArchKind kind);

/// Architecture of an encoder/decoder pair.
///
/// MLP: input (any shape, flattened) -> hidden_widths -> 2d head; the decoder
/// mirrors the hidden widths and ends in a linear layer of the input size.
///
/// Conv2D: input [C, H, W] -> one ReLU conv per entry of conv_channels
/// (kernel, stride, padding kernel/2) -> flatten -> linear 2d head. The decoder
/// is linear -> reshape -> (nearest upsample by stride, conv, ReLU) per stage,
/// the last conv producing C channels with no activation.
struct ArchitectureSpec {
  ArchKind kind = ArchKind::MLP;
  Shape input_shape;
  std::size_t latent_dim = 2;
  std::vector<std::size_t> hidden_widths{128, 64};
  std::vector<std::size_t> conv_channels{8, 16};
  std::size_t kernel = 3;
  std::size_t stride = 2;

  // Throws SpecError when the description cannot produce a valid network.
  void validate() const;
  std::size_t input_size() const { return numel(input_shape); }
  // Spatial extents [H, W] after each conv stage (Conv2D only), starting with the input.
  std::vector<std::pair<std::size_t, std::size_t>> conv_extents() const;

  friend bool operator==(const ArchitectureSpec&, const ArchitectureSpec&) = default;
};

ArchitectureSpec default_mlp_spec(Shape input_shape, std::size_t latent_dim);
ArchitectureSpec default_conv_spec(Shape input_shape, std::size_t latent_dim);

struct Parameter {
  std::string name;
  Array value;
};

struct VaeModel {
  ArchitectureSpec spec;
  std::vector<Parameter> params;  // encoder parameters first, then decoder
  std::uint64_t seed = 0;

  std::size_t parameter_count() const;
  const Parameter& param(const std::string& name) const;
  Parameter& param(const std::string& name);
};

// Parameter count derived from the architecture description alone.
std::size_t analytic_parameter_count(const ArchitectureSpec& spec);

// Scaled-uniform fan-in initialization, all biases zero.
VaeModel init_model(const ArchitectureSpec& spec, std::uint64_t seed);

/// Model parameters registered as leaves of one graph.
class BoundModel {
 public:
  BoundModel(ad::Graph& graph, const VaeModel& model, bool requires_grad);
  // Uses existing leaves, one per model parameter in declared order.
  BoundModel(const VaeModel& model, std::vector<ad::Var> params);

  const VaeModel& model() const { return *model_; }
  std::span<const ad::Var> params() const { return params_; }
  ad::Var param(const std::string& name) const;

 private:
  const VaeModel* model_;
  std::vector<ad::Var> params_;
};

// x: [batch, input_shape...] -> (mu, logvar), each [batch x d].
GaussianLatent encode(const BoundModel& model, ad::Var x);
// z: [batch x d] -> [batch, input_shape...]
ad::Var decode(const BoundModel& model, ad::Var z);

}  // namespace vaetk
