#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "agln/graph.hpp"

namespace agln {

class SpecError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// ResNet-style image translator: 7x7 stem, two stride-2 downsamplings, residual blocks,
// two stride-2 transposed upsamplings, 7x7 tanh head.
struct GeneratorSpec {
  std::size_t in_channels = 3;
  std::size_t base_channels = 64;
  std::size_t n_residual_blocks = 6;
  std::size_t image_size = 64;

  void validate() const;
  bool operator==(const GeneratorSpec&) const = default;
};

// PatchGAN critic emitting an (N,1,h,w) map of unbounded logits.
struct DiscriminatorSpec {
  std::size_t in_channels = 3;
  std::size_t base_channels = 64;
  std::size_t n_layers = 3;

  void validate() const;
  bool operator==(const DiscriminatorSpec&) const = default;
};

// Named weights and biases of one network, ordered by name.
class ModelParams {
 public:
  using Map = std::map<std::string, Tensor<float>>;

  void add(const std::string& name, Tensor<float> value);
  const Tensor<float>& at(const std::string& name) const;
  Tensor<float>& at(const std::string& name);
  bool contains(const std::string& name) const { return tensors_.contains(name); }

  std::size_t size() const { return tensors_.size(); }
  std::size_t parameter_count() const;
  Map::const_iterator begin() const { return tensors_.begin(); }
  Map::const_iterator end() const { return tensors_.end(); }
  Map::iterator begin() { return tensors_.begin(); }
  Map::iterator end() { return tensors_.end(); }

  bool operator==(const ModelParams&) const = default;

 private:
  Map tensors_;
};

struct Generator {
  GeneratorSpec spec;
  ModelParams params;

  bool operator==(const Generator&) const = default;
};

struct Discriminator {
  DiscriminatorSpec spec;
  ModelParams params;

  bool operator==(const Discriminator&) const = default;
};

// Weights ~ N(0, 0.02), biases zero, drawn in layer order from `seed`.
Generator build_generator(const GeneratorSpec& spec, std::uint64_t seed);
Discriminator build_discriminator(const DiscriminatorSpec& spec, std::uint64_t seed);

// Parameters placed on a graph, either as trainable leaves or as constants.
class BoundParams {
 public:
  BoundParams(Graph<float>& graph, const ModelParams& params, bool trainable);

  Var<float> operator[](const std::string& name) const;
  const std::map<std::string, Var<float>>& vars() const { return vars_; }

 private:
  std::map<std::string, Var<float>> vars_;
};

Var<float> generator_forward(const GeneratorSpec& spec, const BoundParams& params, Var<float> x);
Var<float> discriminator_forward(const DiscriminatorSpec& spec, const BoundParams& params, Var<float> x);

// Forward-only evaluation on a private graph; safe to call concurrently.
Tensor<float> generator_forward(const Generator& gen, const Tensor<float>& x);
Tensor<float> discriminator_forward(const Discriminator& disc, const Tensor<float>& x);

}  // namespace agln
