#include "agln/models.hpp"

#include <algorithm>
#include <random>

#include "agln/ops.hpp"

namespace agln {
namespace {

constexpr double kInitStd = 0.02;
constexpr double kNormEps = 1e-5;

class LayerBuilder {
 public:
  explicit LayerBuilder(std::uint64_t seed) : rng_(seed) {}

  void conv(ModelParams& p, const std::string& name, std::size_t c_out, std::size_t c_in, std::size_t k) {
    add_weights(p, name, Shape{c_out, c_in, k, k}, c_out);
  }
  // Transposed-conv weights are laid out (Cin, Cout, k, k).
  void conv_transpose(ModelParams& p, const std::string& name, std::size_t c_in, std::size_t c_out, std::size_t k) {
    add_weights(p, name, Shape{c_in, c_out, k, k}, c_out);
  }

 private:
  void add_weights(ModelParams& p, const std::string& name, Shape shape, std::size_t bias) {
    Tensor<float> w(std::move(shape));
    std::normal_distribution<float> normal(0.0f, static_cast<float>(kInitStd));
    for (float& v : w.values()) v = normal(rng_);
    p.add(name + ".w", std::move(w));
    p.add(name + ".b", Tensor<float>(Shape{bias}));
  }

  std::mt19937_64 rng_;
};

std::string res_name(std::size_t block, int conv) {
  return "res" + std::to_string(block) + ".conv" + std::to_string(conv);
}

std::size_t disc_width(const DiscriminatorSpec& spec, std::size_t layer) {
  return spec.base_channels * std::min<std::size_t>(std::size_t{1} << layer, 8);
}

Var<float> conv(const BoundParams& p, const std::string& name, Var<float> x, std::size_t stride, Padding pad) {
  return conv2d(x, p[name + ".w"], p[name + ".b"], stride, pad);
}

Var<float> norm_relu(Var<float> x) { return relu(instance_norm(x, kNormEps)); }
Var<float> norm_leaky(Var<float> x) { return leaky_relu(instance_norm(x, kNormEps)); }

}  // namespace

void GeneratorSpec::validate() const {
  if (in_channels < 1) throw SpecError("generator: in_channels must be >= 1");
  if (base_channels < 1) throw SpecError("generator: base_channels must be >= 1");
  if (n_residual_blocks < 1) throw SpecError("generator: n_residual_blocks must be >= 1");
  if (image_size < 8 || image_size % 4 != 0) throw SpecError("generator: image_size must be a multiple of 4 and >= 8");
}

void DiscriminatorSpec::validate() const {
  if (in_channels < 1) throw SpecError("discriminator: in_channels must be >= 1");
  if (base_channels < 1) throw SpecError("discriminator: base_channels must be >= 1");
  if (n_layers < 1) throw SpecError("discriminator: n_layers must be >= 1");
}

void ModelParams::add(const std::string& name, Tensor<float> value) {
  if (!tensors_.emplace(name, std::move(value)).second) throw SpecError("duplicate parameter name: " + name);
}

const Tensor<float>& ModelParams::at(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw SpecError("unknown parameter: " + name);
  return it->second;
}

Tensor<float>& ModelParams::at(const std::string& name) {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw SpecError("unknown parameter: " + name);
  return it->second;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : tensors_) n += t.size();
  return n;
}

Generator build_generator(const GeneratorSpec& spec, std::uint64_t seed) {
  spec.validate();
  Generator gen{spec, {}};
  LayerBuilder b(seed);
  const std::size_t c = spec.base_channels;
  b.conv(gen.params, "stem", c, spec.in_channels, 7);
  b.conv(gen.params, "down1", 2 * c, c, 3);
  b.conv(gen.params, "down2", 4 * c, 2 * c, 3);
  for (std::size_t i = 0; i < spec.n_residual_blocks; ++i) {
    b.conv(gen.params, res_name(i, 1), 4 * c, 4 * c, 3);
    b.conv(gen.params, res_name(i, 2), 4 * c, 4 * c, 3);
  }
  b.conv_transpose(gen.params, "up1", 4 * c, 2 * c, 3);
  b.conv_transpose(gen.params, "up2", 2 * c, c, 3);
  b.conv(gen.params, "head", spec.in_channels, c, 7);
  return gen;
}

Discriminator build_discriminator(const DiscriminatorSpec& spec, std::uint64_t seed) {
  spec.validate();
  Discriminator disc{spec, {}};
  LayerBuilder b(seed);
  b.conv(disc.params, "layer0", spec.base_channels, spec.in_channels, 4);
  for (std::size_t i = 1; i <= spec.n_layers; ++i) {
    b.conv(disc.params, "layer" + std::to_string(i), disc_width(spec, i), disc_width(spec, i - 1), 4);
  }
  b.conv(disc.params, "logits", 1, disc_width(spec, spec.n_layers), 4);
  return disc;
}

BoundParams::BoundParams(Graph<float>& graph, const ModelParams& params, bool trainable) {
  for (const auto& [name, t] : params) vars_.emplace(name, trainable ? graph.parameter(t) : graph.constant(t));
}

Var<float> BoundParams::operator[](const std::string& name) const {
  auto it = vars_.find(name);
  if (it == vars_.end()) throw SpecError("unbound parameter: " + name);
  return it->second;
}

Var<float> generator_forward(const GeneratorSpec& spec, const BoundParams& p, Var<float> x) {
  const Shape& xs = x.shape();
  if (xs.size() != 4 || xs[1] != spec.in_channels || xs[2] != spec.image_size || xs[3] != spec.image_size) {
    throw ShapeError("generator: expected (N," + std::to_string(spec.in_channels) + "," +
                     std::to_string(spec.image_size) + "," + std::to_string(spec.image_size) + "), got " +
                     shape_str(xs));
  }
  auto y = norm_relu(conv(p, "stem", x, 1, Padding::reflect(3)));
  y = norm_relu(conv(p, "down1", y, 2, Padding::zero(1)));
  y = norm_relu(conv(p, "down2", y, 2, Padding::zero(1)));
  for (std::size_t i = 0; i < spec.n_residual_blocks; ++i) {
    auto r = norm_relu(conv(p, res_name(i, 1), y, 1, Padding::reflect(1)));
    r = instance_norm(conv(p, res_name(i, 2), r, 1, Padding::reflect(1)), kNormEps);
    y = add(y, r);
  }
  y = norm_relu(conv_transpose2d(y, p["up1.w"], p["up1.b"], 2, 1, 1));
  y = norm_relu(conv_transpose2d(y, p["up2.w"], p["up2.b"], 2, 1, 1));
  return tanh(conv(p, "head", y, 1, Padding::reflect(3)));
}

Var<float> discriminator_forward(const DiscriminatorSpec& spec, const BoundParams& p, Var<float> x) {
  const Shape& xs = x.shape();
  if (xs.size() != 4 || xs[1] != spec.in_channels) {
    throw ShapeError("discriminator: expected (N," + std::to_string(spec.in_channels) + ",H,W), got " + shape_str(xs));
  }
  auto y = leaky_relu(conv(p, "layer0", x, 2, Padding::zero(1)));
  for (std::size_t i = 1; i < spec.n_layers; ++i) {
    y = norm_leaky(conv(p, "layer" + std::to_string(i), y, 2, Padding::zero(1)));
  }
  y = norm_leaky(conv(p, "layer" + std::to_string(spec.n_layers), y, 1, Padding::zero(1)));
  return conv(p, "logits", y, 1, Padding::zero(1));
}

Tensor<float> generator_forward(const Generator& gen, const Tensor<float>& x) {
  Graph<float> g;
  BoundParams p(g, gen.params, false);
  return generator_forward(gen.spec, p, g.constant(x)).value();
}

Tensor<float> discriminator_forward(const Discriminator& disc, const Tensor<float>& x) {
  Graph<float> g;
  BoundParams p(g, disc.params, false);
  return discriminator_forward(disc.spec, p, g.constant(x)).value();
}

}  // namespace agln
