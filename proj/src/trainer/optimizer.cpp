#include <cmath>

#include "agln/trainer.hpp"

namespace agln {

AdamMoments AdamMoments::zeros_like(const ModelParams& params) {
  AdamMoments out;
  for (const auto& [name, t] : params) {
    out.m.add(name, Tensor<float>(t.shape()));
    out.v.add(name, Tensor<float>(t.shape()));
  }
  return out;
}

void adam_step(ModelParams& params, AdamMoments& moments, const std::map<std::string, Tensor<float>>& grads,
               const AdamConfig& cfg) {
  ++moments.step;
  const double t = static_cast<double>(moments.step);
  const auto step_size = static_cast<float>(cfg.lr / (1.0 - std::pow(cfg.beta1, t)));
  const auto v_correction = static_cast<float>(1.0 / (1.0 - std::pow(cfg.beta2, t)));
  const auto b1 = static_cast<float>(cfg.beta1);
  const auto b2 = static_cast<float>(cfg.beta2);
  const auto eps = static_cast<float>(cfg.eps);
  for (auto& [name, p] : params) {
    const auto it = grads.find(name);
    if (it == grads.end()) throw SpecError("adam_step: missing gradient for " + name);
    const Tensor<float>& g = it->second;
    Tensor<float>& m = moments.m.at(name);
    Tensor<float>& v = moments.v.at(name);
    if (g.shape() != p.shape() || m.shape() != p.shape() || v.shape() != p.shape()) {
      throw ShapeError("adam_step: shape mismatch for " + name);
    }
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = b1 * m[i] + (1.0f - b1) * g[i];
      v[i] = b2 * v[i] + (1.0f - b2) * g[i] * g[i];
      p[i] -= step_size * m[i] / (std::sqrt(v[i] * v_correction) + eps);
    }
  }
}

Tensor<float> ImagePool::query(const Tensor<float>& fake, std::mt19937_64& rng) {
  if (capacity_ == 0) return fake;
  if (stored_.size() < capacity_) {
    stored_.push_back(fake);
    return fake;
  }
  std::bernoulli_distribution swap(0.5);
  if (!swap(rng)) return fake;
  std::uniform_int_distribution<std::size_t> pick(0, stored_.size() - 1);
  const std::size_t i = pick(rng);
  Tensor<float> previous = std::move(stored_[i]);
  stored_[i] = fake;
  return previous;
}

void ImagePool::restore(std::vector<Tensor<float>> images) {
  if (images.size() > capacity_) throw std::length_error("ImagePool::restore: more images than capacity");
  stored_ = std::move(images);
}

}  // namespace agln
