#include <cmath>

#include "agln/losses.hpp"
#include "agln/trainer.hpp"

namespace agln {
namespace {

std::map<std::string, Tensor<float>> collect(const BoundParams& bound, const GradientMap<float>& grads) {
  std::map<std::string, Tensor<float>> out;
  for (const auto& [name, var] : bound.vars()) out.emplace(name, grads.at(var));
  return out;
}

struct CriticUpdate {
  double loss = 0.0;
  std::map<std::string, Tensor<float>> grads;
};

CriticUpdate critic_pass(const Discriminator& critic, const Tensor<float>& real, const Tensor<float>& fake) {
  Graph<float> g;
  BoundParams p(g, critic.params, true);
  auto loss = adv_loss_discriminator(discriminator_forward(critic.spec, p, g.constant(real)),
                                     discriminator_forward(critic.spec, p, g.constant(fake)));
  CriticUpdate out;
  out.loss = loss.value().item();
  out.grads = collect(p, g.backward(loss));
  return out;
}

void require_finite(const LossRecord& rec, double value, const char* name) {
  if (!std::isfinite(value)) {
    throw TrainingAborted("non-finite " + std::string(name) + " at iteration " + std::to_string(rec.iter), rec);
  }
}

}  // namespace

TrainState init_train_state(const GeneratorSpec& gen, const DiscriminatorSpec& disc, const TrainHyper& hyper,
                            std::uint64_t seed) {
  TrainState s;
  s.hyper = hyper;
  s.seed = seed;
  // Distinct, fixed offsets keep the four initialisations independent of each other.
  s.gen_r = build_generator(gen, seed * 4 + 1);
  s.gen_a = build_generator(gen, seed * 4 + 2);
  s.critic_d = build_discriminator(disc, seed * 4 + 3);
  s.critic_h = build_discriminator(disc, seed * 4 + 4);
  s.opt_r = AdamMoments::zeros_like(s.gen_r.params);
  s.opt_a = AdamMoments::zeros_like(s.gen_a.params);
  s.opt_d = AdamMoments::zeros_like(s.critic_d.params);
  s.opt_h = AdamMoments::zeros_like(s.critic_h.params);
  s.rng.seed(seed);
  s.pool_d = ImagePool(hyper.pool_capacity);
  s.pool_h = ImagePool(hyper.pool_capacity);
  return s;
}

LossRecord train_step(TrainState& s, const Tensor<float>& d, const Tensor<float>& h) {
  LossRecord rec;
  rec.iter = s.iteration + 1;

  Tensor<float> fake_h, fake_d;
  std::map<std::string, Tensor<float>> grads_r, grads_a;
  try {
    Graph<float> g;
    BoundParams pr(g, s.gen_r.params, true);
    BoundParams pa(g, s.gen_a.params, true);
    BoundParams pcd(g, s.critic_d.params, false);
    BoundParams pch(g, s.critic_h.params, false);
    auto dv = g.constant(d);
    auto hv = g.constant(h);
    auto fh = generator_forward(s.gen_r.spec, pr, dv);
    auto fd = generator_forward(s.gen_a.spec, pa, hv);
    auto cyc = cycle_loss(dv, generator_forward(s.gen_a.spec, pa, fh), hv, generator_forward(s.gen_r.spec, pr, fd));
    auto adv_r = adv_loss_generator(discriminator_forward(s.critic_h.spec, pch, fh));
    auto adv_a = adv_loss_generator(discriminator_forward(s.critic_d.spec, pcd, fd));
    auto total = full_objective(adv_r, adv_a, cyc, s.hyper.lambda);
    rec.loss_g = total.value().item();
    rec.loss_cyc = cyc.value().item();
    require_finite(rec, rec.loss_g, "generator loss");
    fake_h = fh.value();
    fake_d = fd.value();
    const auto grads = g.backward(total);
    grads_r = collect(pr, grads);
    grads_a = collect(pa, grads);
  } catch (const NumericError& e) {
    throw TrainingAborted(std::string("generator phase: ") + e.what() + " at iteration " + std::to_string(rec.iter),
                          rec);
  }

  CriticUpdate upd_h, upd_d;
  try {
    upd_h = critic_pass(s.critic_h, h, s.pool_h.query(fake_h, s.rng));
    upd_d = critic_pass(s.critic_d, d, s.pool_d.query(fake_d, s.rng));
  } catch (const NumericError& e) {
    throw TrainingAborted(std::string("critic phase: ") + e.what() + " at iteration " + std::to_string(rec.iter), rec);
  }
  rec.loss_d_h = upd_h.loss;
  rec.loss_d_d = upd_d.loss;
  require_finite(rec, rec.loss_d_h, "healthy critic loss");
  require_finite(rec, rec.loss_d_d, "damaged critic loss");

  adam_step(s.gen_r.params, s.opt_r, grads_r, s.hyper.adam);
  adam_step(s.gen_a.params, s.opt_a, grads_a, s.hyper.adam);
  adam_step(s.critic_h.params, s.opt_h, upd_h.grads, s.hyper.adam);
  adam_step(s.critic_d.params, s.opt_d, upd_d.grads, s.hyper.adam);
  ++s.iteration;
  return rec;
}

std::string checkpoint_file_name(std::uint64_t iteration) {
  std::string digits = std::to_string(iteration);
  if (digits.size() < 7) digits.insert(0, 7 - digits.size(), '0');
  return "ckpt_" + digits + ".agln";
}

TrainResult train(TrainState state, const UnpairedDataset& data, const TrainOptions& options,
                  const StepCallback& on_step) {
  if (data.damaged.empty() || data.healthy.empty()) throw DataError("train: both domains must be non-empty");
  std::vector<Tensor<float>> damaged, healthy;
  damaged.reserve(data.damaged.size());
  healthy.reserve(data.healthy.size());
  for (const auto& t : data.damaged) damaged.push_back(to_tensor(t.image));
  for (const auto& t : data.healthy) healthy.push_back(to_tensor(t.image));

  TrainResult result{std::move(state), {}, {}};
  TrainState& s = result.state;
  const bool checkpointing = !options.checkpoint_dir.empty();
  if (checkpointing) std::filesystem::create_directories(options.checkpoint_dir);

  while (s.iteration < options.iterations) {
    std::uniform_int_distribution<std::size_t> pick_d(0, damaged.size() - 1);
    std::uniform_int_distribution<std::size_t> pick_h(0, healthy.size() - 1);
    const std::size_t i_d = pick_d(s.rng);
    const std::size_t i_h = pick_h(s.rng);
    const LossRecord rec = train_step(s, damaged[i_d], healthy[i_h]);
    result.log.append(rec);
    if (on_step) on_step(rec);
    if (checkpointing && options.checkpoint_every > 0 && s.iteration % options.checkpoint_every == 0) {
      const auto path = options.checkpoint_dir / checkpoint_file_name(s.iteration);
      save_checkpoint(s, path);
      result.checkpoints.push_back(path);
    }
  }
  if (checkpointing) {
    const auto path = options.checkpoint_dir / "final.agln";
    save_checkpoint(s, path);
    result.checkpoints.push_back(path);
  }
  return result;
}

}  // namespace agln
