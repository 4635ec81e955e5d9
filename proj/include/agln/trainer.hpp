#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "agln/dataprep.hpp"
#include "agln/models.hpp"

namespace agln {

struct AdamConfig {
  double lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;

  bool operator==(const AdamConfig&) const = default;
};

// First and second moments for every tensor of one network, plus the bias-correction step.
struct AdamMoments {
  ModelParams m;
  ModelParams v;
  std::uint64_t step = 0;

  static AdamMoments zeros_like(const ModelParams& params);
  bool operator==(const AdamMoments&) const = default;
};

// One bias-corrected Adam update. `grads` must hold an entry per parameter name.
void adam_step(ModelParams& params, AdamMoments& moments, const std::map<std::string, Tensor<float>>& grads,
               const AdamConfig& cfg);

// Buffer of past generator outputs shown to the critics.
class ImagePool {
 public:
  explicit ImagePool(std::size_t capacity = 50) : capacity_(capacity) {}

  // Below capacity: stores and returns `fake`. At capacity: with probability 0.5 returns
  // `fake`, otherwise swaps it for a uniformly chosen stored image and returns that one.
  Tensor<float> query(const Tensor<float>& fake, std::mt19937_64& rng);

  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return stored_.size(); }
  const std::vector<Tensor<float>>& stored() const { return stored_; }
  void restore(std::vector<Tensor<float>> images);

  bool operator==(const ImagePool&) const = default;

 private:
  std::size_t capacity_;
  std::vector<Tensor<float>> stored_;
};

struct TrainHyper {
  double lambda = 10.0;
  AdamConfig adam;
  std::size_t pool_capacity = 50;

  bool operator==(const TrainHyper&) const = default;
};

// Everything that evolves during training. R maps damaged -> healthy ("reverse aging"),
// A maps healthy -> damaged; critic_d / critic_h judge the damaged / healthy domains.
struct TrainState {
  TrainHyper hyper;
  std::uint64_t seed = 0;
  Generator gen_r;
  Generator gen_a;
  Discriminator critic_d;
  Discriminator critic_h;
  AdamMoments opt_r, opt_a, opt_d, opt_h;
  std::uint64_t iteration = 0;
  std::mt19937_64 rng;
  ImagePool pool_d;
  ImagePool pool_h;

  bool operator==(const TrainState&) const = default;
};

TrainState init_train_state(const GeneratorSpec& gen, const DiscriminatorSpec& disc, const TrainHyper& hyper,
                            std::uint64_t seed);

struct LossRecord {
  std::uint64_t iter = 0;
  double loss_g = 0.0;    // full generator objective
  double loss_cyc = 0.0;  // unweighted cycle term
  double loss_d_h = 0.0;  // healthy-domain critic
  double loss_d_d = 0.0;  // damaged-domain critic

  bool operator==(const LossRecord&) const = default;
};

class TrainingAborted : public std::runtime_error {
 public:
  TrainingAborted(const std::string& what, LossRecord partial) : std::runtime_error(what), record(partial) {}
  LossRecord record;
};

// One alternating update on a damaged tile d and a healthy tile h, both (1,3,S,S) in [-1,1].
// Losses are measured before any parameter changes.
LossRecord train_step(TrainState& state, const Tensor<float>& d, const Tensor<float>& h);

enum class LossField { loss_g, loss_cyc, loss_d_h, loss_d_d };

class LossLog {
 public:
  void append(const LossRecord& r);
  const std::vector<LossRecord>& records() const { return records_; }
  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }

  // iter,loss_g,loss_cyc,loss_d_h,loss_d_d
  void write_csv(const std::filesystem::path& path) const;
  static LossLog read_csv(const std::filesystem::path& path);

 private:
  std::vector<LossRecord> records_;
};

double field_value(const LossRecord& r, LossField f);
std::string field_name(LossField f);

struct SmoothedPoint {
  std::uint64_t iter = 0;
  double value = 0.0;
};

// Trailing mean over the last min(window, k) records, emitted at every stride-th record.
std::vector<SmoothedPoint> smooth_log(const LossLog& log, LossField field, std::size_t window = 300,
                                      std::size_t stride = 10);
void write_smoothed_csv(const std::filesystem::path& path, const std::vector<SmoothedPoint>& series);

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

// "AGLN" | u32 version | u64 header length | JSON header | little-endian payloads.
void save_checkpoint(const TrainState& state, const std::filesystem::path& path);
TrainState load_checkpoint(const std::filesystem::path& path);

struct TrainOptions {
  std::uint64_t iterations = 2000;  // target value of state.iteration
  std::uint64_t checkpoint_every = 0;
  std::filesystem::path checkpoint_dir;  // empty: no checkpoints
};

struct TrainResult {
  TrainState state;
  LossLog log;
  std::vector<std::filesystem::path> checkpoints;
};

using StepCallback = std::function<void(const LossRecord&)>;

// Runs train_step until state.iteration reaches options.iterations, drawing one tile per
// domain per step uniformly with replacement from the state's RNG.
TrainResult train(TrainState state, const UnpairedDataset& data, const TrainOptions& options,
                  const StepCallback& on_step = {});

std::string checkpoint_file_name(std::uint64_t iteration);

}  // namespace agln
