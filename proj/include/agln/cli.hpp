#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "agln/detector.hpp"
#include "agln/models.hpp"
#include "agln/synthcorpus.hpp"
#include "agln/trainer.hpp"

namespace agln {

// Stable process exit codes.
enum ExitCode : int {
  kExitOk = 0,
  kExitInternal = 1,  // unexpected failure
  kExitConfig = 2,  // bad config file or command line
  kExitData = 3,
  kExitTrainingAborted = 4,
  kExitBusy = 5,  // another command holds the output lock
};

class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& key, const std::string& what) : std::runtime_error(key + ": " + what), key_(key) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

struct DataSection {
  std::size_t unit = 256;
  std::string damaged_dir;  // prepare inputs
  std::string healthy_dir;
  std::string corpus;    // synthetic corpus root (train split for train, test split for eval)
  std::string manifest;  // prepared tile manifest; used by train when set
  std::uint64_t seed = 0;

  bool operator==(const DataSection&) const = default;
};

struct ModelSection {
  std::size_t base_channels = 64;
  std::size_t residual_blocks = 6;
  std::size_t disc_base_channels = 64;
  std::size_t disc_layers = 3;
  double lambda = 10.0;

  bool operator==(const ModelSection&) const = default;
};

struct TrainSection {
  std::uint64_t iterations = 2000;
  double lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  std::uint64_t seed = 0;
  std::uint64_t checkpoint_every = 500;
  std::size_t pool_size = 50;
  std::size_t smooth_window = 300;
  std::size_t smooth_stride = 10;

  bool operator==(const TrainSection&) const = default;
};

struct DetectSection {
  DetectConfig detect;
  // Unset: scaled from 30 px at 256-px tiles to the tile size in use.
  std::optional<std::size_t> min_area;

  DetectConfig resolve(std::size_t tile_size) const;
  bool operator==(const DetectSection&) const = default;
};

struct RunConfig {
  DataSection data;
  ModelSection model;
  TrainSection train;
  DetectSection detect;
  CorpusConfig synth;

  GeneratorSpec generator_spec(std::size_t image_size) const;
  DiscriminatorSpec discriminator_spec() const;
  TrainHyper hyper() const;

  bool operator==(const RunConfig&) const = default;
};

// INI text with sections [data] [model] [train] [detect] [synth]. Missing keys take their
// defaults; unknown keys, malformed values and constraint violations throw ConfigError
// naming the key as section.key.
RunConfig parse_config_text(const std::string& text);
RunConfig parse_config(const std::filesystem::path& path);

void validate_config(const RunConfig& cfg);
// Sets one section.key from its textual form, with the same checks as the file parser.
void set_config_value(RunConfig& cfg, const std::string& key, const std::string& text);

// Every field as sorted section.key=value lines; equal configs give equal text.
std::string normalized_config(const RunConfig& cfg);
std::string config_digest(const RunConfig& cfg);

// Entry point of the command-line tool: synth | prepare | train | detect | eval.
int run_command(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

inline constexpr const char* kToolVersion = "0.1.0";

}  // namespace agln
