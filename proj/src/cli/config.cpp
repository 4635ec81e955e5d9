#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "agln/cli.hpp"
#include "agln/digest.hpp"

namespace agln {

namespace {

std::uint64_t parse_uint(const std::string& key, const std::string& text) {
  std::uint64_t v = 0;
  const char* end = text.data() + text.size();
  const auto [p, ec] = std::from_chars(text.data(), end, v);
  if (text.empty() || ec != std::errc() || p != end) {
    throw ConfigError(key, "expected a non-negative integer, got '" + text + "'");
  }
  return v;
}

double parse_real(const std::string& key, const std::string& text) {
  double v = 0.0;
  const char* end = text.data() + text.size();
  const auto [p, ec] = std::from_chars(text.data(), end, v);
  if (text.empty() || ec != std::errc() || p != end || !std::isfinite(v)) {
    throw ConfigError(key, "expected a finite number, got '" + text + "'");
  }
  return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "yes" || text == "on" || text == "1") return true;
  if (text == "false" || text == "no" || text == "off" || text == "0") return false;
  throw ConfigError(key, "expected true or false, got '" + text + "'");
}

std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct Field {
  std::function<void(const std::string& key, const std::string& text)> set;
  std::function<std::string()> get;
};

template <typename T>
Field uint_field(T& ref) {
  return {[&ref](const std::string& k, const std::string& t) { ref = static_cast<T>(parse_uint(k, t)); },
          [&ref] { return std::to_string(ref); }};
}

Field real_field(double& ref) {
  return {[&ref](const std::string& k, const std::string& t) { ref = parse_real(k, t); },
          [&ref] { return format_real(ref); }};
}

Field bool_field(bool& ref) {
  return {[&ref](const std::string& k, const std::string& t) { ref = parse_bool(k, t); },
          [&ref] { return std::string(ref ? "true" : "false"); }};
}

Field string_field(std::string& ref) {
  return {[&ref](const std::string&, const std::string& t) { ref = t; }, [&ref] { return ref; }};
}

// section.key -> field accessor, bound to one RunConfig.
std::map<std::string, Field> fields_of(RunConfig& c) {
  std::map<std::string, Field> f;
  f["data.unit"] = uint_field(c.data.unit);
  f["data.damaged_dir"] = string_field(c.data.damaged_dir);
  f["data.healthy_dir"] = string_field(c.data.healthy_dir);
  f["data.corpus"] = string_field(c.data.corpus);
  f["data.manifest"] = string_field(c.data.manifest);
  f["data.seed"] = uint_field(c.data.seed);

  f["model.base_channels"] = uint_field(c.model.base_channels);
  f["model.residual_blocks"] = uint_field(c.model.residual_blocks);
  f["model.disc_base_channels"] = uint_field(c.model.disc_base_channels);
  f["model.disc_layers"] = uint_field(c.model.disc_layers);
  f["model.lambda"] = real_field(c.model.lambda);

  f["train.iterations"] = uint_field(c.train.iterations);
  f["train.lr"] = real_field(c.train.lr);
  f["train.beta1"] = real_field(c.train.beta1);
  f["train.beta2"] = real_field(c.train.beta2);
  f["train.seed"] = uint_field(c.train.seed);
  f["train.checkpoint_every"] = uint_field(c.train.checkpoint_every);
  f["train.pool_size"] = uint_field(c.train.pool_size);
  f["train.smooth_window"] = uint_field(c.train.smooth_window);
  f["train.smooth_stride"] = uint_field(c.train.smooth_stride);

  auto& d = c.detect;
  f["detect.eps_mode"] = {[&d](const std::string& k, const std::string& t) {
                            try {
                              d.detect.eps_mode = parse_eps_mode(t);
                            } catch (const std::invalid_argument&) {
                              throw ConfigError(k, "expected absolute or peak_fraction, got '" + t + "'");
                            }
                          },
                          [&d] { return eps_mode_name(d.detect.eps_mode); }};
  f["detect.eps"] = real_field(d.detect.eps_value);
  f["detect.min_area"] = {[&d](const std::string& k, const std::string& t) {
                            if (t == "auto") d.min_area.reset();
                            else d.min_area = static_cast<std::size_t>(parse_uint(k, t));
                          },
                          [&d] { return d.min_area ? std::to_string(*d.min_area) : std::string("auto"); }};
  f["detect.octagon_radius"] = uint_field(d.detect.octagon_radius);
  f["detect.clear_border"] = bool_field(d.detect.apply_clear_border);

  auto& s = c.synth;
  f["synth.tile_size"] = uint_field(s.tile_size);
  f["synth.train_damaged"] = uint_field(s.train_d);
  f["synth.train_healthy"] = uint_field(s.train_h);
  f["synth.test_damaged"] = uint_field(s.test_d);
  f["synth.test_healthy"] = uint_field(s.test_h);
  f["synth.popout_min"] = uint_field(s.popout.min);
  f["synth.popout_max"] = uint_field(s.popout.max);
  f["synth.exfoliation_min"] = uint_field(s.exfoliation.min);
  f["synth.exfoliation_max"] = uint_field(s.exfoliation.max);
  f["synth.sand_leak_min"] = uint_field(s.sand_leak.min);
  f["synth.sand_leak_max"] = uint_field(s.sand_leak.max);
  f["synth.margin"] = uint_field(s.margin);
  f["synth.seed"] = uint_field(s.master_seed);
  f["synth.base_gray"] = real_field(s.texture.base_gray);
  f["synth.noise_amplitude"] = real_field(s.texture.noise_amplitude);
  f["synth.noise_scale"] = real_field(s.texture.noise_scale);
  f["synth.speckle_density"] = real_field(s.texture.speckle_density);
  f["synth.pore_density"] = real_field(s.texture.pore_density);
  f["synth.pore_depth"] = real_field(s.texture.pore_depth);
  return f;
}

void require(bool ok, const std::string& key, const std::string& what) {
  if (!ok) throw ConfigError(key, what);
}

}  // namespace

void validate_config(const RunConfig& c) {
  require(c.data.unit >= 1, "data.unit", "must be >= 1");

  require(c.model.base_channels >= 1, "model.base_channels", "must be >= 1");
  require(c.model.residual_blocks >= 1, "model.residual_blocks", "must be >= 1");
  require(c.model.disc_base_channels >= 1, "model.disc_base_channels", "must be >= 1");
  require(c.model.disc_layers >= 1, "model.disc_layers", "must be >= 1");
  require(c.model.lambda >= 0.0, "model.lambda", "must be >= 0");

  require(c.train.lr > 0.0, "train.lr", "must be > 0");
  require(c.train.beta1 >= 0.0 && c.train.beta1 < 1.0, "train.beta1", "must lie in [0,1)");
  require(c.train.beta2 >= 0.0 && c.train.beta2 < 1.0, "train.beta2", "must lie in [0,1)");
  require(c.train.smooth_window >= 1, "train.smooth_window", "must be >= 1");
  require(c.train.smooth_stride >= 1, "train.smooth_stride", "must be >= 1");

  require(c.detect.detect.eps_value > 0.0, "detect.eps", "must be > 0");

  const auto& s = c.synth;
  require(s.tile_size >= 16 && s.tile_size % 4 == 0, "synth.tile_size", "must be a multiple of 4 and >= 16");
  require(s.train_d >= 1, "synth.train_damaged", "must be >= 1");
  require(s.train_h >= 1, "synth.train_healthy", "must be >= 1");
  require(s.test_d >= 1, "synth.test_damaged", "must be >= 1");
  require(s.test_h >= 1, "synth.test_healthy", "must be >= 1");
  require(2 * s.margin < s.tile_size, "synth.margin", "must be less than half of synth.tile_size");
  const std::size_t area = s.tile_size * s.tile_size;
  for (const auto& [name, b] :
       {std::pair{"popout", s.popout}, {"exfoliation", s.exfoliation}, {"sand_leak", s.sand_leak}}) {
    const std::string prefix = std::string("synth.") + name;
    require(b.min >= 1, prefix + "_min", "must be >= 1");
    require(b.max >= b.min, prefix + "_max", "must be >= " + prefix + "_min");
    require(b.max < area, prefix + "_max", "must be below the tile area " + std::to_string(area));
  }
  try {
    s.validate();
  } catch (const std::invalid_argument& e) {
    // Library messages lead with the offending key.
    const std::string msg = e.what();
    const auto space = msg.find(' ');
    throw ConfigError(msg.substr(0, space), space == std::string::npos ? msg : msg.substr(space + 1));
  }
}

void set_config_value(RunConfig& cfg, const std::string& key, const std::string& text) {
  auto fields = fields_of(cfg);
  const auto it = fields.find(key);
  if (it == fields.end()) throw ConfigError(key, "unknown key");
  it->second.set(key, text);
}

DetectConfig DetectSection::resolve(std::size_t tile_size) const {
  DetectConfig cfg = detect;
  cfg.min_area = min_area ? *min_area : scaled_min_area(tile_size);
  return cfg;
}

GeneratorSpec RunConfig::generator_spec(std::size_t image_size) const {
  return GeneratorSpec{3, model.base_channels, model.residual_blocks, image_size};
}

DiscriminatorSpec RunConfig::discriminator_spec() const {
  return DiscriminatorSpec{3, model.disc_base_channels, model.disc_layers};
}

TrainHyper RunConfig::hyper() const {
  TrainHyper h;
  h.lambda = model.lambda;
  h.adam.lr = train.lr;
  h.adam.beta1 = train.beta1;
  h.adam.beta2 = train.beta2;
  h.pool_capacity = train.pool_size;
  return h;
}

RunConfig parse_config_text(const std::string& text) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError("line " + std::to_string(e.line()), e.message());
  }

  RunConfig cfg;
  auto fields = fields_of(cfg);
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) throw ConfigError(section, "key outside any section");
    for (const auto& [key, value] : body) {
      const std::string full = section + "." + key;
      const auto it = fields.find(full);
      if (it == fields.end()) throw ConfigError(full, "unknown key");
      it->second.set(full, value.get_value<std::string>());
    }
  }
  validate_config(cfg);
  return cfg;
}

RunConfig parse_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(path.string(), "cannot read config file");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str());
}

std::string normalized_config(const RunConfig& cfg) {
  RunConfig copy = cfg;
  std::string out;
  for (const auto& [key, field] : fields_of(copy)) out += key + "=" + field.get() + "\n";
  return out;
}

std::string config_digest(const RunConfig& cfg) { return sha256_hex(normalized_config(cfg)); }

}  // namespace agln
