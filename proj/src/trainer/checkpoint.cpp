#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "agln/digest.hpp"
#include "agln/trainer.hpp"
#include "json.hpp"

namespace agln {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint payloads are written in host order");

constexpr char kMagic[4] = {'A', 'G', 'L', 'N'};

using nlohmann::json;

json gen_spec_json(const GeneratorSpec& s) {
  return {{"in_channels", s.in_channels},
          {"base_channels", s.base_channels},
          {"n_residual_blocks", s.n_residual_blocks},
          {"image_size", s.image_size}};
}

GeneratorSpec gen_spec_from(const json& j) {
  return {j.at("in_channels").get<std::size_t>(), j.at("base_channels").get<std::size_t>(),
          j.at("n_residual_blocks").get<std::size_t>(), j.at("image_size").get<std::size_t>()};
}

json disc_spec_json(const DiscriminatorSpec& s) {
  return {{"in_channels", s.in_channels}, {"base_channels", s.base_channels}, {"n_layers", s.n_layers}};
}

DiscriminatorSpec disc_spec_from(const json& j) {
  return {j.at("in_channels").get<std::size_t>(), j.at("base_channels").get<std::size_t>(),
          j.at("n_layers").get<std::size_t>()};
}

// Flattened (name, tensor) view of a state, in a fixed order.
template <typename State, typename Fn>
void for_each_tensor(State& s, Fn&& fn) {
  auto model = [&](const std::string& prefix, auto& params) {
    for (auto& [name, t] : params) fn(prefix + "/" + name, t);
  };
  model("gen_r", s.gen_r.params);
  model("gen_a", s.gen_a.params);
  model("critic_d", s.critic_d.params);
  model("critic_h", s.critic_h.params);
  model("opt_r.m", s.opt_r.m);
  model("opt_r.v", s.opt_r.v);
  model("opt_a.m", s.opt_a.m);
  model("opt_a.v", s.opt_a.v);
  model("opt_d.m", s.opt_d.m);
  model("opt_d.v", s.opt_d.v);
  model("opt_h.m", s.opt_h.m);
  model("opt_h.v", s.opt_h.v);
}

json pool_json(const ImagePool& pool) {
  json digests = json::array();
  for (const auto& t : pool.stored()) digests.push_back(sha256_of_values(t.values()));
  return {{"capacity", pool.capacity()}, {"count", pool.size()}, {"digests", digests}};
}

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T take(const std::string& in, std::size_t at) {
  T v;
  std::memcpy(&v, in.data() + at, sizeof(T));
  return v;
}

}  // namespace

void save_checkpoint(const TrainState& s, const std::filesystem::path& path) {
  std::string payload;
  json tensors = json::array();
  auto append = [&](const std::string& name, const Tensor<float>& t) {
    const std::size_t bytes = t.size() * sizeof(float);
    tensors.push_back({{"name", name}, {"shape", t.shape()}, {"dtype", "f32"}, {"offset", payload.size()},
                       {"bytes", bytes}});
    payload.append(reinterpret_cast<const char*>(t.data()), bytes);
  };
  for_each_tensor(s, append);
  for (std::size_t i = 0; i < s.pool_d.size(); ++i) append("pool_d/" + std::to_string(i), s.pool_d.stored()[i]);
  for (std::size_t i = 0; i < s.pool_h.size(); ++i) append("pool_h/" + std::to_string(i), s.pool_h.stored()[i]);

  std::ostringstream rng_state;
  rng_state << s.rng;
  const json header{
      {"iteration", s.iteration},
      {"seed", s.seed},
      {"rng", rng_state.str()},
      {"hyper",
       {{"lambda", s.hyper.lambda},
        {"lr", s.hyper.adam.lr},
        {"beta1", s.hyper.adam.beta1},
        {"beta2", s.hyper.adam.beta2},
        {"eps", s.hyper.adam.eps},
        {"pool_capacity", s.hyper.pool_capacity}}},
      {"specs",
       {{"gen_r", gen_spec_json(s.gen_r.spec)},
        {"gen_a", gen_spec_json(s.gen_a.spec)},
        {"critic_d", disc_spec_json(s.critic_d.spec)},
        {"critic_h", disc_spec_json(s.critic_h.spec)}}},
      {"adam_steps", {{"r", s.opt_r.step}, {"a", s.opt_a.step}, {"d", s.opt_d.step}, {"h", s.opt_h.step}}},
      {"pools", {{"d", pool_json(s.pool_d)}, {"h", pool_json(s.pool_h)}}},
      {"tensors", tensors},
  };
  const std::string header_text = header.dump();

  std::string blob(kMagic, sizeof kMagic);
  put<std::uint32_t>(blob, kCheckpointVersion);
  put<std::uint64_t>(blob, header_text.size());
  blob += header_text;
  blob += payload;

  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write " + tmp.string());
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!out) throw CheckpointError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

TrainState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path.string());
  const std::string blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  constexpr std::size_t kPrefix = sizeof kMagic + sizeof(std::uint32_t) + sizeof(std::uint64_t);
  if (blob.size() < kPrefix) throw CheckpointError("truncated checkpoint " + path.string());
  if (std::memcmp(blob.data(), kMagic, sizeof kMagic) != 0) throw CheckpointError("bad magic in " + path.string());
  const auto version = take<std::uint32_t>(blob, 4);
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint version " + std::to_string(version) + " unsupported (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  }
  const auto header_len = take<std::uint64_t>(blob, 8);
  if (blob.size() - kPrefix < header_len) throw CheckpointError("truncated checkpoint header in " + path.string());
  const std::size_t payload_at = kPrefix + header_len;
  const std::size_t payload_size = blob.size() - payload_at;

  try {
    const json header = json::parse(blob.substr(kPrefix, header_len));
    TrainHyper hyper;
    const json& hj = header.at("hyper");
    hyper.lambda = hj.at("lambda").get<double>();
    hyper.adam = {hj.at("lr").get<double>(), hj.at("beta1").get<double>(), hj.at("beta2").get<double>(),
                  hj.at("eps").get<double>()};
    hyper.pool_capacity = hj.at("pool_capacity").get<std::size_t>();

    const json& specs = header.at("specs");
    TrainState s = init_train_state(gen_spec_from(specs.at("gen_r")), disc_spec_from(specs.at("critic_d")), hyper,
                                    header.at("seed").get<std::uint64_t>());
    s.gen_a = build_generator(gen_spec_from(specs.at("gen_a")), 0);
    s.critic_h = build_discriminator(disc_spec_from(specs.at("critic_h")), 0);
    s.opt_a = AdamMoments::zeros_like(s.gen_a.params);
    s.opt_h = AdamMoments::zeros_like(s.critic_h.params);

    std::map<std::string, json> entries;
    for (const auto& e : header.at("tensors")) entries.emplace(e.at("name").get<std::string>(), e);

    auto fill = [&](const std::string& name, Tensor<float>& t) {
      const auto it = entries.find(name);
      if (it == entries.end()) throw CheckpointError("checkpoint lacks tensor " + name);
      const json& e = it->second;
      if (e.at("dtype").get<std::string>() != "f32") throw CheckpointError(name + ": unsupported dtype");
      const auto shape = e.at("shape").get<Shape>();
      if (shape != t.shape()) {
        throw CheckpointError(name + ": header shape " + shape_str(shape) + " disagrees with model " +
                              shape_str(t.shape()));
      }
      const auto offset = e.at("offset").get<std::size_t>();
      const auto bytes = e.at("bytes").get<std::size_t>();
      if (bytes != t.size() * sizeof(float)) throw CheckpointError(name + ": byte count disagrees with shape");
      if (offset > payload_size || bytes > payload_size - offset) throw CheckpointError(name + ": truncated payload");
      std::memcpy(t.data(), blob.data() + payload_at + offset, bytes);
      entries.erase(it);
    };
    for_each_tensor(s, fill);

    auto load_pool = [&](const std::string& key, ImagePool& pool) {
      const json& pj = header.at("pools").at(key);
      const auto count = pj.at("count").get<std::size_t>();
      const auto& digests = pj.at("digests");
      if (pj.at("capacity").get<std::size_t>() != pool.capacity() || digests.size() != count) {
        throw CheckpointError("pool " + key + " header is inconsistent");
      }
      std::vector<Tensor<float>> images;
      for (std::size_t i = 0; i < count; ++i) {
        const std::string name = "pool_" + key + "/" + std::to_string(i);
        const auto it = entries.find(name);
        if (it == entries.end()) throw CheckpointError("checkpoint lacks tensor " + name);
        Tensor<float> t(it->second.at("shape").get<Shape>());
        fill(name, t);
        if (sha256_of_values(t.values()) != digests[i].get<std::string>()) {
          throw CheckpointError(name + ": digest mismatch");
        }
        images.push_back(std::move(t));
      }
      pool.restore(std::move(images));
    };
    load_pool("d", s.pool_d);
    load_pool("h", s.pool_h);
    if (!entries.empty()) throw CheckpointError("checkpoint has unexpected tensor " + entries.begin()->first);

    const json& steps = header.at("adam_steps");
    s.opt_r.step = steps.at("r").get<std::uint64_t>();
    s.opt_a.step = steps.at("a").get<std::uint64_t>();
    s.opt_d.step = steps.at("d").get<std::uint64_t>();
    s.opt_h.step = steps.at("h").get<std::uint64_t>();
    s.iteration = header.at("iteration").get<std::uint64_t>();
    std::istringstream rng_state(header.at("rng").get<std::string>());
    rng_state >> s.rng;
    if (!rng_state) throw CheckpointError("corrupt RNG state");
    return s;
  } catch (const json::exception& e) {
    throw CheckpointError("malformed checkpoint header in " + path.string() + ": " + e.what());
  } catch (const SpecError& e) {
    throw CheckpointError("invalid model spec in " + path.string() + ": " + e.what());
  }
}

}  // namespace agln
