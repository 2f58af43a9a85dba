#include "subspace_probe/synth_oracle.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <random>

#include <nlohmann/json.hpp>

#include "subspace_probe/detail/binary_io.hpp"
#include "subspace_probe/error.hpp"

namespace subspace_probe {

namespace fs = std::filesystem;

std::string_view to_string(NoiseMode mode) {
  return mode == NoiseMode::orthogonal ? "orthogonal" : "isotropic";
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9E3779B97F4A7C15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

double SyntheticOracle::decode(const Eigen::Ref<const Eigen::VectorXd>& h) const {
  return (h.dot(planted_direction) - offset) / scale;
}

namespace {

Eigen::VectorXd gaussian(std::size_t d, double sigma, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd g(static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < g.size(); ++i) g(i) = sigma * normal(rng);
  return g;
}

void check_oracle(const SyntheticOracle& o) {
  if (o.d < 2) throw Error("synthetic oracle needs d >= 2");
  if (o.planted_direction.size() != static_cast<Eigen::Index>(o.d) ||
      o.comparison_direction.size() != static_cast<Eigen::Index>(o.d)) {
    throw Error("synthetic oracle directions must have length d");
  }
  if (std::abs(o.planted_direction.norm() - 1.0) > 1e-10) {
    throw Error("planted direction must have unit norm");
  }
  if (o.planted_begin >= o.planted_end || o.planted_end > o.n_layers) {
    throw Error("planted layers must be a non-empty range inside [0, n_layers)");
  }
  if (!(o.scale > 0.0)) throw Error("value map scale must be positive");
  if (!(o.noise_sigma >= 0.0) || !(o.null_sigma > 0.0)) {
    throw Error("noise levels must be non-negative (null_sigma positive)");
  }
}

}  // namespace

SyntheticOracle make_oracle(const OracleConfig& config,
                            const std::vector<double>& reference_values) {
  if (reference_values.size() < 2) throw Error("make_oracle needs at least 2 reference values");
  SyntheticOracle o;
  o.d = config.d;
  o.n_layers = config.n_layers;
  o.attribute_kind = config.attribute_kind;
  o.planted_begin = config.planted_begin;
  o.planted_end = config.planted_end;
  if (o.planted_begin == 0 && o.planted_end == 0) {
    o.planted_end = std::max<std::size_t>(1, config.n_layers / 2);
  }
  o.noise_sigma = config.noise_sigma;
  o.noise_mode = config.noise_mode;
  o.comparison_gain = config.comparison_gain;
  o.seed = config.seed;

  std::mt19937_64 rng(mix_seed(config.seed, 0xD1CE));
  Eigen::VectorXd u = gaussian(o.d, 1.0, rng);
  u.normalize();
  Eigen::VectorXd c = gaussian(o.d, 1.0, rng);
  c -= c.dot(u) * u;
  c.normalize();
  o.planted_direction = u;
  o.comparison_direction = c;

  double mean = 0.0;
  for (double v : reference_values) mean += v;
  mean /= static_cast<double>(reference_values.size());
  double var = 0.0;
  for (double v : reference_values) var += (v - mean) * (v - mean);
  var /= static_cast<double>(reference_values.size());
  if (!(var > 0.0)) throw Error("reference values have zero spread");
  const double sd = std::sqrt(var);
  o.scale = 1.0 / sd;
  o.offset = -mean / sd;
  // Matches E||h||^2 of planted layers: unit-variance code plus d-1 noise dims.
  const double dd = static_cast<double>(o.d);
  o.null_sigma = std::sqrt((1.0 + o.noise_sigma * o.noise_sigma * (dd - 1.0)) / dd);
  check_oracle(o);
  return o;
}

Eigen::VectorXd embed_entity(const SyntheticOracle& oracle, double value,
                             std::size_t layer, std::uint64_t salt) {
  if (layer >= oracle.n_layers) {
    throw Error("layer " + std::to_string(layer) + " outside the oracle's " +
                std::to_string(oracle.n_layers) + " layers");
  }
  std::uint64_t s = mix_seed(oracle.seed, std::bit_cast<std::uint64_t>(value));
  s = mix_seed(s, layer);
  s = mix_seed(s, salt);
  std::mt19937_64 rng(s);
  if (!oracle.is_planted(layer)) return gaussian(oracle.d, oracle.null_sigma, rng);

  const auto& u = oracle.planted_direction;
  Eigen::VectorXd noise = gaussian(oracle.d, oracle.noise_sigma, rng);
  if (oracle.noise_mode == NoiseMode::orthogonal) noise -= noise.dot(u) * u;
  return (oracle.scale * value + oracle.offset) * u + noise;
}

Answer answer_comparison(const SyntheticOracle& oracle,
                         const Eigen::Ref<const Eigen::VectorXd>& h_x,
                         const Eigen::Ref<const Eigen::VectorXd>& h_y,
                         AttributeKind kind) {
  if (h_x.size() != static_cast<Eigen::Index>(oracle.d) ||
      h_y.size() != static_cast<Eigen::Index>(oracle.d)) {
    throw Error("answer_comparison: vectors must have dimension " + std::to_string(oracle.d));
  }
  const double x = oracle.decode(h_x);
  const double y = oracle.decode(h_y);
  if (x == y) return Answer::No;
  return gold_comparison_label(kind, x, y);
}

SyntheticStore generate_synthetic_store(const SyntheticOracle& oracle,
                                        const std::vector<ComparisonSample>& samples,
                                        const fs::path& dir, bool overwrite) {
  check_oracle(oracle);
  if (samples.size() < 2) throw Error("synthetic store needs at least 2 samples");
  for (const auto& s : samples) {
    if (s.kind() != oracle.attribute_kind) {
      throw Error("sample " + s.sample_id + " has attribute kind " +
                  std::string(to_string(s.kind())) + ", oracle expects " +
                  std::string(to_string(oracle.attribute_kind)));
    }
  }

  const auto n = static_cast<Eigen::Index>(samples.size());
  const auto d = static_cast<Eigen::Index>(oracle.d);
  std::vector<std::string> ids;
  ids.reserve(samples.size());
  for (const auto& s : samples) ids.push_back(s.sample_id);

  StoreManifest manifest;
  manifest.model_id = "synthetic-oracle";
  manifest.d_model = oracle.d;
  manifest.n_layers = oracle.n_layers;
  manifest.sample_ids = ids;
  manifest.roles_present = {TokenRole::entity_x_last, TokenRole::entity_y_last,
                            TokenRole::sequence_last};
  manifest.attribute_kind = oracle.attribute_kind;
  manifest.creator = "subspace_probe synthetic oracle (seed " + std::to_string(oracle.seed) +
                     ", noise " + std::string(to_string(oracle.noise_mode)) + ")";

  std::map<std::string, Answer> answers;
  std::map<TensorKey, DataMatrix> tensors;
  for (std::size_t layer = 0; layer < oracle.n_layers; ++layer) {
    Eigen::MatrixXd hx(n, d), hy(n, d), seq(n, d);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& s = samples[static_cast<std::size_t>(i)];
      const auto salt = static_cast<std::uint64_t>(i);
      const Eigen::VectorXd x = embed_entity(oracle, s.entity_x.value, layer, mix_seed(salt, 1));
      const Eigen::VectorXd y = embed_entity(oracle, s.entity_y.value, layer, mix_seed(salt, 2));
      hx.row(i) = x;
      hy.row(i) = y;

      std::mt19937_64 rng(mix_seed(mix_seed(oracle.seed, layer), mix_seed(salt, 3)));
      Eigen::VectorXd blend = 0.5 * x + 0.5 * y;
      if (oracle.is_planted(layer)) {
        const Answer a = answer_comparison(oracle, x, y, oracle.attribute_kind);
        const double code = (a == Answer::Yes ? 0.5 : -0.5) * oracle.comparison_gain;
        Eigen::VectorXd noise = gaussian(oracle.d, oracle.noise_sigma, rng);
        if (oracle.noise_mode == NoiseMode::orthogonal) {
          noise -= noise.dot(oracle.planted_direction) * oracle.planted_direction;
        }
        blend += code * oracle.comparison_direction + noise;
        if (layer == oracle.readout_layer()) answers[s.sample_id] = a;
      } else {
        blend += gaussian(oracle.d, oracle.null_sigma, rng);
      }
      seq.row(i) = blend;
    }
    tensors.emplace(TensorKey{layer, TokenRole::entity_x_last}, DataMatrix(std::move(hx), ids));
    tensors.emplace(TensorKey{layer, TokenRole::entity_y_last}, DataMatrix(std::move(hy), ids));
    tensors.emplace(TensorKey{layer, TokenRole::sequence_last}, DataMatrix(std::move(seq), ids));
  }

  write_store(dir, manifest, tensors, overwrite);
  save_oracle(oracle, dir / "oracle.json");
  return SyntheticStore{read_store(dir), std::move(answers)};
}

void save_oracle(const SyntheticOracle& o, const fs::path& path) {
  nlohmann::ordered_json j;
  j["format"] = "synthetic-oracle-v1";
  j["d"] = o.d;
  j["n_layers"] = o.n_layers;
  j["attribute_kind"] = to_string(o.attribute_kind);
  j["planted_layers"] = {o.planted_begin, o.planted_end};
  j["scale"] = o.scale;
  j["offset"] = o.offset;
  j["noise_sigma"] = o.noise_sigma;
  j["null_sigma"] = o.null_sigma;
  j["comparison_gain"] = o.comparison_gain;
  j["noise_mode"] = to_string(o.noise_mode);
  j["seed"] = o.seed;
  j["planted_direction"] = std::vector<double>(o.planted_direction.begin(), o.planted_direction.end());
  j["comparison_direction"] =
      std::vector<double>(o.comparison_direction.begin(), o.comparison_direction.end());
  detail::write_text(path, j.dump(2) + "\n");
}

SyntheticOracle load_oracle(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open oracle file " + path.string());
  SyntheticOracle o;
  try {
    const auto j = nlohmann::json::parse(in);
    if (j.value("format", "") != "synthetic-oracle-v1") {
      throw Error("unsupported oracle format in " + path.string());
    }
    o.d = j.at("d").get<std::size_t>();
    o.n_layers = j.at("n_layers").get<std::size_t>();
    o.attribute_kind = parse_attribute_kind(j.at("attribute_kind").get<std::string>());
    const auto planted = j.at("planted_layers").get<std::vector<std::size_t>>();
    if (planted.size() != 2) throw Error("planted_layers must be [begin, end]");
    o.planted_begin = planted[0];
    o.planted_end = planted[1];
    o.scale = j.at("scale").get<double>();
    o.offset = j.at("offset").get<double>();
    o.noise_sigma = j.at("noise_sigma").get<double>();
    o.null_sigma = j.at("null_sigma").get<double>();
    o.comparison_gain = j.at("comparison_gain").get<double>();
    const auto mode = j.at("noise_mode").get<std::string>();
    o.noise_mode = mode == "isotropic" ? NoiseMode::isotropic : NoiseMode::orthogonal;
    o.seed = j.at("seed").get<std::uint64_t>();
    const auto u = j.at("planted_direction").get<std::vector<double>>();
    const auto c = j.at("comparison_direction").get<std::vector<double>>();
    o.planted_direction = Eigen::Map<const Eigen::VectorXd>(u.data(), static_cast<Eigen::Index>(u.size()));
    o.comparison_direction = Eigen::Map<const Eigen::VectorXd>(c.data(), static_cast<Eigen::Index>(c.size()));
  } catch (const nlohmann::json::exception& e) {
    throw Error("corrupt oracle file " + path.string() + ": " + e.what());
  }
  check_oracle(o);
  return o;
}

std::vector<EntityRecord> synthetic_entities(AttributeKind kind, std::size_t n,
                                             std::uint64_t seed) {
  std::mt19937_64 rng(mix_seed(seed, 0xE471));
  std::normal_distribution<double> years(1900.0, 60.0);
  std::normal_distribution<double> latitude(30.0, 25.0);
  std::vector<EntityRecord> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    char id[32];
    std::snprintf(id, sizeof(id), "E%05zu", i);
    EntityRecord e;
    e.id = id;
    e.name = "Entity " + std::to_string(i);
    e.attribute_kind = kind;
    if (kind == AttributeKind::latitude) {
      e.value = std::round(std::clamp(latitude(rng), -89.0, 89.0) * 100.0) / 100.0;
    } else {
      e.value = std::round(years(rng));
    }
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace subspace_probe
