#pragma once

// Synthetic stand-in for a language model: activations carry a planted linear
// attribute code, and comparison answers are an analytic function of them.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "subspace_probe/activation_store.hpp"
#include "subspace_probe/dataset.hpp"

namespace subspace_probe {

enum class NoiseMode { orthogonal, isotropic };

std::string_view to_string(NoiseMode mode);

struct SyntheticOracle {
  std::size_t d = 64;
  std::size_t n_layers = 8;
  AttributeKind attribute_kind = AttributeKind::birth_year;
  Eigen::VectorXd planted_direction;     // u, unit norm
  Eigen::VectorXd comparison_direction;  // unit norm, orthogonal to u
  std::size_t planted_begin = 0;         // planted layers are [begin, end)
  std::size_t planted_end = 4;
  double scale = 1.0;                    // coordinate = scale * value + offset
  double offset = 0.0;
  double noise_sigma = 0.1;
  double null_sigma = 1.0;               // per-coordinate std outside planted layers
  double comparison_gain = 1.0;          // answer code magnitude in sequence_last
  NoiseMode noise_mode = NoiseMode::orthogonal;
  std::uint64_t seed = 0;

  bool is_planted(std::size_t layer) const noexcept {
    return layer >= planted_begin && layer < planted_end;
  }
  /// Layer whose entity states produce the oracle's own answers.
  std::size_t readout_layer() const noexcept { return planted_end - 1; }

  /// (<h, u> - offset) / scale
  double decode(const Eigen::Ref<const Eigen::VectorXd>& h) const;
};

struct OracleConfig {
  std::size_t d = 64;
  std::size_t n_layers = 8;
  AttributeKind attribute_kind = AttributeKind::birth_year;
  /// Planted range; an empty range means the first half of the layers.
  std::size_t planted_begin = 0;
  std::size_t planted_end = 0;
  double noise_sigma = 0.1;
  NoiseMode noise_mode = NoiseMode::orthogonal;
  double comparison_gain = 1.0;
  std::uint64_t seed = 0;
};

/// Builds an oracle whose value map standardizes `reference_values` onto the
/// planted coordinate (scale = 1/std, offset = -mean/std).
SyntheticOracle make_oracle(const OracleConfig& config,
                            const std::vector<double>& reference_values);

/// Deterministic in (oracle.seed, value, layer, salt).
Eigen::VectorXd embed_entity(const SyntheticOracle& oracle, double value,
                             std::size_t layer, std::uint64_t salt = 0);

/// Decodes both values and applies the gold-label semantics; ties answer No.
Answer answer_comparison(const SyntheticOracle& oracle,
                         const Eigen::Ref<const Eigen::VectorXd>& h_x,
                         const Eigen::Ref<const Eigen::VectorXd>& h_y,
                         AttributeKind kind);

struct SyntheticStore {
  ActivationStore store;
  std::map<std::string, Answer> answers;  // clean answers at the readout layer
};

/// Writes entity_x_last, entity_y_last and sequence_last for every layer.
/// sequence_last = 0.5 h_x + 0.5 h_y + gain * (answer - 0.5) * c + noise in
/// planted layers, where c is the comparison direction.
SyntheticStore generate_synthetic_store(const SyntheticOracle& oracle,
                                        const std::vector<ComparisonSample>& samples,
                                        const std::filesystem::path& dir,
                                        bool overwrite = false);

void save_oracle(const SyntheticOracle& oracle, const std::filesystem::path& path);
SyntheticOracle load_oracle(const std::filesystem::path& path);

/// Entities with values drawn from a Gaussian (years ~ N(1900, 60) rounded to
/// whole years; latitudes ~ N(30, 25) clipped to [-89, 89]).
std::vector<EntityRecord> synthetic_entities(AttributeKind kind, std::size_t n,
                                             std::uint64_t seed);

/// splitmix64 finalizer, used to derive independent seeds.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

}  // namespace subspace_probe
