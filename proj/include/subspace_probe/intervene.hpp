#pragma once

// Activation edits along a probe direction and the flip-rate metric.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "subspace_probe/activation_store.hpp"
#include "subspace_probe/dataset.hpp"
#include "subspace_probe/pls.hpp"
#include "subspace_probe/synth_oracle.hpp"

namespace subspace_probe {

/// How the sign of alpha is picked per sample.
///   against_clean: push entity_y's value so the clean answer would flip
///   fixed:         always +alpha
enum class SignPolicy { against_clean, fixed };

std::string_view to_string(SignPolicy policy);
SignPolicy parse_sign_policy(std::string_view text);

/// A single-position edit h <- h + alpha * v at (layer, role).
/// The constructor rejects non-unit directions (tolerance 1e-10) and layers
/// outside [0, n_layers).
class InterventionSpec {
 public:
  InterventionSpec(std::size_t layer, std::size_t n_layers, TokenRole role,
                   Eigen::VectorXd direction, double alpha, std::string description = {});

  std::size_t layer() const noexcept { return layer_; }
  std::size_t n_layers() const noexcept { return n_layers_; }
  TokenRole role() const noexcept { return role_; }
  const Eigen::VectorXd& direction() const noexcept { return direction_; }
  double alpha() const noexcept { return alpha_; }
  const std::string& description() const noexcept { return description_; }

  std::optional<AttributeKind> attribute_kind;
  SignPolicy sign_policy = SignPolicy::fixed;

 private:
  std::size_t layer_;
  std::size_t n_layers_;
  TokenRole role_;
  Eigen::VectorXd direction_;
  double alpha_;
  std::string description_;
};

struct AlphaPolicy {
  enum class Kind { fixed, score_sigma };
  Kind kind = Kind::score_sigma;
  double value = 2.0;

  static AlphaPolicy fixed(double c) { return {Kind::fixed, c}; }
  static AlphaPolicy score_sigma(double m) { return {Kind::score_sigma, m}; }
};

/// "fixed:3", "score_sigma:2" (also "sigma:2").
AlphaPolicy parse_alpha_policy(std::string_view text);
std::string to_string(const AlphaPolicy& policy);

/// The model's oriented first direction.
Eigen::VectorXd intervention_vector(const PlsModel& model);

/// fixed(c) -> c. score_sigma(m) -> m * std(t1), with t1 = (X - x_mean) w1
/// over the rows of x_train and std the population standard deviation.
double choose_alpha(const PlsModel& model, const Eigen::Ref<const Eigen::MatrixXd>& x_train,
                    const AlphaPolicy& policy);

Eigen::VectorXd apply_intervention(const Eigen::Ref<const Eigen::VectorXd>& h,
                                   const InterventionSpec& spec);
/// Same edit with an explicit signed step, for per-sample sign policies.
Eigen::VectorXd apply_intervention(const Eigen::Ref<const Eigen::VectorXd>& h,
                                   const Eigen::Ref<const Eigen::VectorXd>& direction,
                                   double alpha);

/// Normalized standard-normal draw; deterministic per seed.
Eigen::VectorXd random_direction(std::size_t d, std::uint64_t seed);

/// Fraction of sample ids whose answers differ. Throws on empty input or
/// mismatched key sets.
double effect_of_intervention(const std::map<std::string, Answer>& clean,
                              const std::map<std::string, Answer>& patched);

/// +1 or -1: the direction in which entity_y's value must move to flip
/// `clean` for this attribute.
double flip_sign(AttributeKind kind, Answer clean);

struct EiEntry {
  std::size_t layer = 0;
  double ei_method = 0.0;
  double ei_random = 0.0;
  double alpha = 0.0;
  std::size_t n = 0;
};

struct EiCurve {
  std::vector<EiEntry> entries;  // ascending layer
};

/// `layer,ei_method,ei_random,alpha,n`
std::string ei_csv(const std::vector<EiEntry>& entries);

struct EiSweepOptions {
  AlphaPolicy alpha = AlphaPolicy::score_sigma(2.0);
  /// Rows used by score_sigma. Empty means every store sample.
  std::vector<std::string> alpha_ids;
  /// Samples whose answers are counted. Empty means every store sample.
  std::vector<std::string> eval_ids;
  SignPolicy sign_policy = SignPolicy::against_clean;
  std::uint64_t seed = 0;
  unsigned threads = 0;
};

/// For each layer with a model: edits entity_y_last along the model's first
/// direction and along random_direction(d, mix_seed(seed, layer)) with the
/// same alpha, re-queries the oracle, and reports both flip rates.
///
/// Answers are read from the oracle's readout layer. An edit in a planted
/// layer carries forward along the planted coordinate, so it is applied to
/// the readout-layer state; an edit outside the planted range is overwritten
/// and leaves every answer unchanged.
EiCurve run_synthetic_ei_sweep(const SyntheticOracle& oracle, const ActivationStore& store,
                               const std::map<std::size_t, PlsModel>& models,
                               const EiSweepOptions& options = {});

/// JSON with layer, role, alpha and the direction as base64 little-endian
/// float32. See docs/formats.md.
void emit_intervention_spec(const InterventionSpec& spec, const std::filesystem::path& path);
/// Reads a spec back. The float32 direction is renormalized after decoding.
InterventionSpec load_intervention_spec(const std::filesystem::path& path);

namespace detail {
std::string base64_encode(std::span<const char> bytes);
std::vector<char> base64_decode(std::string_view text);
}  // namespace detail

}  // namespace subspace_probe
