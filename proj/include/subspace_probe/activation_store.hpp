#pragma once

// On-disk store of hidden-state matrices keyed by (layer, token role).
//
// Layout of a store directory:
//   manifest.json
//   layer{L}.{role}.f32    N x d_model little-endian float32, row-major
//
// Rows follow manifest.sample_ids. The byte-level contract is documented in
// docs/formats.md and shared with the model adapter.

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "subspace_probe/dataset.hpp"

namespace subspace_probe {

enum class TokenRole { entity_x_last, entity_y_last, sequence_last };

std::string_view to_string(TokenRole role);
TokenRole parse_token_role(std::string_view text);

/// N x d matrix of finite reals with one opaque id per row.
class DataMatrix {
 public:
  DataMatrix(Eigen::MatrixXd values, std::vector<std::string> sample_ids);

  const Eigen::MatrixXd& values() const noexcept { return values_; }
  const std::vector<std::string>& sample_ids() const noexcept { return ids_; }
  Eigen::Index rows() const noexcept { return values_.rows(); }
  Eigen::Index cols() const noexcept { return values_.cols(); }

  /// Rows selected by position, in the given order.
  DataMatrix select_rows(const std::vector<Eigen::Index>& rows) const;

 private:
  Eigen::MatrixXd values_;
  std::vector<std::string> ids_;
};

struct StoreManifest {
  std::string model_id;
  std::size_t d_model = 0;
  std::size_t n_layers = 0;
  std::vector<std::string> sample_ids;
  std::vector<TokenRole> roles_present;
  AttributeKind attribute_kind = AttributeKind::birth_year;
  std::string creator;
  /// Layers with tensors on disk. Empty means all of 0..n_layers-1.
  std::vector<std::size_t> layers;

  std::vector<std::size_t> stored_layers() const;
  std::size_t n_samples() const noexcept { return sample_ids.size(); }

  friend bool operator==(const StoreManifest&, const StoreManifest&) = default;
};

using TensorKey = std::pair<std::size_t, TokenRole>;

std::string tensor_file_name(std::size_t layer, TokenRole role);

/// Writes manifest.json and one float32 file per (layer, role).
///
/// The tensor map must cover exactly manifest.stored_layers() x
/// manifest.roles_present. Refuses to write into a non-empty directory
/// unless `overwrite` is set.
void write_store(const std::filesystem::path& dir, const StoreManifest& manifest,
                 const std::map<TensorKey, DataMatrix>& tensors,
                 bool overwrite = false);

/// Read-only view of a store directory. Tensors are loaded on access; every
/// access checks byte size and finiteness.
class ActivationStore {
 public:
  ActivationStore(std::filesystem::path dir, StoreManifest manifest);

  const StoreManifest& manifest() const noexcept { return manifest_; }
  const std::filesystem::path& dir() const noexcept { return dir_; }

  DataMatrix matrix(std::size_t layer, TokenRole role) const;

  /// Row index of a sample id, or nullopt.
  std::optional<Eigen::Index> row_of(const std::string& sample_id) const;

 private:
  std::filesystem::path dir_;
  StoreManifest manifest_;
  std::map<std::string, Eigen::Index> row_index_;
};

ActivationStore read_store(const std::filesystem::path& dir);

struct TensorStats {
  std::size_t layer = 0;
  TokenRole role = TokenRole::entity_x_last;
  std::size_t rows = 0;
  std::size_t cols = 0;
  double min = 0.0;
  double max = 0.0;
  double mean = 0.0;
  std::size_t nan_count = 0;
  std::size_t inf_count = 0;
};

struct ValidationIssue {
  std::optional<std::size_t> layer;
  std::optional<TokenRole> role;
  std::optional<std::size_t> row;
  std::string message;
};

struct ValidationReport {
  std::vector<TensorStats> tensors;
  std::vector<ValidationIssue> issues;

  bool ok() const noexcept { return issues.empty(); }
  std::string to_text() const;
};

/// Inspects every declared tensor. Problems are collected, never thrown.
ValidationReport validate(const ActivationStore& store);

/// Convenience overload that also reports an unreadable manifest.
ValidationReport validate(const std::filesystem::path& dir);

}  // namespace subspace_probe
