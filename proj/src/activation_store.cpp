#include "subspace_probe/activation_store.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "subspace_probe/detail/binary_io.hpp"
#include "subspace_probe/error.hpp"

namespace subspace_probe {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

std::string_view to_string(TokenRole role) {
  switch (role) {
    case TokenRole::entity_x_last: return "entity_x_last";
    case TokenRole::entity_y_last: return "entity_y_last";
    case TokenRole::sequence_last: return "sequence_last";
  }
  return "unknown";
}

TokenRole parse_token_role(std::string_view text) {
  if (text == "entity_x_last") return TokenRole::entity_x_last;
  if (text == "entity_y_last") return TokenRole::entity_y_last;
  if (text == "sequence_last") return TokenRole::sequence_last;
  throw StoreError("unknown token role '" + std::string(text) + "'");
}

// ---------------------------------------------------------------------------

DataMatrix::DataMatrix(Eigen::MatrixXd values, std::vector<std::string> sample_ids)
    : values_(std::move(values)), ids_(std::move(sample_ids)) {
  if (values_.rows() < 2 || values_.cols() < 1) {
    throw StoreError("data matrix needs at least 2 rows and 1 column, got " +
                     std::to_string(values_.rows()) + "x" + std::to_string(values_.cols()));
  }
  if (static_cast<Eigen::Index>(ids_.size()) != values_.rows()) {
    throw StoreError("data matrix has " + std::to_string(values_.rows()) +
                     " rows but " + std::to_string(ids_.size()) + " sample ids");
  }
  if (!values_.allFinite()) throw StoreError("data matrix contains non-finite values");
  std::unordered_set<std::string> seen;
  for (const auto& id : ids_) {
    if (!seen.insert(id).second) throw StoreError("duplicate sample id '" + id + "'");
  }
}

DataMatrix DataMatrix::select_rows(const std::vector<Eigen::Index>& rows) const {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), values_.cols());
  std::vector<std::string> ids;
  ids.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = values_.row(rows[i]);
    ids.push_back(ids_[static_cast<std::size_t>(rows[i])]);
  }
  return DataMatrix(std::move(out), std::move(ids));
}

// ---------------------------------------------------------------------------

std::vector<std::size_t> StoreManifest::stored_layers() const {
  if (!layers.empty()) return layers;
  std::vector<std::size_t> all(n_layers);
  for (std::size_t l = 0; l < n_layers; ++l) all[l] = l;
  return all;
}

std::string tensor_file_name(std::size_t layer, TokenRole role) {
  return "layer" + std::to_string(layer) + "." + std::string(to_string(role)) + ".f32";
}

namespace {

std::string key_label(std::size_t layer, TokenRole role) {
  return "(layer " + std::to_string(layer) + ", " + std::string(to_string(role)) + ")";
}

void check_manifest(const StoreManifest& m) {
  if (m.d_model == 0) throw StoreError("manifest d_model must be positive");
  if (m.n_layers == 0) throw StoreError("manifest n_layers must be positive");
  if (m.sample_ids.empty()) throw StoreError("manifest has no sample ids");
  if (m.roles_present.empty()) throw StoreError("manifest declares no token roles");
  std::unordered_set<std::string> seen;
  for (const auto& id : m.sample_ids) {
    if (!seen.insert(id).second) throw StoreError("duplicate sample id '" + id + "' in manifest");
  }
  std::set<TokenRole> roles(m.roles_present.begin(), m.roles_present.end());
  if (roles.size() != m.roles_present.size()) throw StoreError("manifest repeats a token role");
  std::set<std::size_t> layers;
  for (auto l : m.layers) {
    if (l >= m.n_layers) {
      throw StoreError("manifest layer " + std::to_string(l) + " outside 0.." +
                       std::to_string(m.n_layers - 1));
    }
    if (!layers.insert(l).second) throw StoreError("manifest repeats layer " + std::to_string(l));
  }
}

ordered_json manifest_json(const StoreManifest& m) {
  ordered_json j;
  j["format"] = "activation-store-v1";
  j["model_id"] = m.model_id;
  j["d_model"] = m.d_model;
  j["n_layers"] = m.n_layers;
  if (!m.layers.empty()) j["layers"] = m.layers;
  j["sample_ids"] = m.sample_ids;
  j["roles_present"] = ordered_json::array();
  for (auto r : m.roles_present) j["roles_present"].push_back(to_string(r));
  j["dtype"] = "f32";
  j["endianness"] = "little";
  j["layout"] = "row-major";
  j["attribute_kind"] = to_string(m.attribute_kind);
  j["creator"] = m.creator;
  return j;
}

StoreManifest parse_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw StoreError("missing manifest " + path.string());
  StoreManifest m;
  try {
    const auto j = json::parse(in);
    if (j.value("dtype", "") != "f32" || j.value("endianness", "") != "little" ||
        j.value("layout", "") != "row-major") {
      throw StoreError("manifest " + path.string() +
                       " must declare dtype f32, little endianness, row-major layout");
    }
    m.model_id = j.at("model_id").get<std::string>();
    m.d_model = j.at("d_model").get<std::size_t>();
    m.n_layers = j.at("n_layers").get<std::size_t>();
    m.sample_ids = j.at("sample_ids").get<std::vector<std::string>>();
    for (const auto& r : j.at("roles_present")) {
      m.roles_present.push_back(parse_token_role(r.get<std::string>()));
    }
    m.attribute_kind = parse_attribute_kind(j.at("attribute_kind").get<std::string>());
    m.creator = j.value("creator", "");
    if (j.contains("layers")) m.layers = j["layers"].get<std::vector<std::size_t>>();
  } catch (const json::exception& e) {
    throw StoreError("corrupt manifest " + path.string() + ": " + e.what());
  } catch (const DatasetError& e) {
    throw StoreError("corrupt manifest " + path.string() + ": " + e.what());
  }
  check_manifest(m);
  return m;
}

}  // namespace

void write_store(const fs::path& dir, const StoreManifest& manifest,
                 const std::map<TensorKey, DataMatrix>& tensors, bool overwrite) {
  if (tensors.empty()) throw StoreError("no tensors to write");
  check_manifest(manifest);

  const auto layers = manifest.stored_layers();
  std::set<TensorKey> expected;
  for (auto l : layers) {
    for (auto r : manifest.roles_present) expected.insert({l, r});
  }
  for (const auto& [key, m] : tensors) {
    const auto label = key_label(key.first, key.second);
    if (!expected.count(key)) {
      throw StoreError("tensor " + label + " is not declared by the manifest");
    }
    if (static_cast<std::size_t>(m.rows()) != manifest.n_samples() ||
        static_cast<std::size_t>(m.cols()) != manifest.d_model) {
      throw StoreError("dimension mismatch for " + label + ": tensor is " +
                       std::to_string(m.rows()) + "x" + std::to_string(m.cols()) +
                       ", manifest expects " + std::to_string(manifest.n_samples()) +
                       "x" + std::to_string(manifest.d_model));
    }
    if (m.sample_ids() != manifest.sample_ids) {
      throw StoreError("row order of " + label + " differs from manifest sample_ids");
    }
  }
  for (const auto& key : expected) {
    if (!tensors.count(key)) {
      throw StoreError("manifest declares " + key_label(key.first, key.second) +
                       " but no tensor was given");
    }
  }

  if (fs::exists(dir)) {
    if (!fs::is_directory(dir)) throw StoreError(dir.string() + " exists and is not a directory");
    if (!fs::is_empty(dir) && !overwrite) {
      throw StoreError("store directory " + dir.string() + " is not empty (pass overwrite)");
    }
  } else {
    fs::create_directories(dir);
  }

  for (const auto& [key, m] : tensors) {
    const auto& v = m.values();
    std::vector<float> row_major(static_cast<std::size_t>(v.size()));
    for (Eigen::Index r = 0; r < v.rows(); ++r) {
      for (Eigen::Index c = 0; c < v.cols(); ++c) {
        row_major[static_cast<std::size_t>(r * v.cols() + c)] = static_cast<float>(v(r, c));
      }
    }
    for (std::size_t i = 0; i < row_major.size(); ++i) {
      if (!std::isfinite(row_major[i])) {
        throw StoreError("value overflows float32 in " + key_label(key.first, key.second) +
                         " row " + std::to_string(i / manifest.d_model));
      }
    }
    std::vector<char> bytes;
    detail::append_le<float>(bytes, row_major);
    detail::write_file(dir / tensor_file_name(key.first, key.second), bytes);
  }
  detail::write_text(dir / "manifest.json", manifest_json(manifest).dump(2) + "\n");
}

// ---------------------------------------------------------------------------

ActivationStore::ActivationStore(fs::path dir, StoreManifest manifest)
    : dir_(std::move(dir)), manifest_(std::move(manifest)) {
  for (std::size_t i = 0; i < manifest_.sample_ids.size(); ++i) {
    row_index_[manifest_.sample_ids[i]] = static_cast<Eigen::Index>(i);
  }
}

std::optional<Eigen::Index> ActivationStore::row_of(const std::string& sample_id) const {
  const auto it = row_index_.find(sample_id);
  if (it == row_index_.end()) return std::nullopt;
  return it->second;
}

DataMatrix ActivationStore::matrix(std::size_t layer, TokenRole role) const {
  const auto label = key_label(layer, role);
  const auto layers = manifest_.stored_layers();
  if (std::find(layers.begin(), layers.end(), layer) == layers.end() ||
      std::find(manifest_.roles_present.begin(), manifest_.roles_present.end(), role) ==
          manifest_.roles_present.end()) {
    throw StoreError("store does not declare " + label);
  }
  const auto path = dir_ / tensor_file_name(layer, role);
  if (!fs::exists(path)) throw StoreError("missing tensor file for " + label + ": " + path.string());
  const auto bytes = detail::read_file(path);
  const std::size_t n = manifest_.n_samples();
  const std::size_t d = manifest_.d_model;
  if (bytes.size() != n * d * sizeof(float)) {
    throw StoreError("size mismatch for " + label + ": " + std::to_string(bytes.size()) +
                     " bytes, expected " + std::to_string(n * d * sizeof(float)));
  }
  const auto floats = detail::decode_le<float>(bytes, 0, n * d);
  Eigen::MatrixXd values(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < d; ++c) {
      const float f = floats[r * d + c];
      if (!std::isfinite(f)) {
        throw StoreError("non-finite value in " + label + " at row " + std::to_string(r) +
                         " (sample '" + manifest_.sample_ids[r] + "')");
      }
      values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = f;
    }
  }
  return DataMatrix(std::move(values), manifest_.sample_ids);
}

ActivationStore read_store(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw StoreError("store directory " + dir.string() + " not found");
  return ActivationStore(dir, parse_manifest(dir / "manifest.json"));
}

// ---------------------------------------------------------------------------

ValidationReport validate(const ActivationStore& store) {
  ValidationReport report;
  const auto& m = store.manifest();
  const std::size_t n = m.n_samples();
  const std::size_t d = m.d_model;
  for (auto layer : m.stored_layers()) {
    for (auto role : m.roles_present) {
      const auto path = store.dir() / tensor_file_name(layer, role);
      if (!fs::exists(path)) {
        report.issues.push_back({layer, role, std::nullopt, "missing tensor file " + path.filename().string()});
        continue;
      }
      std::vector<char> bytes;
      try {
        bytes = detail::read_file(path);
      } catch (const Error& e) {
        report.issues.push_back({layer, role, std::nullopt, e.what()});
        continue;
      }
      if (bytes.size() != n * d * sizeof(float)) {
        report.issues.push_back({layer, role, std::nullopt,
                                 "size mismatch: " + std::to_string(bytes.size()) +
                                     " bytes, expected " + std::to_string(n * d * sizeof(float))});
        continue;
      }
      const auto floats = detail::decode_le<float>(bytes, 0, n * d);
      TensorStats stats;
      stats.layer = layer;
      stats.role = role;
      stats.rows = n;
      stats.cols = d;
      stats.min = std::numeric_limits<double>::infinity();
      stats.max = -std::numeric_limits<double>::infinity();
      double sum = 0.0;
      std::size_t finite = 0;
      for (std::size_t r = 0; r < n; ++r) {
        bool row_reported = false;
        for (std::size_t c = 0; c < d; ++c) {
          const double v = floats[r * d + c];
          if (std::isnan(v)) {
            ++stats.nan_count;
          } else if (std::isinf(v)) {
            ++stats.inf_count;
          } else {
            stats.min = std::min(stats.min, v);
            stats.max = std::max(stats.max, v);
            sum += v;
            ++finite;
            continue;
          }
          if (!row_reported) {
            report.issues.push_back({layer, role, r,
                                     std::string(std::isnan(v) ? "NaN" : "Inf") +
                                         " at column " + std::to_string(c)});
            row_reported = true;
          }
        }
      }
      stats.mean = finite > 0 ? sum / static_cast<double>(finite) : 0.0;
      if (finite == 0) stats.min = stats.max = 0.0;
      report.tensors.push_back(stats);
    }
  }
  return report;
}

ValidationReport validate(const fs::path& dir) {
  try {
    return validate(read_store(dir));
  } catch (const StoreError& e) {
    ValidationReport report;
    report.issues.push_back({std::nullopt, std::nullopt, std::nullopt, e.what()});
    return report;
  }
}

std::string ValidationReport::to_text() const {
  std::ostringstream out;
  for (const auto& t : tensors) {
    out << "layer " << t.layer << ' ' << to_string(t.role) << ": " << t.rows << 'x'
        << t.cols << " min=" << detail::format_double(t.min)
        << " max=" << detail::format_double(t.max)
        << " mean=" << detail::format_double(t.mean) << " nan=" << t.nan_count
        << " inf=" << t.inf_count << '\n';
  }
  for (const auto& issue : issues) {
    out << "ISSUE";
    if (issue.layer) out << " layer " << *issue.layer;
    if (issue.role) out << ' ' << to_string(*issue.role);
    if (issue.row) out << " row " << *issue.row;
    out << ": " << issue.message << '\n';
  }
  out << (issues.empty() ? "OK" : "FAILED") << ": " << tensors.size() << " tensors, "
      << issues.size() << " issues\n";
  return out.str();
}

}  // namespace subspace_probe
