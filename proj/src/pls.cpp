#include "subspace_probe/pls.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <nlohmann/json.hpp>

#include "subspace_probe/detail/binary_io.hpp"
#include "subspace_probe/error.hpp"

namespace subspace_probe {

namespace {

constexpr double kRankTolerance = 1e-12;

void require_finite(const Eigen::Ref<const Eigen::MatrixXd>& m,
                    const char* what) {
  if (!m.allFinite()) throw PlsError(std::string(what) + " contains non-finite values");
}

void require_fitted(const PlsModel& model) {
  if (!model.fitted()) throw PlsError("PLS model is not fitted");
}

}  // namespace

PlsModel fit_pls(const Eigen::Ref<const Eigen::MatrixXd>& x,
                 const Eigen::Ref<const Eigen::VectorXd>& y, int n_components) {
  const Eigen::Index n = x.rows();
  const Eigen::Index d = x.cols();
  if (y.size() != n) {
    throw PlsError("shape mismatch: X has " + std::to_string(n) +
                   " rows but y has " + std::to_string(y.size()) + " entries");
  }
  if (n < 2 || d < 1) throw PlsError("PLS needs at least 2 samples and 1 feature");
  const Eigen::Index max_k = std::min<Eigen::Index>(n - 1, d);
  if (n_components < 1 || n_components > max_k) {
    throw PlsError("n_components=" + std::to_string(n_components) +
                   " out of range [1, " + std::to_string(max_k) + "] for N=" +
                   std::to_string(n) + ", d=" + std::to_string(d));
  }
  require_finite(x, "X");
  require_finite(y, "y");

  PlsModel model;
  model.n_components = n_components;
  model.trained_on = n;
  model.x_mean = x.colwise().mean().transpose();
  model.y_mean = y.mean();

  Eigen::MatrixXd xr = x.rowwise() - model.x_mean.transpose();
  Eigen::VectorXd yr = y.array() - model.y_mean;
  if (yr.squaredNorm() == 0.0) throw PlsError("response has zero variance");

  const double rank_floor = kRankTolerance * xr.squaredNorm();
  const int k = n_components;
  model.x_weights.resize(d, k);
  model.x_loadings.resize(d, k);
  model.y_score_coefs.resize(k);

  for (int a = 0; a < k; ++a) {
    Eigen::VectorXd w = xr.transpose() * yr;
    const double w_norm = w.norm();
    Eigen::VectorXd t;
    double tt = 0.0;
    if (w_norm > 0.0) {
      w /= w_norm;
      t = xr * w;
      tt = t.squaredNorm();
    }
    if (!(tt >= rank_floor) || tt == 0.0) {
      throw PlsError("rank exhausted at component " + std::to_string(a + 1) +
                     " (t^T t below tolerance)");
    }
    Eigen::VectorXd p = xr.transpose() * t / tt;
    double q = yr.dot(t) / tt;
    if (a == 0 && q < 0.0) {
      w = -w;
      t = -t;
      p = -p;
      q = -q;
    }
    model.x_weights.col(a) = w;
    model.x_loadings.col(a) = p;
    model.y_score_coefs(a) = q;
    xr.noalias() -= t * p.transpose();
    yr -= q * t;
  }

  const Eigen::MatrixXd ptw = model.x_loadings.transpose() * model.x_weights;
  model.coefficients =
      model.x_weights * ptw.partialPivLu().solve(model.y_score_coefs);
  return model;
}

Eigen::VectorXd predict(const PlsModel& model,
                        const Eigen::Ref<const Eigen::MatrixXd>& x) {
  require_fitted(model);
  if (x.cols() != model.dim()) {
    throw PlsError("dimension mismatch: model expects " +
                   std::to_string(model.dim()) + " columns, got " +
                   std::to_string(x.cols()));
  }
  require_finite(x, "X");
  Eigen::VectorXd out =
      (x.rowwise() - model.x_mean.transpose()) * model.coefficients;
  out.array() += model.y_mean;
  return out;
}

Eigen::MatrixXd transform(const PlsModel& model,
                          const Eigen::Ref<const Eigen::MatrixXd>& x) {
  require_fitted(model);
  if (x.cols() != model.dim()) {
    throw PlsError("dimension mismatch: model expects " +
                   std::to_string(model.dim()) + " columns, got " +
                   std::to_string(x.cols()));
  }
  require_finite(x, "X");
  const Eigen::MatrixXd ptw = model.x_loadings.transpose() * model.x_weights;
  const Eigen::MatrixXd rotations =
      model.x_weights * ptw.partialPivLu().inverse();
  return (x.rowwise() - model.x_mean.transpose()) * rotations;
}

double r2_score(const Eigen::Ref<const Eigen::VectorXd>& y_true,
                const Eigen::Ref<const Eigen::VectorXd>& y_pred) {
  if (y_true.size() != y_pred.size()) {
    throw PlsError("r2_score: length mismatch");
  }
  if (y_true.size() < 2) throw PlsError("r2_score: need at least 2 values");
  const double mean = y_true.mean();
  const double ss_tot = (y_true.array() - mean).square().sum();
  if (ss_tot == 0.0) throw PlsError("r2_score: y_true has zero variance");
  const double ss_res = (y_true - y_pred).squaredNorm();
  return 1.0 - ss_res / ss_tot;
}

Eigen::VectorXd first_direction(const PlsModel& model) {
  require_fitted(model);
  return model.x_weights.col(0);
}

void save_model(const PlsModel& model, const std::filesystem::path& stem) {
  require_fitted(model);
  const auto d = static_cast<std::size_t>(model.dim());
  const auto k = static_cast<std::size_t>(model.n_components);

  std::vector<char> blob;
  auto put = [&](const auto& v) {
    detail::append_le<double>(blob, std::span<const double>(v.data(), v.size()));
  };
  put(model.x_mean);
  put(model.x_weights);
  put(model.x_loadings);
  put(model.y_score_coefs);
  put(model.coefficients);

  auto binary = stem;
  binary += ".f64";
  auto meta_path = stem;
  meta_path += ".json";

  nlohmann::ordered_json meta;
  meta["format"] = "pls1-v1";
  meta["n_components"] = k;
  meta["d"] = d;
  meta["n_train"] = model.trained_on;
  meta["centered"] = model.centered;
  meta["scaled"] = model.scaled;
  meta["y_mean"] = model.y_mean;
  meta["binary"] = binary.filename().string();
  meta["dtype"] = "f64";
  meta["endianness"] = "little";
  std::size_t offset = 0;
  auto entry = [&](const char* name, std::size_t count, const char* layout) {
    meta["arrays"].push_back(
        {{"name", name}, {"offset", offset}, {"count", count}, {"layout", layout}});
    offset += count * sizeof(double);
  };
  entry("x_mean", d, "vector");
  entry("x_weights", d * k, "column-major d x k");
  entry("x_loadings", d * k, "column-major d x k");
  entry("y_score_coefs", k, "vector");
  entry("coefficients", d, "vector");

  detail::write_file(binary, blob);
  detail::write_text(meta_path, meta.dump(2) + "\n");
}

PlsModel load_model(const std::filesystem::path& stem) {
  auto meta_path = stem;
  meta_path += ".json";
  nlohmann::json meta;
  try {
    std::ifstream in(meta_path);
    if (!in) throw PlsError("cannot open " + meta_path.string());
    meta = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw PlsError("corrupt model metadata " + meta_path.string() + ": " + e.what());
  }
  if (meta.value("format", "") != "pls1-v1") {
    throw PlsError("unsupported model format in " + meta_path.string());
  }
  const auto d = meta.at("d").get<std::size_t>();
  const auto k = meta.at("n_components").get<std::size_t>();
  const auto bytes = detail::read_file(stem.parent_path() /
                                       meta.at("binary").get<std::string>());
  const std::size_t expected = (2 * d + 2 * d * k + k) * sizeof(double);
  if (bytes.size() != expected) {
    throw PlsError("model binary for " + stem.string() + " has " +
                   std::to_string(bytes.size()) + " bytes, expected " +
                   std::to_string(expected));
  }

  PlsModel model;
  model.n_components = static_cast<int>(k);
  model.trained_on = meta.at("n_train").get<Eigen::Index>();
  model.centered = meta.at("centered").get<bool>();
  model.scaled = meta.at("scaled").get<bool>();
  model.y_mean = meta.at("y_mean").get<double>();

  std::size_t offset = 0;
  auto take = [&](std::size_t count) {
    auto v = detail::decode_le<double>(bytes, offset, count);
    offset += count * sizeof(double);
    return v;
  };
  auto as_vector = [](const std::vector<double>& v) {
    return Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(
        v.data(), static_cast<Eigen::Index>(v.size())));
  };
  auto as_matrix = [&](const std::vector<double>& v) {
    return Eigen::MatrixXd(Eigen::Map<const Eigen::MatrixXd>(
        v.data(), static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(k)));
  };
  model.x_mean = as_vector(take(d));
  model.x_weights = as_matrix(take(d * k));
  model.x_loadings = as_matrix(take(d * k));
  model.y_score_coefs = as_vector(take(k));
  model.coefficients = as_vector(take(d));
  return model;
}

}  // namespace subspace_probe
