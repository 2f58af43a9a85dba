#pragma once

// PLS1 regression (univariate response) fitted with NIPALS.
//
// Inputs are centered but not scaled, so every direction the model exposes
// lives in raw activation coordinates.

#include <filesystem>

#include <Eigen/Dense>

namespace subspace_probe {

struct PlsModel {
  int n_components = 0;
  Eigen::VectorXd x_mean;          // d
  double y_mean = 0.0;
  Eigen::MatrixXd x_weights;       // W, d x k, unit-norm columns
  Eigen::MatrixXd x_loadings;      // P, d x k
  Eigen::VectorXd y_score_coefs;   // q, k
  Eigen::VectorXd coefficients;    // B = W (P^T W)^-1 q, d
  Eigen::Index trained_on = 0;
  bool centered = true;
  bool scaled = false;

  bool fitted() const noexcept { return n_components > 0; }
  Eigen::Index dim() const noexcept { return x_mean.size(); }
};

/// Fits a k-component PLS1 model.
///
/// Throws PlsError on shape mismatch, k outside [1, min(N-1, d)], a
/// zero-variance response, non-finite input, or when a component's score
/// vector collapses (t^T t < 1e-12 * ||X_c||_F^2). The last case names the
/// 1-based component index.
PlsModel fit_pls(const Eigen::Ref<const Eigen::MatrixXd>& x,
                 const Eigen::Ref<const Eigen::VectorXd>& y, int n_components);

/// y_hat = y_mean + (x - x_mean) . B for every row of x.
Eigen::VectorXd predict(const PlsModel& model,
                        const Eigen::Ref<const Eigen::MatrixXd>& x);

/// Latent scores T = (X - x_mean) W (P^T W)^-1. On training data these equal
/// the NIPALS score vectors.
Eigen::MatrixXd transform(const PlsModel& model,
                          const Eigen::Ref<const Eigen::MatrixXd>& x);

/// Coefficient of determination 1 - SS_res / SS_tot.
double r2_score(const Eigen::Ref<const Eigen::VectorXd>& y_true,
                const Eigen::Ref<const Eigen::VectorXd>& y_pred);

/// First x-weight vector w1, oriented so the prediction increases along it.
Eigen::VectorXd first_direction(const PlsModel& model);

// Serialization: `<stem>.json` holds metadata, `<stem>.f64` holds the
// little-endian float64 arrays x_mean, W, P, q, B in that order (W and P
// column-major). See docs/formats.md.
void save_model(const PlsModel& model, const std::filesystem::path& stem);
PlsModel load_model(const std::filesystem::path& stem);

}  // namespace subspace_probe
