#pragma once

#include <span>

#include <Eigen/Dense>

namespace flexlmm {

double norm_pdf(double x);
double log_norm_pdf(double x);
double norm_cdf(double x);
/// log Phi(x), accurate far into the lower tail.
double log_norm_cdf(double x);
double norm_quantile(double p);

/// P(X <= h, Y <= k) for a standard bivariate normal with correlation rho.
/// Plackett's integral over arcsin(rho), anchored at rho = 0 or at rho = +/-1
/// (whichever is nearer) and evaluated by adaptive Gauss-Kronrod.
double bvn_cdf(double h, double k, double rho);

/// P(X_1 <= h_1, X_2 <= h_2, X_3 <= h_3) for a standard trivariate normal with
/// correlation matrix r. Starts from the matrix with the correlations of one variable
/// set to zero (a product of univariate and bivariate CDFs) and integrates the
/// derivative along the straight path to r. Nearly singular matrices go to
/// tvn_cdf_by_conditioning.
double tvn_cdf(const double h[3], const Eigen::Matrix3d& r, double abs_tol = 1e-13);

/// Same probability by conditioning on the variable least correlated with the other
/// two and integrating the conditional bivariate CDF.
double tvn_cdf_by_conditioning(const double h[3], const Eigen::Matrix3d& r, double abs_tol = 1e-13);

/// Orthant probability P(s_j * V_j > 0 for all j), V ~ N(mean, cov), where
/// s_j = +1 if positive[j] else -1. Dimension 1..3.
double orthant_probability(const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov, std::span<const bool> positive,
                           double abs_tol = 1e-13);

/// P(V_j > 0 for all j) for V ~ N(mean, cov). Dimension 1..3.
double positive_orthant_probability(const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov, double abs_tol = 1e-13);

}  // namespace flexlmm
