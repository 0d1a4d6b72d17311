#pragma once

#include <Eigen/Dense>

#include <cmath>

namespace ebdid::detail {

// Affine map u = (t - center) / scale used to keep powers of t well
// conditioned. Coefficients fitted on powers of u are mapped back to raw
// powers of t with raw_from_scaled().
struct ScaledTime {
  double center = 0.0;
  double scale = 1.0;

  static ScaledTime For(const Eigen::VectorXd& t) {
    ScaledTime s;
    if (t.size() == 0) return s;
    s.center = t.mean();
    s.scale = (t.array() - s.center).abs().maxCoeff();
    if (!(s.scale > 0.0)) s.scale = 1.0;
    return s;
  }

  double operator()(double t) const { return (t - center) / scale; }
};

// Columns u^0 .. u^order.
inline Eigen::MatrixXd scaled_powers(const Eigen::VectorXd& t, int order,
                                     const ScaledTime& s) {
  Eigen::MatrixXd v(t.size(), order + 1);
  for (Eigen::Index i = 0; i < t.size(); ++i) {
    const double u = s(t[i]);
    double p = 1.0;
    for (int j = 0; j <= order; ++j) {
      v(i, j) = p;
      p *= u;
    }
  }
  return v;
}

// T with beta_raw = T * gamma_scaled, where
// sum_j gamma_j ((t - c)/s)^j = sum_m beta_m t^m.
inline Eigen::MatrixXd raw_from_scaled(int order, const ScaledTime& s) {
  Eigen::MatrixXd tm = Eigen::MatrixXd::Zero(order + 1, order + 1);
  for (int j = 0; j <= order; ++j) {
    const double inv = std::pow(s.scale, -j);
    double binom = 1.0;  // C(j, m), built up from m = 0
    for (int m = 0; m <= j; ++m) {
      if (m > 0) binom = binom * (j - m + 1) / m;
      tm(m, j) = inv * binom * std::pow(-s.center, j - m);
    }
  }
  return tm;
}

}  // namespace ebdid::detail
