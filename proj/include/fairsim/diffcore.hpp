#pragma once

// Hand-derived vector-Jacobian products for the few compositions the
// prototype and re-representation losses need, and a central-difference
// gradient checker. There is no tape: each loss chains these by hand.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "fairsim/encoder.hpp"
#include "fairsim/error.hpp"
#include "fairsim/simcore.hpp"

namespace fairsim {

struct CosineGrad {
  Vec dv;
  Vec dl;
};

/// d cos(v, l) scaled by `upstream`:
///   dv = upstream * (l / (|v||l|) - (v.l) v / (|v|^3 |l|)), dl symmetric.
inline CosineGrad grad_cosine(const Vec& v, const Vec& l, double upstream) {
  const double nv = norm(v);
  const double nl = norm(l);
  if (nv == 0.0 || nl == 0.0) fail(ErrorCode::ZeroVector, "grad_cosine");
  const double vl = dot(v, l);
  const double inv = 1.0 / (nv * nl);
  CosineGrad g;
  g.dv = upstream * (l * inv - v * (vl * inv / (nv * nv)));
  g.dl = upstream * (v * inv - l * (vl * inv / (nl * nl)));
  return g;
}

/// Row-vector product u = v * M and its pullbacks.
struct MatvecRight {
  static Vec forward(const Vec& v, const Mat& m) { return m.transpose() * v; }
  static Mat vjp_matrix(const Vec& v, const Vec& du) { return v * du.transpose(); }
  static Vec vjp_vector(const Mat& m, const Vec& du) { return m * du; }
};

struct Tanh {
  static double forward(double x) { return std::tanh(x); }
  /// Takes the forward output t = tanh(x).
  static double vjp(double t, double upstream) { return upstream * (1.0 - t * t); }
};

/// Mean of squared differences over N scalar pairs.
struct Mse {
  static double forward(std::span<const double> x, std::span<const double> y) {
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += (x[i] - y[i]) * (x[i] - y[i]);
    return s / static_cast<double>(x.size());
  }
  static std::vector<double> vjp(std::span<const double> x, std::span<const double> y,
                                 double upstream) {
    std::vector<double> out(x.size());
    const double scale = 2.0 * upstream / static_cast<double>(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = scale * (x[i] - y[i]);
    return out;
  }
};

/// lambda * a + (1 - lambda) * b.
struct AffineSum {
  static double forward(double lambda, double a, double b) {
    return lambda * a + (1.0 - lambda) * b;
  }
};

/// Gradient of upstream * cos(v * M, l) with respect to M; v and l constant.
inline Mat grad_rrm_similarity(const Vec& v, const Mat& m, const Vec& l, double upstream) {
  if (m.rows() != v.size() || m.cols() != l.size())
    fail(ErrorCode::DimMismatch, "grad_rrm_similarity shapes");
  const Vec u = MatvecRight::forward(v, m);
  const CosineGrad g = grad_cosine(u, l, upstream);
  return MatvecRight::vjp_matrix(v, g.dv);
}

/// Pulls a query-space sensitivity back to the learnable prefix rows. The
/// sequence is [prefix; suffix]; suffix sensitivities are dropped.
inline Mat grad_prefix(const TextEncoder& encoder, const Mat& prefix,
                       const Mat& suffix, const Vec& d_query) {
  if (!encoder.differentiable())
    fail(ErrorCode::EncoderNotDifferentiable, encoder.id());
  Mat tokens(prefix.rows() + suffix.rows(), prefix.cols());
  tokens << prefix, suffix;
  Mat all = encoder.vjp(tokens, d_query);
  return all.topRows(prefix.rows());
}

// ---------------------------------------------------------------------------

struct GradCheckReport {
  std::string id;
  double max_rel_err = 0.0;
  double h = 0.0;
  double tol = 0.0;
  std::size_t coordinates = 0;
  bool passed = false;
};

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) /
         std::max({std::abs(analytic), std::abs(numeric), 1e-12});
}

/// Compares `analytic` against central differences of `loss` at `point`,
/// coordinate by coordinate.
inline GradCheckReport gradcheck(std::string id,
                                 const std::function<double(const Vec&)>& loss,
                                 const Vec& point, const Vec& analytic, double h,
                                 double tol) {
  if (analytic.size() != point.size())
    fail(ErrorCode::DimMismatch, "analytic gradient size");
  GradCheckReport r{std::move(id), 0.0, h, tol, static_cast<std::size_t>(point.size()), false};
  Vec x = point;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + h;
    const double up = loss(x);
    x[i] = orig - h;
    const double down = loss(x);
    x[i] = orig;
    if (!std::isfinite(up) || !std::isfinite(down))
      fail(ErrorCode::NonFiniteLoss, r.id + " at coordinate " + std::to_string(i));
    const double numeric = (up - down) / (2.0 * h);
    r.max_rel_err = std::max(r.max_rel_err, relative_error(analytic[i], numeric));
  }
  r.passed = r.max_rel_err <= tol;
  return r;
}

/// Flattens a matrix column-major so matrix parameters can go through gradcheck.
inline Vec flatten(const Mat& m) {
  return Eigen::Map<const Vec>(m.data(), m.size());
}

inline Mat unflatten(const Vec& v, Eigen::Index rows, Eigen::Index cols) {
  return Eigen::Map<const Mat>(v.data(), rows, cols);
}

}  // namespace fairsim
