#pragma once

#include <Eigen/Dense>

#include <functional>

namespace cbf {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

using ScalarFn = std::function<double(const Vector&)>;

/// Central difference d f / d x_i.
inline double fd_partial(const ScalarFn& f, const Vector& x, int i,
                         double step = 1e-5) {
  Vector xp = x, xm = x;
  xp[i] += step;
  xm[i] -= step;
  return (f(xp) - f(xm)) / (2.0 * step);
}

inline Vector fd_gradient(const ScalarFn& f, const Vector& x,
                          double step = 1e-5) {
  Vector g(x.size());
  for (int i = 0; i < x.size(); ++i) g[i] = fd_partial(f, x, i, step);
  return g;
}

/// Second-order central differences; symmetric by construction.
inline Matrix fd_hessian(const ScalarFn& f, const Vector& x,
                         double step = 1e-4) {
  const int n = static_cast<int>(x.size());
  Matrix H(n, n);
  const double f0 = f(x);
  for (int i = 0; i < n; ++i) {
    Vector xp = x, xm = x;
    xp[i] += step;
    xm[i] -= step;
    H(i, i) = (f(xp) - 2.0 * f0 + f(xm)) / (step * step);
    for (int j = i + 1; j < n; ++j) {
      Vector xpp = x, xpm = x, xmp = x, xmm = x;
      xpp[i] += step; xpp[j] += step;
      xpm[i] += step; xpm[j] -= step;
      xmp[i] -= step; xmp[j] += step;
      xmm[i] -= step; xmm[j] -= step;
      const double v = (f(xpp) - f(xpm) - f(xmp) + f(xmm)) / (4.0 * step * step);
      H(i, j) = v;
      H(j, i) = v;
    }
  }
  return H;
}

}  // namespace cbf
