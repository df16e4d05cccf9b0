#pragma once

#include <Eigen/Dense>
#include <cmath>

#include "oujm/errors.hpp"

// Small dense-matrix kernels for the latent-process machinery.  Everything
// here targets matrices of order <= 4 (and their 2p x 2p / p^2 x p^2 lifts),
// so simple robust algorithms beat clever ones.

namespace oujm {

template <typename MatT>
bool all_finite(const MatT& a) {
  return a.allFinite();
}

namespace detail {

// Pade(13) numerator/denominator coefficients for expm.
inline constexpr double kPade13[] = {
    64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
    1187353796428800.0,  129060195264000.0,   10559470521600.0,
    670442572800.0,      33522128640.0,       1323241920.0,
    40840800.0,          960960.0,            16380.0,
    182.0,               1.0};

}  // namespace detail

// exp(a) by scaling-and-squaring with a Pade(13) core.  Works for fixed and
// dynamic Eigen matrix types.
template <typename MatT>
MatT mat_exp_core(const MatT& a) {
  using std::frexp;
  const auto n = a.rows();
  const double norm1 = a.cwiseAbs().colwise().sum().maxCoeff();
  // theta_13 from the standard scaling analysis.
  const double theta13 = 5.371920351148152;
  int squarings = 0;
  MatT as = a;
  if (norm1 > theta13) {
    squarings = static_cast<int>(std::ceil(std::log2(norm1 / theta13)));
    as = a / std::ldexp(1.0, squarings);
  }
  const double* b = detail::kPade13;
  const MatT ident = MatT::Identity(n, n);
  const MatT a2 = as * as;
  const MatT a4 = a2 * a2;
  const MatT a6 = a4 * a2;
  MatT u = as * (a6 * (b[13] * a6 + b[11] * a4 + b[9] * a2) + b[7] * a6 +
                 b[5] * a4 + b[3] * a2 + b[1] * ident);
  MatT v = a6 * (b[12] * a6 + b[10] * a4 + b[8] * a2) + b[6] * a6 +
           b[4] * a4 + b[2] * a2 + b[0] * ident;
  MatT num = v + u;
  MatT den = v - u;
  MatT r = den.partialPivLu().solve(num);
  for (int s = 0; s < squarings; ++s) r = r * r;
  return r;
}

// exp(scale * a) with input validation.
inline Eigen::MatrixXd mat_exp(const Eigen::MatrixXd& a, double scale = 1.0) {
  if (a.rows() != a.cols())
    throw DimensionError("mat_exp: matrix must be square, got " +
                         std::to_string(a.rows()) + "x" +
                         std::to_string(a.cols()));
  if (!all_finite(a) || !std::isfinite(scale))
    throw DomainError("mat_exp: non-finite input");
  return mat_exp_core<Eigen::MatrixXd>(scale * a);
}

// Lower Cholesky factor of a symmetric positive definite matrix.  The failing
// pivot index is reported on non-positive-definite input.
template <typename MatT>
MatT chol_lower_core(const MatT& a) {
  const auto n = a.rows();
  MatT l = MatT::Zero(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    double d = a(j, j);
    for (Eigen::Index k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
    if (!(d > 0.0) || !std::isfinite(d))
      throw DecompositionError(
          "chol_lower: matrix not positive definite at pivot " +
              std::to_string(j),
          static_cast<int>(j));
    l(j, j) = std::sqrt(d);
    for (Eigen::Index i = j + 1; i < n; ++i) {
      double s = a(i, j);
      for (Eigen::Index k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      l(i, j) = s / l(j, j);
    }
  }
  return l;
}

inline Eigen::MatrixXd chol_lower(const Eigen::MatrixXd& a) {
  if (a.rows() != a.cols())
    throw DimensionError("chol_lower: matrix must be square");
  if (!all_finite(a)) throw DomainError("chol_lower: non-finite input");
  const double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
  if ((a - a.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale)
    throw DomainError("chol_lower: matrix not symmetric within 1e-10");
  return chol_lower_core<Eigen::MatrixXd>(a);
}

// Solve theta * V + V * theta^T = q for V by forming the p^2 x p^2
// Kronecker-sum system and doing a dense partial-pivoting solve.  The result
// is symmetrized to suppress round-off asymmetry.
inline Eigen::MatrixXd lyapunov_solve(const Eigen::MatrixXd& theta,
                                      const Eigen::MatrixXd& q) {
  const Eigen::Index p = theta.rows();
  if (theta.cols() != p || q.rows() != p || q.cols() != p)
    throw DimensionError("lyapunov_solve: theta and q must be square p x p");
  if (!all_finite(theta) || !all_finite(q))
    throw DomainError("lyapunov_solve: non-finite input");

  Eigen::MatrixXd sys = Eigen::MatrixXd::Zero(p * p, p * p);
  // vec(theta*V) = (I (x) theta) vec(V);  vec(V*theta^T) = (theta (x) I) vec(V)
  for (Eigen::Index i = 0; i < p; ++i)
    for (Eigen::Index j = 0; j < p; ++j)
      for (Eigen::Index k = 0; k < p; ++k) {
        sys(j * p + i, j * p + k) += theta(i, k);  // I (x) theta
        sys(j * p + i, k * p + i) += theta(j, k);  // theta (x) I
      }

  Eigen::PartialPivLU<Eigen::MatrixXd> lu(sys);
  const Eigen::MatrixXd& lumat = lu.matrixLU();
  const double scale = std::max(1.0, sys.cwiseAbs().maxCoeff());
  for (Eigen::Index i = 0; i < p * p; ++i)
    if (std::abs(lumat(i, i)) < 1e-14 * scale)
      throw SingularityError("lyapunov_solve: Kronecker sum is singular");

  Eigen::VectorXd vecq(p * p);
  for (Eigen::Index j = 0; j < p; ++j)
    for (Eigen::Index i = 0; i < p; ++i) vecq(j * p + i) = q(i, j);
  Eigen::VectorXd vecv = lu.solve(vecq);
  Eigen::MatrixXd v(p, p);
  for (Eigen::Index j = 0; j < p; ++j)
    for (Eigen::Index i = 0; i < p; ++i) v(i, j) = vecv(j * p + i);
  return 0.5 * (v + v.transpose());
}

// Directional (Frechet) derivative of the matrix exponential: the map
// E -> d/dt exp(m + t E) at t = 0, read off the top-right block of
// exp([[m, E], [0, m]]).
template <typename MatT, typename BigT>
MatT mat_exp_frechet(const MatT& m, const MatT& e) {
  const auto n = m.rows();
  BigT block = BigT::Zero(2 * n, 2 * n);
  block.topLeftCorner(n, n) = m;
  block.topRightCorner(n, n) = e;
  block.bottomRightCorner(n, n) = m;
  BigT eb = mat_exp_core<BigT>(block);
  return eb.topRightCorner(n, n);
}

// Reverse-mode companion: given the adjoint abar of a = exp(m), returns mbar.
// Uses the identity that the adjoint of the Frechet map at m is the Frechet
// map at m^T.
template <typename MatT, typename BigT>
MatT mat_exp_adjoint(const MatT& m, const MatT& abar) {
  MatT mt = m.transpose();
  return mat_exp_frechet<MatT, BigT>(mt, abar);
}

// Reverse-mode rule for s = l * l^T -> l = chol(s): given lbar, returns the
// symmetric adjoint sbar.
template <typename MatT>
MatT chol_adjoint(const MatT& l, const MatT& lbar) {
  const auto n = l.rows();
  MatT p = (l.transpose() * lbar).eval();
  // Lower triangle with halved diagonal.
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j > i)
        p(i, j) = 0.0;
      else if (j == i)
        p(i, j) *= 0.5;
    }
  MatT linv = l.template triangularView<Eigen::Lower>().solve(MatT::Identity(n, n));
  MatT sbar = linv.transpose() * p * linv;
  return (0.5 * (sbar + sbar.transpose())).eval();
}

}  // namespace oujm
