/*
 * Copyright 2026 The wse-stencil Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include <cmath>
#include <stdexcept>

#include "wse/collectives.hpp"
#include "wse/solver.hpp"

namespace wse {

namespace {

using Vec = std::vector<double>;

/// Rows in the recorded term order: the first term initialises the sum.
Vec matvec_ordered(const DenseMatrix& a, const Vec& x, const ReferenceOrder& o) {
  const Dims& d = o.dims;
  Vec y(a.n, 0.0);
  for (std::size_t i = 0; i < a.n; ++i) {
    double s = 0.0;
    bool first = true;
    for (const std::int8_t tag : o.matvec_terms[i]) {
      double t;
      if (tag == kDiagonalTerm) {
        t = a(i, i) * x[i];
      } else {
        const std::ptrdiff_t j = static_cast<std::ptrdiff_t>(i) + coupling_offset(d, tag);
        const bool inside = j >= 0 && static_cast<std::size_t>(j) < a.n;
        t = inside ? a(i, static_cast<std::size_t>(j)) * x[static_cast<std::size_t>(j)] : 0.0;
      }
      s = first ? t : s + t;
      first = false;
    }
    y[i] = s;
  }
  return y;
}

Vec matvec(const DenseMatrix& a, const Vec& x) {
  Vec y(a.n, 0.0);
  for (std::size_t i = 0; i < a.n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < a.n; ++j) s += a(i, j) * x[j];
    y[i] = s;
  }
  return y;
}

struct Ops {
  const ReferenceOrder* order = nullptr;
  ReduceRoute route;

  double dot(const Vec& x, const Vec& y) const {
    if (!order) {
      double s = 0.0;
      for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
      return s;
    }
    const Dims& d = order->dims;
    std::vector<double> partial(static_cast<std::size_t>(d.x) * d.y, 0.0);
    for (int j = 0; j < d.y; ++j) {
      for (int i = 0; i < d.x; ++i) {
        double s = 0.0;
        for (int k = 0; k < d.z; ++k) {
          const std::size_t g = d.index(i, j, k);
          s = std::fma(x[g], y[g], s);
        }
        partial[column_index(d, i, j)] = s;
      }
    }
    return allreduce_reference(route, partial, Format::Binary64);
  }

  // y += a x
  void axpy(Vec& y, double a, const Vec& x) const {
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = order ? std::fma(a, x[i], y[i]) : y[i] + a * x[i];
  }

  // y = x + a y
  void xpay(Vec& y, double a, const Vec& x) const {
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = order ? std::fma(a, y[i], x[i]) : x[i] + a * y[i];
  }
};

}  // namespace

ReferenceResult reference_bicgstab(const DenseMatrix& a, const std::vector<double>& b, const std::vector<double>& x0,
                                   int iters, double tol, const ReferenceOrder* order) {
  if (b.size() != a.n || x0.size() != a.n) throw std::invalid_argument("reference_bicgstab: size mismatch");
  if (order && order->dims.points() != a.n) throw std::invalid_argument("reference_bicgstab: order dims mismatch");
  Ops ops;
  ops.order = order;
  if (order) ops.route = build_reduce_route(order->dims.x, order->dims.y);
  const auto dot = [&](const Vec& x, const Vec& y) { return ops.dot(x, y); };
  const auto axpy = [&](Vec& y, double s, const Vec& x) { ops.axpy(y, s, x); };
  const bool replay = order && !order->matvec_terms.empty();
  if (replay && order->matvec_terms.size() != a.n) throw std::invalid_argument("reference_bicgstab: term order size");
  const auto apply = [&](const Vec& v) { return replay ? matvec_ordered(a, v, *order) : matvec(a, v); };
  ReferenceResult out;
  Vec x = x0;
  Vec r = b;
  {
    const Vec ax = matvec(a, x);
    for (std::size_t i = 0; i < r.size(); ++i) r[i] -= ax[i];
  }
  const Vec r0 = r;
  Vec p = r;
  double bb = 0.0;
  for (double v : b) bb += v * v;
  const double bnorm = std::sqrt(bb);
  const auto residual = [&] {
    const Vec ax = matvec(a, x);
    double n = 0.0;
    for (std::size_t i = 0; i < b.size(); ++i) n += (b[i] - ax[i]) * (b[i] - ax[i]);
    n = std::sqrt(n);
    return bnorm == 0.0 ? n : n / bnorm;
  };
  const auto finish = [&](SolveStatus s, int it) {
    out.status = s;
    out.stop_iter = it;
    out.x = x;
    return out;
  };

  double rho = dot(r0, r);
  double rnorm = bnorm;
  for (int it = 1; it <= iters; ++it) {
    IterationScalars sc;
    sc.rho = rho;
    const Vec s = apply(p);
    const double r0s = dot(r0, s);
    if (!std::isfinite(r0s) || !std::isfinite(rho)) return finish(SolveStatus::Diverged, it);
    if (negligible(rho, bnorm * rnorm) || negligible(r0s, rho)) return finish(SolveStatus::Breakdown, it);
    sc.alpha = rho / r0s;
    Vec q = r;
    axpy(q, -sc.alpha, s);
    const Vec y = apply(q);
    const double qy = dot(q, y);
    const double yy = dot(y, y);
    if (!std::isfinite(yy)) return finish(SolveStatus::Diverged, it);
    if (negligible(yy, qy)) {
      axpy(x, sc.alpha, p);
      out.scalars.push_back(sc);
      out.residuals.push_back(residual());
      return finish(out.residuals.back() <= tol ? SolveStatus::Converged : SolveStatus::Breakdown, it);
    }
    sc.omega = qy / yy;
    axpy(x, sc.alpha, p);
    axpy(x, sc.omega, q);
    r = q;
    axpy(r, -sc.omega, y);
    const double rho_next = dot(r0, r);
    rnorm = std::sqrt(std::fabs(dot(r, r)));
    const double res = residual();
    if (!std::isfinite(res)) return finish(SolveStatus::Diverged, it);
    if (res <= tol) {
      out.scalars.push_back(sc);
      out.residuals.push_back(res);
      return finish(SolveStatus::Converged, it);
    }
    if (negligible(sc.omega, 1.0)) {
      out.scalars.push_back(sc);
      out.residuals.push_back(res);
      return finish(SolveStatus::Breakdown, it);
    }
    sc.beta = (sc.alpha / sc.omega) * (rho_next / rho);
    out.scalars.push_back(sc);
    out.residuals.push_back(res);
    axpy(p, -sc.omega, s);
    ops.xpay(p, sc.beta, r);
    rho = rho_next;
  }
  return finish(SolveStatus::MaxIterations, iters);
}

}  // namespace wse
