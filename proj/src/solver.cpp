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

#include "wse/solver.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "wse/collectives.hpp"

namespace wse {

std::string_view to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::Converged: return "converged";
    case SolveStatus::MaxIterations: return "max-iterations";
    case SolveStatus::Breakdown: return "breakdown";
    case SolveStatus::Diverged: return "diverged";
  }
  return "?";
}

double true_residual(const StencilSystem& sys, const std::vector<double>& x) {
  const std::vector<double> ax = apply_stencil(sys, x);
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < ax.size(); ++i) {
    const double d = sys.rhs[i] - ax[i];
    num += d * d;
    den += sys.rhs[i] * sys.rhs[i];
  }
  if (den == 0.0) return std::sqrt(num);
  return std::sqrt(num / den);
}

namespace {

class Solver {
 public:
  Solver(const StencilSystem& sys, const SolverOptions& opt)
      : sys_(sys), opt_(opt), ds_(sys, fabric_config(sys, opt)), route_(build_reduce_route(sys.dims.x, sys.dims.y)) {
    Fabric& f = ds_.fabric();
    install_allreduce_routes(f, route_);
    f.set_schedule(opt.schedule);
    f.set_policy(opt.policy);
    f.set_checked(opt.checked);
    const Format st = storage_format(opt.mode);
    r0_ = ds_.allocate_vector(st, "r0");
    p_ = ds_.allocate_vector(st, "p");
    r_ = ds_.allocate_vector(st, "r");
    s_ = ds_.allocate_vector(st, "s");
    y_ = ds_.allocate_vector(st, "y");
    x_ = ds_.allocate_vector(st, "x");
    ds_.load(r0_, sys.rhs);
    copy_tiles(f, p_, r0_);
    copy_tiles(f, r_, r0_);
    ds_.load(x_, std::vector<double>(sys.dims.points(), 0.0));
    double bb = 0.0;
    for (double v : sys.rhs) bb += v * v;
    bnorm_ = std::sqrt(bb);
  }

  SolveResult run();

 private:
  static FabricConfig fabric_config(const StencilSystem& sys, const SolverOptions& opt) {
    FabricConfig c = opt.fabric;
    c.width = sys.dims.x;
    c.height = sys.dims.y;
    return c;
  }

  std::uint64_t n() const { return sys_.dims.points(); }
  std::uint32_t z() const { return static_cast<std::uint32_t>(sys_.dims.z); }

  void spmv(const MemoryTensor& v, const MemoryTensor& u) {
    const KernelStats k = spmv3d(ds_, v, u, opt_.mode, opt_.spmv);
    res_.spmv_cycles += k.cycles;
    res_.flops.matvec += kSpmvFlopsPerPoint * n();
    res_.peak_threads = std::max(res_.peak_threads, k.peak_threads);
  }

  void axpy(const MemoryTensor& y, double a, const MemoryTensor& x) {
    axpy_tiles(ds_.fabric(), y, a, x, opt_.mode, opt_.policy);
    res_.local_cycles += axpy_cycles(z(), opt_.mode);
    res_.flops.axpy += 2 * n();
  }

  void xpay(const MemoryTensor& y, double a, const MemoryTensor& x) {
    xpay_tiles(ds_.fabric(), y, a, x, opt_.mode, opt_.policy);
    res_.local_cycles += axpy_cycles(z(), opt_.mode);
    res_.flops.axpy += 2 * n();
  }

  /// Local partial products for each pair, then one reduction round.
  /// `credited` pairs count toward the algorithm's flops.
  std::vector<double> reduce(std::initializer_list<std::pair<const MemoryTensor*, const MemoryTensor*>> pairs,
                             int credited) {
    const std::size_t tiles = ds_.fabric().tile_count();
    std::vector<std::vector<double>> locals(tiles);
    for (const auto& [a, b] : pairs) {
      const std::vector<double> part = dot_tiles(ds_.fabric(), *a, *b, opt_.mode, opt_.policy);
      for (std::size_t t = 0; t < tiles; ++t) locals[t].push_back(part[t]);
      res_.local_cycles += dot_cycles(z(), opt_.mode);
    }
    res_.flops.dot += 2 * n() * static_cast<std::uint64_t>(credited);
    const AllReduceResult ar = allreduce_sum(ds_.fabric(), route_, locals, scalar_format(opt_.mode));
    res_.reduce_cycles += ar.cycles;
    ++res_.reductions;
    return ar.values.front();
  }

  double scalar(double v) const { return round_to(scalar_format(opt_.mode), v); }
  std::uint64_t total_cycles() const { return res_.spmv_cycles + res_.reduce_cycles + res_.local_cycles; }

  std::vector<double> current_x() const { return ds_.gather(x_); }

  void stop(SolveStatus s, int iter, std::string msg) {
    res_.status = s;
    res_.stop_iter = iter;
    res_.message = std::move(msg);
  }

  const StencilSystem& sys_;
  const SolverOptions& opt_;
  DistributedSystem ds_;
  ReduceRoute route_;
  MemoryTensor r0_, p_, r_, s_, y_, x_;
  double bnorm_ = 0.0;
  SolveResult res_;
};

SolveResult Solver::run() {
  const auto fail = [&](int iter, const char* what, double v) {
    std::ostringstream m;
    m << what << " = " << v << " at iteration " << iter;
    return m.str();
  };

  if (bnorm_ == 0.0) {
    res_.x = current_x();
    stop(SolveStatus::Converged, 0, "zero right-hand side");
    return res_;
  }

  double rho = scalar(reduce({{&r0_, &r_}}, 0).front());
  double rnorm = bnorm_;
  for (int it = 1; it <= opt_.max_iters; ++it) {
    ConvergenceRecord rec;
    rec.iter = it;
    rec.scalars.rho = rho;
    if (!std::isfinite(rho)) {
      stop(SolveStatus::Diverged, it, fail(it, "(r0,r)", rho));
      break;
    }

    spmv(p_, s_);
    const double r0s = scalar(reduce({{&r0_, &s_}}, 1).front());
    if (!std::isfinite(r0s)) {
      stop(SolveStatus::Diverged, it, fail(it, "(r0,s)", r0s));
      break;
    }
    if (negligible(rho, bnorm_ * rnorm)) {
      stop(SolveStatus::Breakdown, it, fail(it, "(r0,r)", rho));
      break;
    }
    if (negligible(r0s, rho)) {
      stop(SolveStatus::Breakdown, it, fail(it, "(r0,s)", r0s));
      break;
    }
    const double alpha = scalar(rho / r0s);
    rec.scalars.alpha = alpha;

    axpy(r_, -alpha, s_);  // r now holds q
    spmv(r_, y_);
    double qy, yy;
    if (opt_.fused_reduce) {
      const auto v = reduce({{&r_, &y_}, {&y_, &y_}}, 2);
      qy = scalar(v[0]);
      yy = scalar(v[1]);
    } else {
      qy = scalar(reduce({{&r_, &y_}}, 1).front());
      yy = scalar(reduce({{&y_, &y_}}, 1).front());
    }
    if (!std::isfinite(qy) || !std::isfinite(yy)) {
      stop(SolveStatus::Diverged, it, fail(it, "(y,y)", yy));
      break;
    }
    if (negligible(yy, qy)) {
      // q is (numerically) zero: x + alpha p may already solve the system
      axpy(x_, alpha, p_);
      rec.residual = true_residual(sys_, current_x());
      rec.cycles = total_cycles();
      res_.records.push_back(rec);
      if (rec.residual <= opt_.tol) {
        stop(SolveStatus::Converged, it, "converged with q = 0");
      } else {
        stop(SolveStatus::Breakdown, it, fail(it, "(y,y)", yy));
      }
      res_.x = current_x();
      res_.cycles = total_cycles();
      res_.peak_memory = ds_.fabric().peak_memory();
      return res_;
    }
    const double omega = scalar(qy / yy);
    rec.scalars.omega = omega;

    axpy(x_, alpha, p_);
    axpy(x_, omega, r_);
    axpy(r_, -omega, y_);  // r now holds r+
    const auto v = reduce({{&r0_, &r_}, {&r_, &r_}}, 1);
    const double rho_next = scalar(v[0]);
    const double rr = scalar(v[1]);

    rnorm = std::sqrt(std::fabs(rr));
    rec.recurrence = rnorm / bnorm_;
    rec.residual = true_residual(sys_, current_x());
    rec.cycles = total_cycles();

    if (!std::isfinite(rec.residual) || !std::isfinite(rr)) {
      res_.records.push_back(rec);
      stop(SolveStatus::Diverged, it, fail(it, "residual", rec.residual));
      break;
    }
    if (rec.recurrence <= opt_.tol && rec.residual <= opt_.tol) {
      res_.records.push_back(rec);
      stop(SolveStatus::Converged, it, "converged");
      break;
    }
    if (negligible(omega, 1.0)) {
      res_.records.push_back(rec);
      stop(SolveStatus::Breakdown, it, fail(it, "omega", omega));
      break;
    }
    const double beta = scalar(scalar(alpha / omega) * scalar(rho_next / rho));
    rec.scalars.beta = beta;
    res_.records.push_back(rec);

    axpy(p_, -omega, s_);
    xpay(p_, beta, r_);
    rho = rho_next;
    if (it == opt_.max_iters) stop(SolveStatus::MaxIterations, it, "iteration limit reached");
  }
  if (opt_.max_iters <= 0) stop(SolveStatus::MaxIterations, 0, "iteration limit reached");
  res_.x = current_x();
  res_.cycles = total_cycles();
  res_.peak_memory = ds_.fabric().peak_memory();
  return res_;
}

}  // namespace

SolveResult bicgstab_solve(const StencilSystem& sys, const SolverOptions& opt) {
  if (!(opt.tol > 0.0)) throw std::invalid_argument("tol must be positive");
  if (!sys.dims.valid()) throw InfeasibleProblem("dims must be at least 1x1x1, got " + sys.dims.str());
  const MemoryReport model = memory_footprint(sys.dims.z, opt.fabric.memory_per_tile);
  if (!model.feasible) throw InfeasibleProblem("Z = " + std::to_string(sys.dims.z) + " needs " + model.str());
  try {
    Solver s(sys, opt);
    return s.run();
  } catch (const MemoryBudgetExceeded& e) {
    // the solver keeps six vectors resident, two more than the model counts
    throw InfeasibleProblem(std::string("solver vectors do not fit: ") + e.what());
  }
}

void write_residual_csv(std::ostream& out, const std::vector<ConvergenceRecord>& records, Precision mode) {
  out << kResidualCsvHeader << '\n' << "iter,residual,cycles,mode\n";
  char buf[64];
  for (const auto& r : records) {
    std::snprintf(buf, sizeof buf, "%.17g", r.residual);
    out << r.iter << ',' << buf << ',' << r.cycles << ',' << to_string(mode) << '\n';
  }
}

}  // namespace wse
