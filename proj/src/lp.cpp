#include "auctioncert/lp.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace auctioncert::lp {

int LinearProgram::add_variable(double lo, double hi, double obj) {
  if (lo > hi) throw std::invalid_argument("lp: variable lower bound above upper bound");
  objective.push_back(obj);
  lower.push_back(lo);
  upper.push_back(hi);
  return static_cast<int>(objective.size()) - 1;
}

void LinearProgram::add_constraint(std::vector<std::pair<int, double>> coeffs, Relation rel,
                                   double b) {
  for (const auto& [idx, val] : coeffs) {
    if (idx < 0 || idx >= num_vars()) throw std::invalid_argument("lp: row references unknown variable");
    (void)val;
  }
  rows.push_back(std::move(coeffs));
  relations.push_back(rel);
  rhs.push_back(b);
}

namespace {

struct Tableau {
  int n_user = 0;   // user variables
  int n0 = 0;       // user + slack variables
  int n = 0;        // + artificials
  int m = 0;
  Eigen::MatrixXd A;          // m x n
  Eigen::VectorXd b;
  Eigen::VectorXd lo, hi;     // per column
  Eigen::VectorXd cost;       // phase II internal cost (min sense)
  std::vector<VarStatus> status;
  std::vector<int> basis;     // m entries, column index per row
  Eigen::MatrixXd binv;       // m x m
  Eigen::VectorXd x;          // current values, all columns
  int pivots = 0;
  int since_refactor = 0;
};

double bound_value(const Tableau& t, int j) {
  switch (t.status[j]) {
    case VarStatus::AtLower: return t.lo[j];
    case VarStatus::AtUpper: return t.hi[j];
    case VarStatus::Free: return 0.0;
    case VarStatus::Basic: break;
  }
  return t.x[j];
}

void refactorize(Tableau& t) {
  Eigen::MatrixXd B(t.m, t.m);
  for (int r = 0; r < t.m; ++r) B.col(r) = t.A.col(t.basis[r]);
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(B);
  // A basis extracted from a valid pivot sequence stays invertible; a
  // degenerate factorization here means accumulated floating point damage.
  double det_min = std::abs(lu.matrixLU().diagonal().cwiseAbs().minCoeff());
  if (!(det_min > 1e-13)) {
    throw std::runtime_error("lp: basis matrix numerically singular (min |U_ii| = " +
                             std::to_string(det_min) + ")");
  }
  t.binv = lu.inverse();
  // Recompute basic values from the nonbasic assignment to purge drift.
  Eigen::VectorXd rhs = t.b;
  for (int j = 0; j < t.n; ++j) {
    if (t.status[j] == VarStatus::Basic) continue;
    double v = bound_value(t, j);
    t.x[j] = v;
    if (v != 0.0) rhs -= t.A.col(j) * v;
  }
  Eigen::VectorXd xb = t.binv * rhs;
  for (int r = 0; r < t.m; ++r) t.x[t.basis[r]] = xb[r];
  t.since_refactor = 0;
}

// One bounded-variable primal simplex run over the current cost vector.
// Returns true when optimal, false when unbounded.
bool run_simplex(Tableau& t, const Eigen::VectorXd& cost, const SimplexSolver::Options& opts,
                 int* iterations) {
  int degenerate_streak = 0;
  bool bland = false;

  while (true) {
    if (*iterations >= opts.max_iterations) {
      throw std::runtime_error("lp: iteration limit reached (" + std::to_string(*iterations) +
                               " pivots, " + std::to_string(t.m) + " rows)");
    }

    // Reduced costs d_j = c_j - y . A_j with y = B^-T c_B.
    Eigen::VectorXd cb(t.m);
    for (int r = 0; r < t.m; ++r) cb[r] = cost[t.basis[r]];
    Eigen::VectorXd y = t.binv.transpose() * cb;

    int entering = -1;
    int direction = 0;  // +1 increase, -1 decrease
    double best_score = opts.pivot_tol;
    for (int j = 0; j < t.n; ++j) {
      if (t.status[j] == VarStatus::Basic) continue;
      if (t.lo[j] == t.hi[j] && t.status[j] != VarStatus::Free) continue;  // fixed
      double d = cost[j] - y.dot(t.A.col(j));
      int dir = 0;
      if ((t.status[j] == VarStatus::AtLower || t.status[j] == VarStatus::Free) && d < -opts.pivot_tol)
        dir = +1;
      else if ((t.status[j] == VarStatus::AtUpper || t.status[j] == VarStatus::Free) && d > opts.pivot_tol)
        dir = -1;
      if (dir == 0) continue;
      if (bland) {
        entering = j;
        direction = dir;
        break;
      }
      if (std::abs(d) > best_score) {
        best_score = std::abs(d);
        entering = j;
        direction = dir;
      }
    }
    if (entering < 0) return true;  // optimal for this cost

    Eigen::VectorXd col = t.binv * t.A.col(entering);

    // Ratio test: largest step the entering variable can take.
    double step = kInf;
    int leaving_row = -1;      // -1 with finite step => bound flip
    double leaving_pivot = 0.0;
    if (std::isfinite(t.lo[entering]) && std::isfinite(t.hi[entering]))
      step = t.hi[entering] - t.lo[entering];

    for (int r = 0; r < t.m; ++r) {
      double g = direction * col[r];
      if (g > opts.pivot_tol) {
        if (!std::isfinite(t.lo[t.basis[r]])) continue;
        double s = (t.x[t.basis[r]] - t.lo[t.basis[r]]) / g;
        if (s < -opts.feas_tol) s = 0.0;
        s = std::max(s, 0.0);
        if (s < step - opts.pivot_tol ||
            (s < step + opts.pivot_tol &&
             (leaving_row < 0 || std::abs(g) > std::abs(leaving_pivot) + 1e-12 ||
              (std::abs(std::abs(g) - std::abs(leaving_pivot)) <= 1e-12 &&
               t.basis[r] < t.basis[leaving_row])))) {
          if (s < step) step = s;
          leaving_row = r;
          leaving_pivot = g;
        }
      } else if (g < -opts.pivot_tol) {
        if (!std::isfinite(t.hi[t.basis[r]])) continue;
        double s = (t.hi[t.basis[r]] - t.x[t.basis[r]]) / (-g);
        if (s < -opts.feas_tol) s = 0.0;
        s = std::max(s, 0.0);
        if (s < step - opts.pivot_tol ||
            (s < step + opts.pivot_tol &&
             (leaving_row < 0 || std::abs(g) > std::abs(leaving_pivot) + 1e-12 ||
              (std::abs(std::abs(g) - std::abs(leaving_pivot)) <= 1e-12 &&
               t.basis[r] < t.basis[leaving_row])))) {
          if (s < step) step = s;
          leaving_row = r;
          leaving_pivot = g;
        }
      }
    }

    if (bland && leaving_row >= 0) {
      // Bland's rule: among rows achieving the minimal step, leave the one
      // with the smallest variable index.
      double min_step = step;
      int pick = -1;
      for (int r = 0; r < t.m; ++r) {
        double g = direction * col[r];
        double s;
        if (g > opts.pivot_tol && std::isfinite(t.lo[t.basis[r]]))
          s = std::max(0.0, (t.x[t.basis[r]] - t.lo[t.basis[r]]) / g);
        else if (g < -opts.pivot_tol && std::isfinite(t.hi[t.basis[r]]))
          s = std::max(0.0, (t.hi[t.basis[r]] - t.x[t.basis[r]]) / (-g));
        else
          continue;
        if (s <= min_step + opts.pivot_tol && (pick < 0 || t.basis[r] < t.basis[pick])) pick = r;
      }
      if (pick >= 0) {
        leaving_row = pick;
        leaving_pivot = direction * col[pick];
      }
    }

    if (!std::isfinite(step) && leaving_row < 0) return false;  // unbounded ray

    ++*iterations;
    ++t.pivots;
    if (step < 1e-10) {
      if (++degenerate_streak > opts.degeneracy_threshold) bland = true;
    } else {
      degenerate_streak = 0;
      bland = false;
    }

    if (leaving_row < 0) {
      // Bound flip: entering variable crosses to its other bound.
      t.x[entering] = (direction > 0) ? t.hi[entering] : t.lo[entering];
      t.status[entering] = (direction > 0) ? VarStatus::AtUpper : VarStatus::AtLower;
      for (int r = 0; r < t.m; ++r) t.x[t.basis[r]] -= direction * col[r] * step;
      continue;
    }

    int leaving = t.basis[leaving_row];
    // Update values.
    t.x[entering] = bound_value(t, entering) + direction * step;
    for (int r = 0; r < t.m; ++r)
      if (r != leaving_row) t.x[t.basis[r]] -= direction * col[r] * step;
    // Leaving variable lands on the bound it hit.
    t.x[leaving] = (direction * col[leaving_row] > 0) ? t.lo[leaving] : t.hi[leaving];
    t.status[leaving] = (direction * col[leaving_row] > 0) ? VarStatus::AtLower : VarStatus::AtUpper;
    t.status[entering] = VarStatus::Basic;
    t.basis[leaving_row] = entering;

    // binv <- E * binv with the eta column derived from `col`.
    double piv = col[leaving_row];
    if (std::abs(piv) < 1e-12)
      throw std::runtime_error("lp: pivot element vanished (|pivot| = " + std::to_string(std::abs(piv)) + ")");
    t.binv.row(leaving_row) /= piv;
    for (int r = 0; r < t.m; ++r) {
      if (r == leaving_row) continue;
      double f = col[r];
      if (f != 0.0) t.binv.row(r) -= f * t.binv.row(leaving_row);
    }
    if (++t.since_refactor >= opts.refactor_period) refactorize(t);
  }
}

}  // namespace

LpSolution SimplexSolver::solve(const LinearProgram& lp, const std::vector<VarStatus>* hint) const {
  const int nu = lp.num_vars();
  const int m = lp.num_rows();

  LpSolution sol;

  // No constraints: optimize each variable against its own bounds.
  if (m == 0) {
    sol.primal = Eigen::VectorXd::Zero(nu);
    sol.dual = Eigen::VectorXd(0);
    sol.basis.assign(nu, VarStatus::AtLower);
    double obj = 0.0;
    for (int j = 0; j < nu; ++j) {
      double c = lp.objective[j] * (lp.sense == Sense::Maximize ? 1.0 : -1.0);
      double v;
      if (c > 0) {
        if (!std::isfinite(lp.upper[j])) { sol.status = LpStatus::Unbounded; sol.objective = lp.sense == Sense::Maximize ? kInf : -kInf; return sol; }
        v = lp.upper[j];
        sol.basis[j] = VarStatus::AtUpper;
      } else if (c < 0) {
        if (!std::isfinite(lp.lower[j])) { sol.status = LpStatus::Unbounded; sol.objective = lp.sense == Sense::Maximize ? kInf : -kInf; return sol; }
        v = lp.lower[j];
      } else {
        v = std::isfinite(lp.lower[j]) ? lp.lower[j] : (std::isfinite(lp.upper[j]) ? lp.upper[j] : 0.0);
        sol.basis[j] = std::isfinite(lp.lower[j]) ? VarStatus::AtLower
                       : (std::isfinite(lp.upper[j]) ? VarStatus::AtUpper : VarStatus::Free);
      }
      sol.primal[j] = v;
      obj += lp.objective[j] * v;
    }
    sol.status = LpStatus::Optimal;
    sol.objective = obj;
    return sol;
  }

  Tableau t;
  t.n_user = nu;
  t.n0 = nu + m;
  t.n = t.n0;
  t.m = m;
  t.A = Eigen::MatrixXd::Zero(m, t.n0);
  t.b = Eigen::VectorXd::Zero(m);
  t.lo = Eigen::VectorXd::Zero(t.n0);
  t.hi = Eigen::VectorXd::Zero(t.n0);
  t.cost = Eigen::VectorXd::Zero(t.n0);
  for (int j = 0; j < nu; ++j) {
    t.lo[j] = lp.lower[j];
    t.hi[j] = lp.upper[j];
    t.cost[j] = lp.objective[j] * (lp.sense == Sense::Maximize ? -1.0 : 1.0);
  }
  for (int i = 0; i < m; ++i) {
    for (const auto& [idx, val] : lp.rows[i]) t.A(i, idx) += val;
    int s = nu + i;
    t.A(i, s) = 1.0;
    t.b[i] = lp.rhs[i];
    switch (lp.relations[i]) {
      case Relation::LessEqual: t.lo[s] = 0.0; t.hi[s] = kInf; break;
      case Relation::Equal: t.lo[s] = 0.0; t.hi[s] = 0.0; break;
      case Relation::GreaterEqual: t.lo[s] = -kInf; t.hi[s] = 0.0; break;
    }
  }

  t.status.assign(t.n0, VarStatus::AtLower);
  t.x = Eigen::VectorXd::Zero(t.n0);
  t.basis.resize(m);

  int iterations = 0;
  bool warm = false;

  if (hint && static_cast<int>(hint->size()) == t.n0) {
    // Try the hinted basis: validate counts, factorize, check feasibility.
    std::vector<int> basis;
    basis.reserve(m);
    std::vector<VarStatus> status(t.n0);
    for (int j = 0; j < t.n0; ++j) {
      VarStatus st = (*hint)[j];
      if (st == VarStatus::AtLower && !std::isfinite(t.lo[j]))
        st = std::isfinite(t.hi[j]) ? VarStatus::AtUpper : VarStatus::Free;
      if (st == VarStatus::AtUpper && !std::isfinite(t.hi[j]))
        st = std::isfinite(t.lo[j]) ? VarStatus::AtLower : VarStatus::Free;
      status[j] = st;
      if (st == VarStatus::Basic) basis.push_back(j);
    }
    if (static_cast<int>(basis.size()) == m) {
      Tableau probe = t;
      probe.status = status;
      probe.basis = basis;
      try {
        refactorize(probe);
        bool feasible = true;
        for (int r = 0; r < m && feasible; ++r) {
          int j = probe.basis[r];
          if (probe.x[j] < probe.lo[j] - 10 * opts_.feas_tol ||
              probe.x[j] > probe.hi[j] + 10 * opts_.feas_tol)
            feasible = false;
        }
        if (feasible) {
          t = std::move(probe);
          warm = true;
        }
      } catch (const std::runtime_error&) {
        warm = false;
      }
    }
  }

  if (!warm) {
    // Cold start: structural variables at their nearest finite bound, slack
    // basis; rows whose slack value violates its own bounds get an artificial.
    for (int j = 0; j < nu; ++j) {
      if (std::isfinite(t.lo[j])) t.status[j] = VarStatus::AtLower;
      else if (std::isfinite(t.hi[j])) t.status[j] = VarStatus::AtUpper;
      else t.status[j] = VarStatus::Free;
      t.x[j] = bound_value(t, j);
    }
    Eigen::VectorXd residual = t.b;
    for (int j = 0; j < nu; ++j)
      if (t.x[j] != 0.0) residual -= t.A.col(j) * t.x[j];

    std::vector<int> artificial_rows;
    for (int i = 0; i < m; ++i) {
      int s = nu + i;
      double v = residual[i];  // slack value if basic
      if (v >= t.lo[s] - opts_.feas_tol && v <= t.hi[s] + opts_.feas_tol) {
        t.basis[i] = s;
        t.status[s] = VarStatus::Basic;
        t.x[s] = v;
      } else {
        // Slack parked at its nearest bound, artificial carries the gap.
        double sv = (v < t.lo[s]) ? t.lo[s] : t.hi[s];
        t.status[s] = (v < t.lo[s]) ? VarStatus::AtLower : VarStatus::AtUpper;
        t.x[s] = sv;
        artificial_rows.push_back(i);
      }
    }

    if (!artificial_rows.empty()) {
      int na = static_cast<int>(artificial_rows.size());
      t.A.conservativeResize(Eigen::NoChange, t.n0 + na);
      t.A.rightCols(na).setZero();
      t.lo.conservativeResize(t.n0 + na);
      t.hi.conservativeResize(t.n0 + na);
      t.cost.conservativeResize(t.n0 + na);
      t.x.conservativeResize(t.n0 + na);
      t.status.resize(t.n0 + na, VarStatus::AtLower);
      Eigen::VectorXd phase1_cost = Eigen::VectorXd::Zero(t.n0 + na);
      for (int a = 0; a < na; ++a) {
        int i = artificial_rows[a];
        int col = t.n0 + a;
        double gap = t.b[i];
        for (int j = 0; j < t.n0; ++j)
          if (t.status[j] != VarStatus::Basic && t.x[j] != 0.0) gap -= t.A(i, j) * t.x[j];
        t.A(i, col) = (gap >= 0) ? 1.0 : -1.0;
        t.lo[col] = 0.0;
        t.hi[col] = kInf;
        t.cost[col] = 0.0;
        t.x[col] = std::abs(gap);
        t.status[col] = VarStatus::Basic;
        t.basis[i] = col;
        phase1_cost[col] = 1.0;
      }
      t.n = t.n0 + na;
      refactorize(t);

      if (!run_simplex(t, phase1_cost, opts_, &iterations))
        throw std::runtime_error("lp: phase I reported unbounded, which cannot happen");
      double infeas = 0.0;
      for (int a = 0; a < na; ++a) infeas += t.x[t.n0 + a];
      if (infeas > opts_.feas_tol) {
        sol.status = LpStatus::Infeasible;
        sol.iterations = iterations;
        return sol;
      }
      // Pin artificials at zero; basic leftovers sit harmlessly at 0.
      for (int a = 0; a < na; ++a) {
        int col = t.n0 + a;
        t.lo[col] = 0.0;
        t.hi[col] = 0.0;
        if (t.status[col] != VarStatus::Basic) {
          t.status[col] = VarStatus::AtLower;
          t.x[col] = 0.0;
        }
      }
    } else {
      refactorize(t);
    }
  }

  Eigen::VectorXd phase2_cost = Eigen::VectorXd::Zero(t.n);
  phase2_cost.head(t.n0) = t.cost.head(t.n0);
  bool optimal = run_simplex(t, phase2_cost, opts_, &iterations);
  if (!optimal) {
    sol.status = LpStatus::Unbounded;
    sol.objective = (lp.sense == Sense::Maximize) ? kInf : -kInf;
    sol.iterations = iterations;
    return sol;
  }
  refactorize(t);  // clean values for extraction

  sol.status = LpStatus::Optimal;
  sol.primal = t.x.head(nu);
  double internal_obj = 0.0;
  for (int j = 0; j < nu; ++j) internal_obj += t.cost[j] * t.x[j];
  sol.objective = (lp.sense == Sense::Maximize) ? -internal_obj : internal_obj;

  Eigen::VectorXd cb(m);
  for (int r = 0; r < m; ++r) cb[r] = phase2_cost[t.basis[r]];
  Eigen::VectorXd y = t.binv.transpose() * cb;
  sol.dual = (lp.sense == Sense::Maximize) ? Eigen::VectorXd(-y) : y;

  sol.basis.assign(t.status.begin(), t.status.begin() + t.n0);
  sol.iterations = iterations;
  return sol;
}

std::string dump(const LinearProgram& lp) {
  std::ostringstream os;
  os.precision(17);
  auto expr = [&](const std::vector<std::pair<int, double>>& row) {
    std::ostringstream e;
    e.precision(17);
    bool first = true;
    for (const auto& [idx, val] : row) {
      if (val == 0.0) continue;
      if (first) {
        e << val << " x" << idx;
        first = false;
      } else {
        e << (val >= 0 ? " + " : " - ") << std::abs(val) << " x" << idx;
      }
    }
    if (first) e << "0";
    return e.str();
  };
  std::vector<std::pair<int, double>> obj;
  for (int j = 0; j < lp.num_vars(); ++j)
    if (lp.objective[j] != 0.0) obj.emplace_back(j, lp.objective[j]);
  os << (lp.sense == Sense::Maximize ? "max" : "min") << ": " << expr(obj) << ";\n";
  for (int i = 0; i < lp.num_rows(); ++i) {
    const char* rel = lp.relations[i] == Relation::LessEqual   ? "<="
                      : lp.relations[i] == Relation::Equal     ? "="
                                                               : ">=";
    os << "r" << i << ": " << expr(lp.rows[i]) << " " << rel << " " << lp.rhs[i] << ";\n";
  }
  for (int j = 0; j < lp.num_vars(); ++j)
    os << lp.lower[j] << " <= x" << j << " <= " << lp.upper[j] << ";\n";
  return os.str();
}

}  // namespace auctioncert::lp
