#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <boost/multiprecision/cpp_int.hpp>
#include <cmath>
#include <vector>

#include "auctioncert/lp.hpp"
#include "auctioncert/rng.hpp"

using namespace auctioncert;
using lp::LinearProgram;
using lp::LpSolution;
using lp::LpStatus;
using lp::Relation;
using lp::Sense;
using lp::SimplexSolver;

namespace {

using Rational = boost::multiprecision::cpp_rational;

// Exact vertex enumeration for max c'x over {Ax <= b, 0 <= x <= ub}: every
// optimum of a bounded feasible LP sits on a vertex, i.e. an intersection of
// n active constraint hyperplanes.
double vertex_enumeration_oracle(const std::vector<std::vector<long>>& A,
                                 const std::vector<long>& b, const std::vector<long>& ub,
                                 const std::vector<long>& c, bool* feasible) {
  const int n = static_cast<int>(ub.size());
  const int m = static_cast<int>(b.size());
  // Halfspaces: rows (a.x <= b), bounds (x_j >= 0 as -x_j <= 0, x_j <= ub_j).
  std::vector<std::vector<Rational>> H;
  std::vector<Rational> h;
  for (int i = 0; i < m; ++i) {
    std::vector<Rational> row(n);
    for (int j = 0; j < n; ++j) row[j] = A[i][j];
    H.push_back(row);
    h.push_back(b[i]);
  }
  for (int j = 0; j < n; ++j) {
    std::vector<Rational> row(n, Rational(0));
    row[j] = -1;
    H.push_back(row);
    h.push_back(Rational(0));
    row[j] = 1;
    H.push_back(row);
    h.push_back(ub[j]);
  }
  const int total = static_cast<int>(H.size());

  bool any = false;
  Rational best = 0;
  std::vector<int> idx(n);
  // iterate over all n-subsets of the halfspace boundaries
  std::vector<int> comb(n);
  for (int i = 0; i < n; ++i) comb[i] = i;
  auto advance = [&]() {
    int i = n - 1;
    while (i >= 0 && comb[i] == total - n + i) --i;
    if (i < 0) return false;
    ++comb[i];
    for (int j = i + 1; j < n; ++j) comb[j] = comb[j - 1] + 1;
    return true;
  };
  do {
    // Solve the n x n system with exact Gaussian elimination.
    std::vector<std::vector<Rational>> M(n, std::vector<Rational>(n + 1));
    for (int r = 0; r < n; ++r) {
      for (int j = 0; j < n; ++j) M[r][j] = H[comb[r]][j];
      M[r][n] = h[comb[r]];
    }
    bool singular = false;
    for (int col = 0; col < n && !singular; ++col) {
      int pivot = -1;
      for (int r = col; r < n; ++r)
        if (M[r][col] != 0) {
          pivot = r;
          break;
        }
      if (pivot < 0) {
        singular = true;
        break;
      }
      std::swap(M[col], M[pivot]);
      for (int r = 0; r < n; ++r) {
        if (r == col || M[r][col] == 0) continue;
        Rational f = M[r][col] / M[col][col];
        for (int j = col; j <= n; ++j) M[r][j] -= f * M[col][j];
      }
    }
    if (singular) continue;
    std::vector<Rational> x(n);
    for (int j = 0; j < n; ++j) x[j] = M[j][n] / M[j][j];
    // exact feasibility of all halfspaces
    bool ok = true;
    for (int i = 0; i < total && ok; ++i) {
      Rational lhs = 0;
      for (int j = 0; j < n; ++j) lhs += H[i][j] * x[j];
      if (lhs > h[i]) ok = false;
    }
    if (!ok) continue;
    Rational obj = 0;
    for (int j = 0; j < n; ++j) obj += Rational(c[j]) * x[j];
    if (!any || obj > best) {
      best = obj;
      any = true;
    }
  } while (advance());

  *feasible = any;
  return any ? best.convert_to<double>() : 0.0;
}

}  // namespace

TEST_CASE("single variable box") {
  LinearProgram p;
  int x = p.add_variable(0.0, lp::kInf, 1.0);
  p.add_constraint({{x, 1.0}}, Relation::LessEqual, 3.0);
  LpSolution s = SimplexSolver().solve(p);
  REQUIRE(s.status == LpStatus::Optimal);
  CHECK(s.objective == doctest::Approx(3.0).epsilon(1e-9));
  CHECK(s.primal[x] == doctest::Approx(3.0));
}

TEST_CASE("two variables, shared budget") {
  LinearProgram p;
  int x = p.add_variable(0.0, 1.0, 1.0);
  int y = p.add_variable(0.0, 1.0, 1.0);
  p.add_constraint({{x, 1.0}, {y, 1.0}}, Relation::LessEqual, 1.0);
  LpSolution s = SimplexSolver().solve(p);
  REQUIRE(s.status == LpStatus::Optimal);
  CHECK(s.objective == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("infeasible and unbounded detection") {
  LinearProgram p;
  int x = p.add_variable(0.0, lp::kInf, 1.0);
  p.add_constraint({{x, 1.0}}, Relation::GreaterEqual, 2.0);
  p.add_constraint({{x, 1.0}}, Relation::LessEqual, 1.0);
  CHECK(SimplexSolver().solve(p).status == LpStatus::Infeasible);

  LinearProgram q;
  int y = q.add_variable(0.0, lp::kInf, 1.0);
  q.add_constraint({{y, -1.0}}, Relation::LessEqual, 0.0);
  CHECK(SimplexSolver().solve(q).status == LpStatus::Unbounded);
}

TEST_CASE("equality rows and negative bounds") {
  // max -x + 2y  s.t.  x + y = 2, x - y >= -1, x in [-3, 3], y in [-3, 3]
  LinearProgram p;
  int x = p.add_variable(-3.0, 3.0, -1.0);
  int y = p.add_variable(-3.0, 3.0, 2.0);
  p.add_constraint({{x, 1.0}, {y, 1.0}}, Relation::Equal, 2.0);
  p.add_constraint({{x, 1.0}, {y, -1.0}}, Relation::GreaterEqual, -1.0);
  LpSolution s = SimplexSolver().solve(p);
  REQUIRE(s.status == LpStatus::Optimal);
  // optimum at x - y = -1, x + y = 2 -> x = 0.5, y = 1.5
  CHECK(s.primal[x] == doctest::Approx(0.5).epsilon(1e-8));
  CHECK(s.primal[y] == doctest::Approx(1.5).epsilon(1e-8));
  CHECK(s.objective == doctest::Approx(2.5).epsilon(1e-8));
}

TEST_CASE("minimize sense") {
  LinearProgram p;
  p.sense = Sense::Minimize;
  int x = p.add_variable(0.0, 10.0, 1.0);
  int y = p.add_variable(0.0, 10.0, 1.0);
  p.add_constraint({{x, 1.0}, {y, 2.0}}, Relation::GreaterEqual, 4.0);
  LpSolution s = SimplexSolver().solve(p);
  REQUIRE(s.status == LpStatus::Optimal);
  CHECK(s.objective == doctest::Approx(2.0).epsilon(1e-8));  // y = 2
}

TEST_CASE("random LPs match the rational vertex-enumeration oracle") {
  Rng rng(20240901);
  SimplexSolver solver;
  int solved = 0;
  for (int inst = 0; inst < 50; ++inst) {
    const int n = 2 + static_cast<int>(rng.below(3));  // 2..4 vars
    const int m = 1 + static_cast<int>(rng.below(5));  // 1..5 rows
    std::vector<std::vector<long>> A(m, std::vector<long>(n));
    std::vector<long> b(m), ub(n), c(n);
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < n; ++j) A[i][j] = static_cast<long>(rng.below(9)) - 4;
      b[i] = 1 + static_cast<long>(rng.below(8));  // origin stays feasible
    }
    for (int j = 0; j < n; ++j) {
      ub[j] = 1 + static_cast<long>(rng.below(4));
      c[j] = static_cast<long>(rng.below(11)) - 5;
    }

    bool feasible = false;
    double oracle = vertex_enumeration_oracle(A, b, ub, c, &feasible);
    REQUIRE(feasible);  // origin is always a vertex candidate

    LinearProgram p;
    for (int j = 0; j < n; ++j) p.add_variable(0.0, static_cast<double>(ub[j]), c[j]);
    for (int i = 0; i < m; ++i) {
      std::vector<std::pair<int, double>> row;
      for (int j = 0; j < n; ++j) row.emplace_back(j, static_cast<double>(A[i][j]));
      p.add_constraint(std::move(row), Relation::LessEqual, static_cast<double>(b[i]));
    }
    LpSolution s = solver.solve(p);
    REQUIRE(s.status == LpStatus::Optimal);
    CHECK(std::abs(s.objective - oracle) <= 1e-6);

    // primal feasibility at the solver tolerance
    for (int i = 0; i < m; ++i) {
      double lhs = 0;
      for (int j = 0; j < n; ++j) lhs += A[i][j] * s.primal[j];
      CHECK(lhs <= b[i] + 1e-7);
    }
    ++solved;
  }
  CHECK(solved == 50);
}

TEST_CASE("weak duality and complementary slackness") {
  Rng rng(77);
  SimplexSolver solver;
  for (int inst = 0; inst < 20; ++inst) {
    const int n = 2 + static_cast<int>(rng.below(3));
    const int m = 1 + static_cast<int>(rng.below(4));
    LinearProgram p;
    for (int j = 0; j < n; ++j)
      p.add_variable(0.0, 1.0 + rng.below(3), static_cast<double>(rng.below(11)) - 5.0);
    std::vector<std::vector<double>> A(m, std::vector<double>(n));
    std::vector<double> b(m);
    for (int i = 0; i < m; ++i) {
      std::vector<std::pair<int, double>> row;
      for (int j = 0; j < n; ++j) {
        A[i][j] = static_cast<double>(rng.below(9)) - 4.0;
        row.emplace_back(j, A[i][j]);
      }
      b[i] = 1.0 + rng.below(8);
      p.add_constraint(std::move(row), Relation::LessEqual, b[i]);
    }
    LpSolution s = solver.solve(p);
    REQUIRE(s.status == LpStatus::Optimal);

    // Lagrangian dual bound with the reported duals.
    double bound = 0.0;
    for (int i = 0; i < m; ++i) bound += s.dual[i] * b[i];
    for (int j = 0; j < n; ++j) {
      double reduced = p.objective[j];
      for (int i = 0; i < m; ++i) reduced -= s.dual[i] * A[i][j];
      if (std::abs(reduced) <= 1e-7) continue;
      bound += std::max(reduced * p.lower[j], reduced * p.upper[j]);
    }
    CHECK(bound >= s.objective - 1e-7);

    // complementary slackness: positive dual => active row
    for (int i = 0; i < m; ++i) {
      double slack = b[i];
      for (int j = 0; j < n; ++j) slack -= A[i][j] * s.primal[j];
      CHECK(std::abs(s.dual[i] * slack) <= 1e-6);
    }
  }
}

TEST_CASE("deterministic pivoting: identical bases across resolves") {
  Rng rng(5150);
  LinearProgram p;
  for (int j = 0; j < 6; ++j) p.add_variable(0.0, 2.0, rng.uniform(-3, 3));
  for (int i = 0; i < 5; ++i) {
    std::vector<std::pair<int, double>> row;
    for (int j = 0; j < 6; ++j) row.emplace_back(j, rng.uniform(-2, 2));
    p.add_constraint(std::move(row), Relation::LessEqual, 2.0 + rng.uniform01());
  }
  SimplexSolver solver;
  LpSolution a = solver.solve(p);
  LpSolution b = solver.solve(p);
  REQUIRE(a.status == LpStatus::Optimal);
  CHECK(a.basis == b.basis);
  for (int j = 0; j < 6; ++j) CHECK(a.primal[j] == b.primal[j]);
}

TEST_CASE("warm start hint reaches the same optimum") {
  LinearProgram p;
  int x = p.add_variable(0.0, 4.0, 3.0);
  int y = p.add_variable(0.0, 4.0, 2.0);
  p.add_constraint({{x, 1.0}, {y, 1.0}}, Relation::LessEqual, 5.0);
  p.add_constraint({{x, 2.0}, {y, 1.0}}, Relation::LessEqual, 8.0);
  SimplexSolver solver;
  LpSolution cold = solver.solve(p);
  REQUIRE(cold.status == LpStatus::Optimal);
  // Perturb the objective and warm start from the previous basis.
  p.objective[x] = 2.5;
  LpSolution warm = solver.solve(p, &cold.basis);
  LpSolution fresh = solver.solve(p);
  REQUIRE(warm.status == LpStatus::Optimal);
  CHECK(warm.objective == doctest::Approx(fresh.objective).epsilon(1e-10));
}

TEST_CASE("degenerate LP terminates (Bland fallback)") {
  // Classic cycling-prone instance (Beale); Dantzig with a degeneracy switch
  // must still terminate at the optimum 0.05.
  LinearProgram p;
  p.sense = Sense::Minimize;
  int x1 = p.add_variable(0.0, lp::kInf, -0.75);
  int x2 = p.add_variable(0.0, lp::kInf, 150.0);
  int x3 = p.add_variable(0.0, lp::kInf, -0.02);
  int x4 = p.add_variable(0.0, lp::kInf, 6.0);
  p.add_constraint({{x1, 0.25}, {x2, -60.0}, {x3, -0.04}, {x4, 9.0}}, Relation::LessEqual, 0.0);
  p.add_constraint({{x1, 0.5}, {x2, -90.0}, {x3, -0.02}, {x4, 3.0}}, Relation::LessEqual, 0.0);
  p.add_constraint({{x3, 1.0}}, Relation::LessEqual, 1.0);
  LpSolution s = SimplexSolver().solve(p);
  REQUIRE(s.status == LpStatus::Optimal);
  CHECK(s.objective == doctest::Approx(-0.05).epsilon(1e-8));
}

TEST_CASE("dump emits the documented grammar") {
  LinearProgram p;
  int x = p.add_variable(0.0, 1.0, 2.0);
  p.add_constraint({{x, 1.0}}, Relation::LessEqual, 0.5);
  std::string text = lp::dump(p);
  CHECK(text.find("max: 2 x0;") != std::string::npos);
  CHECK(text.find("r0: 1 x0 <= 0.5;") != std::string::npos);
  CHECK(text.find("0 <= x0 <= 1;") != std::string::npos);
}
