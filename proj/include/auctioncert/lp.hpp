#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <limits>
#include <string>
#include <utility>
#include <vector>

namespace auctioncert::lp {

constexpr double kInf = std::numeric_limits<double>::infinity();

enum class Relation { LessEqual, Equal, GreaterEqual };
enum class Sense { Maximize, Minimize };

enum class LpStatus { Optimal, Infeasible, Unbounded };

// Where a variable sits in a simplex basis snapshot. Used for warm starts.
enum class VarStatus : std::uint8_t { Basic, AtLower, AtUpper, Free };

struct LinearProgram {
  Sense sense = Sense::Maximize;
  std::vector<double> objective;                    // one entry per variable
  std::vector<double> lower, upper;                 // +-kInf allowed
  std::vector<std::vector<std::pair<int, double>>> rows;  // sparse coefficient lists
  std::vector<Relation> relations;
  std::vector<double> rhs;

  int add_variable(double lo, double hi, double obj = 0.0);
  // Coefficients may list a variable at most once and must reference
  // variables that already exist.
  void add_constraint(std::vector<std::pair<int, double>> coeffs, Relation rel, double b);
  void set_objective(int var, double coeff) { objective.at(var) = coeff; }

  int num_vars() const { return static_cast<int>(objective.size()); }
  int num_rows() const { return static_cast<int>(rhs.size()); }
};

struct LpSolution {
  LpStatus status = LpStatus::Infeasible;
  double objective = 0.0;                 // in the user's sense
  Eigen::VectorXd primal;                 // one entry per variable
  Eigen::VectorXd dual;                   // one entry per constraint, d obj / d rhs
  std::vector<VarStatus> basis;           // snapshot usable as a warm-start hint
  int iterations = 0;
};

struct LpError {
  std::string message;
};

class SimplexSolver {
 public:
  struct Options {
    double pivot_tol = 1e-9;
    double feas_tol = 1e-7;
    int max_iterations = 50000;
    int degeneracy_threshold = 200;  // consecutive degenerate pivots before Bland's rule
    int refactor_period = 64;
  };

  SimplexSolver() : opts_(Options()) {}
  explicit SimplexSolver(const Options& opts) : opts_(opts) {}

  // Solves the LP. `hint` (from a previous solution's basis) is optional; it
  // is validated and silently discarded when stale or infeasible.
  LpSolution solve(const LinearProgram& lp, const std::vector<VarStatus>* hint = nullptr) const;

  const Options& options() const { return opts_; }

 private:
  Options opts_;
};

// Human-readable dump. Grammar (one item per line, `;`-terminated):
//   objective:  ("max" | "min") ":" linear_expr ";"
//   constraint: NAME ":" linear_expr ("<=" | "=" | ">=") NUMBER ";"
//   bound:      NUMBER "<=" VAR "<=" NUMBER ";"      (inf allowed)
//   linear_expr: [SIGN] NUMBER VAR { SIGN NUMBER VAR }
// Variables are named x0, x1, ... and constraints r0, r1, ...
std::string dump(const LinearProgram& lp);

}  // namespace auctioncert::lp
