#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <gmpxx.h>

#include "matchq/error.hpp"

namespace matchq {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

enum class Relation { less_equal, equal, greater_equal };
enum class LpStatus { optimal, infeasible, unbounded, numerical_failure };
enum class Arithmetic { floating, exact };

inline const char* to_string(LpStatus s) {
  switch (s) {
    case LpStatus::optimal: return "optimal";
    case LpStatus::infeasible: return "infeasible";
    case LpStatus::unbounded: return "unbounded";
    case LpStatus::numerical_failure: return "numerical_failure";
  }
  return "unknown";
}

struct LpTerm {
  std::size_t var;
  double coef;
};

// Minimization problem over bounded variables and sparse rows.
struct LinearProgram {
  struct Variable {
    double lower = 0.0;
    double upper = kInf;
    double cost = 0.0;
    std::string name;
    // Expected magnitude of the value; float mode uses it as the column scale.
    double scale = 1.0;
  };
  struct Constraint {
    std::vector<LpTerm> terms;
    Relation rel = Relation::equal;
    double rhs = 0.0;
    std::string name;
  };

  std::vector<Variable> variables;
  std::vector<Constraint> constraints;

  std::size_t num_variables() const { return variables.size(); }
  std::size_t num_constraints() const { return constraints.size(); }

  std::size_t add_variable(double lower = 0.0, double upper = kInf, double cost = 0.0, std::string name = {}) {
    variables.push_back({lower, upper, cost, std::move(name)});
    return variables.size() - 1;
  }

  std::size_t add_constraint(Relation rel, double rhs, std::string name = {}) {
    constraints.push_back({{}, rel, rhs, std::move(name)});
    return constraints.size() - 1;
  }

  std::size_t add_constraint(std::vector<LpTerm> terms, Relation rel, double rhs, std::string name = {}) {
    constraints.push_back({std::move(terms), rel, rhs, std::move(name)});
    return constraints.size() - 1;
  }

  void add_term(std::size_t row, std::size_t var, double coef) {
    if (coef != 0.0) constraints[row].terms.push_back({var, coef});
  }

  std::size_t num_nonzeros() const {
    std::size_t nz = 0;
    for (const auto& c : constraints) nz += c.terms.size();
    return nz;
  }

  void validate() const {
    for (std::size_t j = 0; j < variables.size(); ++j) {
      const auto& v = variables[j];
      if (!std::isfinite(v.cost)) throw InputError("non-finite objective coefficient on variable " + std::to_string(j));
      if (std::isnan(v.lower) || std::isnan(v.upper) || v.lower == kInf || v.upper == -kInf)
        throw InputError("invalid bounds on variable " + std::to_string(j));
    }
    for (std::size_t i = 0; i < constraints.size(); ++i) {
      const auto& c = constraints[i];
      if (!std::isfinite(c.rhs)) throw InputError("non-finite right-hand side in row " + std::to_string(i));
      for (const auto& t : c.terms) {
        if (t.var >= variables.size())
          throw InputError("row " + std::to_string(i) + " references undeclared variable " + std::to_string(t.var));
        if (!std::isfinite(t.coef)) throw InputError("non-finite coefficient in row " + std::to_string(i));
      }
    }
  }

  double row_activity(std::size_t i, const std::vector<double>& x) const {
    double s = 0.0;
    for (const auto& t : constraints[i].terms) s += t.coef * x[t.var];
    return s;
  }
};

struct LpSolution {
  LpStatus status = LpStatus::numerical_failure;
  std::vector<double> primal;
  // Sign convention for minimization: >= rows carry duals >= 0, <= rows duals <= 0,
  // and reduced costs are cost - A^T dual.
  std::vector<double> dual;
  std::vector<double> reduced_cost;
  double objective = 0.0;
  double dual_objective = 0.0;
  double primal_residual = 0.0;
  double complementarity_residual = 0.0;
  std::size_t iterations = 0;

  bool optimal() const { return status == LpStatus::optimal; }
};

struct SimplexOptions {
  std::size_t max_iterations = 0;  // 0 = automatic
  double feasibility_tol = 1e-9;
  double optimality_tol = 1e-9;
  double pivot_tol = 1e-9;
  std::size_t degenerate_streak_for_bland = 50;
  // Float mode: scale columns by Variable::scale instead of equilibrating the matrix.
  bool use_scale_hints = false;
  // Float mode: shift every lower bound down by a random amount of this relative size,
  // solve, then re-verify the final basis on the unshifted problem. 0 disables.
  double perturbation = 0.0;
  // Consecutive degenerate pivots before giving up; 0 = automatic.
  std::size_t max_stall = 0;
};

// Writes the program in CPLEX LP text format.
inline std::string to_lp_format(const LinearProgram& lp) {
  std::ostringstream out;
  out.precision(17);
  auto vname = [&](std::size_t j) {
    return lp.variables[j].name.empty() ? "x" + std::to_string(j) : lp.variables[j].name;
  };
  auto term = [&](double c, std::size_t j) {
    out << (c < 0 ? " - " : " + ") << std::abs(c) << ' ' << vname(j);
  };
  out << "Minimize\n obj:";
  bool any = false;
  for (std::size_t j = 0; j < lp.variables.size(); ++j)
    if (lp.variables[j].cost != 0.0) term(lp.variables[j].cost, j), any = true;
  if (!any) out << " 0 " << (lp.variables.empty() ? "dummy" : vname(0));
  out << "\nSubject To\n";
  for (std::size_t i = 0; i < lp.constraints.size(); ++i) {
    const auto& c = lp.constraints[i];
    out << ' ' << (c.name.empty() ? "r" + std::to_string(i) : c.name) << ':';
    if (c.terms.empty()) out << " 0 " << (lp.variables.empty() ? "dummy" : vname(0));
    for (const auto& t : c.terms) term(t.coef, t.var);
    out << (c.rel == Relation::less_equal ? " <= " : c.rel == Relation::equal ? " = " : " >= ") << c.rhs << '\n';
  }
  out << "Bounds\n";
  for (std::size_t j = 0; j < lp.variables.size(); ++j) {
    const auto& v = lp.variables[j];
    if (v.lower == -kInf && v.upper == kInf) {
      out << ' ' << vname(j) << " free\n";
      continue;
    }
    out << ' ';
    if (v.lower == -kInf) out << "-inf";
    else out << v.lower;
    out << " <= " << vname(j) << " <= ";
    if (v.upper == kInf) out << "+inf";
    else out << v.upper;
    out << '\n';
  }
  out << "End\n";
  return out.str();
}

namespace detail {

template <class S>
struct ScalarTraits {
  static constexpr bool exact = false;
  static double to_double(const S& v) { return static_cast<double>(v); }
  static S from_double(double v) { return S(v); }
  static S abs(const S& v) { return v < 0 ? S(-v) : v; }
};

template <>
struct ScalarTraits<mpq_class> {
  static constexpr bool exact = true;
  static double to_double(const mpq_class& v) { return v.get_d(); }
  static mpq_class from_double(double v) { return mpq_class(v); }
  static mpq_class abs(const mpq_class& v) { return v < 0 ? mpq_class(-v) : v; }
};

template <class S>
bool is_zero(const S& v) {
  return v == S(0);
}

// Two-phase revised simplex on a dense explicit basis inverse.
// Columns: structural, then slack/surplus, then artificial.
template <class S>
class Simplex {
 public:
  using T = ScalarTraits<S>;

  Simplex(const LinearProgram& lp, const SimplexOptions& opt) : lp_(lp), opt_(opt) {
    if (T::exact) opt_.feasibility_tol = opt_.optimality_tol = opt_.pivot_tol = 0.0;
  }

  LpSolution run() {
    LpSolution sol;
    if (!to_standard_form()) {
      sol.status = LpStatus::infeasible;
      return sol;
    }
    const std::size_t limit = opt_.max_iterations ? opt_.max_iterations : 50 * (m_ + ncols_) + 1000;
    max_iter_ = limit;
    max_stall_ = opt_.max_stall ? opt_.max_stall : 20 * m_ + 2000;
    std::vector<S> b_exact;
    if constexpr (!T::exact) {
      if (opt_.perturbation > 0.0) {
        b_exact = b_;
        perturb_rhs(b_exact);
      }
    }
    if (!reinvert()) return fail(sol);

    // Phase 1.
    phase_ = 1;
    set_costs();
    const auto st1 = iterate();
    if (st1 == Step::failure) return fail(sol);
    S infeas(0);
    for (std::size_t r = 0; r < m_; ++r)
      if (is_art_[basis_[r]]) infeas += xb_[r];
    if (T::to_double(infeas) > opt_.feasibility_tol * 10.0 * (1.0 + bmax_)) {
      sol.status = LpStatus::infeasible;
      sol.iterations = iters_;
      return sol;
    }
    drive_out_artificials();

    // Phase 2.
    phase_ = 2;
    set_costs();
    const auto st2 = iterate();
    sol.iterations = iters_;
    if (st2 == Step::failure) return fail(sol);
    if (st2 == Step::unbounded) {
      sol.status = LpStatus::unbounded;
      return sol;
    }
    if constexpr (!T::exact) {
      if (!b_exact.empty()) {
        // The shifted optimum's basis stays dual feasible; keep it if it is primal feasible unshifted.
        b_ = b_exact;
        if (!reinvert()) return fail(sol);
        for (std::size_t r = 0; r < m_; ++r) {
          const double v = T::to_double(xb_[r]);
          if (v < -1e3 * opt_.feasibility_tol || (is_art_[basis_[r]] && v > 1e3 * opt_.feasibility_tol))
            return fail(sol);
          if (v < 0.0) xb_[r] = S(0);
        }
        compute_duals();
        if (iterate() != Step::optimal) return fail(sol);
        sol.iterations = iters_;
      }
      if (!reinvert()) return fail(sol);
    }
    return extract(sol);
  }

 private:
  enum class Step { optimal, unbounded, failure };

  struct VarMap {
    long col = -1;   // primary standard column (x = offset + sign * col)
    long col2 = -1;  // negative part for free variables
    double sign = 1.0;
    double offset = 0.0;
  };

  const LinearProgram& lp_;
  SimplexOptions opt_;
  std::size_t m_ = 0, ncols_ = 0;
  std::vector<std::vector<std::pair<std::uint32_t, S>>> cols_;
  std::vector<char> is_art_;
  std::vector<S> b_, cost2_, cost_;
  std::vector<double> row_scale_, col_scale_, struct_hint_;
  std::vector<int> row_flip_;  // +1 or -1 per standard row
  std::vector<long> orig_row_;  // -1 for bound rows
  std::vector<VarMap> vmap_;
  std::vector<std::size_t> basis_;
  std::vector<long> pos_;  // column -> basis position or -1
  std::vector<S> binv_;    // column-major m x m
  std::vector<S> xb_, y_;
  double bmax_ = 0.0;
  int phase_ = 1;
  std::size_t iters_ = 0, max_iter_ = 0, max_stall_ = 0;
  std::vector<std::size_t> left_at_;
  static constexpr std::size_t kHoldWindow = 20;
  static constexpr double kHeldTol = 1e-7;

  S& binv(std::size_t r, std::size_t c) { return binv_[c * m_ + r]; }

  // b += A xi for a deterministic pseudo-random xi > 0 (a downward shift of every lower
  // bound). Slack shifts keep slack-basic rows positive; other rows are negated when the
  // shift makes them negative so the starting artificials stay feasible.
  void perturb_rhs(std::vector<S>& b_exact) {
    auto draw = [this](std::size_t j) {
      std::uint64_t z = j * 0x9E3779B97F4A7C15ull + 0x632BE59BD9B4E019ull;
      z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
      z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
      z ^= z >> 31;
      return opt_.perturbation * (1.0 + static_cast<double>(z >> 11) * 0x1.0p-53);
    };
    const std::size_t nstruct = col_scale_.size();
    for (std::size_t j = 0; j < nstruct; ++j) {
      const double xi = draw(j);
      for (const auto& [r, a] : cols_[j]) b_[r] += a * xi;
    }
    std::vector<char> flip(m_, 0);
    for (std::size_t r = 0; r < m_; ++r) {
      const std::size_t bc = basis_[r];
      if (!is_art_[bc]) {
        b_[r] += std::max(draw(bc), opt_.perturbation - b_[r]);  // basic slack, coefficient +1
      } else if (b_[r] < 0.0) {
        flip[r] = 1;
      }
    }
    for (std::size_t j = 0; j < ncols_; ++j) {
      if (is_art_[j]) continue;
      for (auto& [r, a] : cols_[j])
        if (flip[r]) a = -a;
    }
    for (std::size_t r = 0; r < m_; ++r)
      if (flip[r]) {
        b_[r] = -b_[r];
        b_exact[r] = -b_exact[r];
        row_flip_[r] = -row_flip_[r];
      }
  }

  LpSolution& fail(LpSolution& sol) {
    sol.status = LpStatus::numerical_failure;
    sol.iterations = iters_;
    return sol;
  }

  bool to_standard_form() {
    lp_.validate();
    const std::size_t nv = lp_.num_variables();
    vmap_.assign(nv, {});
    std::vector<std::pair<double, std::size_t>> ub_rows;  // (range, col)
    std::vector<double> struct_cost;
    struct_hint_.clear();
    for (std::size_t j = 0; j < nv; ++j) {
      const auto& v = lp_.variables[j];
      if (!(v.scale > 0.0) || !std::isfinite(v.scale)) throw InputError("variable scale must be positive and finite");
      auto& mp = vmap_[j];
      if (v.lower > v.upper) return false;
      if (v.lower == v.upper) {
        mp.offset = v.lower;
        continue;
      }
      if (v.lower != -kInf) {
        mp.col = static_cast<long>(struct_cost.size());
        mp.offset = v.lower;
        struct_cost.push_back(v.cost);
        struct_hint_.push_back(v.scale);
        if (v.upper != kInf) ub_rows.emplace_back(v.upper - v.lower, mp.col);
      } else if (v.upper != kInf) {
        mp.col = static_cast<long>(struct_cost.size());
        mp.offset = v.upper;
        mp.sign = -1.0;
        struct_cost.push_back(-v.cost);
        struct_hint_.push_back(v.scale);
      } else {
        mp.col = static_cast<long>(struct_cost.size());
        struct_cost.push_back(v.cost);
        mp.col2 = static_cast<long>(struct_cost.size());
        struct_cost.push_back(-v.cost);
        struct_hint_.insert(struct_hint_.end(), 2, v.scale);
      }
    }
    const std::size_t nstruct = struct_cost.size();

    // Aggregate row coefficients in double, then convert.
    struct Row {
      std::vector<std::pair<std::uint32_t, double>> a;
      Relation rel;
      double rhs;
      long orig;
    };
    std::vector<Row> rows;
    rows.reserve(lp_.num_constraints() + ub_rows.size());
    std::vector<double> acc(nstruct, 0.0);
    std::vector<std::uint32_t> touched;
    for (std::size_t i = 0; i < lp_.num_constraints(); ++i) {
      const auto& c = lp_.constraints[i];
      Row row{{}, c.rel, c.rhs, static_cast<long>(i)};
      for (const auto& t : c.terms) {
        const auto& mp = vmap_[t.var];
        row.rhs -= t.coef * mp.offset;
        auto add = [&](long col, double v) {
          if (acc[col] == 0.0) touched.push_back(static_cast<std::uint32_t>(col));
          acc[col] += v;
          if (acc[col] == 0.0) acc[col] = 1e-300;  // keep the slot marked
        };
        if (mp.col >= 0) add(mp.col, mp.sign * t.coef);
        if (mp.col2 >= 0) add(mp.col2, -t.coef);
      }
      std::sort(touched.begin(), touched.end());
      for (auto col : touched) {
        if (std::abs(acc[col]) > 1e-290) row.a.emplace_back(col, acc[col]);
        acc[col] = 0.0;
      }
      touched.clear();
      rows.push_back(std::move(row));
    }
    for (const auto& [range, col] : ub_rows)
      rows.push_back({{{static_cast<std::uint32_t>(col), 1.0}}, Relation::less_equal, range, -1});

    m_ = rows.size();
    row_scale_.assign(m_, 1.0);
    row_flip_.assign(m_, 1);
    orig_row_.resize(m_);
    b_.resize(m_);
    cols_.assign(nstruct, {});
    col_scale_.assign(nstruct, 1.0);
    if constexpr (!T::exact) {
      if (opt_.use_scale_hints) {
        col_scale_ = struct_hint_;
        unit_row_maxima(rows);
      } else {
        equilibrate(rows, nstruct);
      }
    }
    bmax_ = 0.0;
    for (std::size_t r = 0; r < m_; ++r) {
      auto& row = rows[r];
      orig_row_[r] = row.orig;
      double rhs = row.rhs * row_scale_[r];
      if (row.a.empty()) {
        const double tol = 1e-9 * (1.0 + std::abs(row.rhs));
        const bool ok = row.rel == Relation::equal   ? std::abs(row.rhs) <= tol
                        : row.rel == Relation::less_equal ? row.rhs >= -tol
                                                          : row.rhs <= tol;
        if (!ok) return false;
        rhs = 0.0;
      }
      if (rhs < 0.0) {
        row_flip_[r] = -1;
        rhs = -rhs;
        if (row.rel == Relation::less_equal) row.rel = Relation::greater_equal;
        else if (row.rel == Relation::greater_equal) row.rel = Relation::less_equal;
      }
      const double f = row_flip_[r] * row_scale_[r];
      for (const auto& [c, v] : row.a) cols_[c].emplace_back(static_cast<std::uint32_t>(r), mul(v * col_scale_[c], f));
      b_[r] = mul(row.rhs, f);
      if (row.a.empty()) b_[r] = S(0);
      bmax_ = std::max(bmax_, std::abs(rhs));
    }

    // Slacks and artificials; le rows start with their slack basic.
    cost2_.clear();
    for (std::size_t j = 0; j < nstruct; ++j) cost2_.push_back(T::from_double(struct_cost[j] * col_scale_[j]));
    is_art_.assign(nstruct, 0);
    basis_.assign(m_, 0);
    std::vector<std::size_t> art_rows;
    for (std::size_t r = 0; r < m_; ++r) {
      const Relation rel = rows[r].rel;
      if (rel == Relation::equal) {
        art_rows.push_back(r);
        continue;
      }
      cols_.push_back({{static_cast<std::uint32_t>(r), S(rel == Relation::less_equal ? 1 : -1)}});
      cost2_.push_back(S(0));
      is_art_.push_back(0);
      if (rel == Relation::less_equal) basis_[r] = cols_.size() - 1;
      else art_rows.push_back(r);
    }
    for (std::size_t r : art_rows) {
      cols_.push_back({{static_cast<std::uint32_t>(r), S(1)}});
      cost2_.push_back(S(0));
      is_art_.push_back(1);
      basis_[r] = cols_.size() - 1;
    }
    ncols_ = cols_.size();
    pos_.assign(ncols_, -1);
    left_at_.assign(ncols_, 0);
    for (std::size_t r = 0; r < m_; ++r) pos_[basis_[r]] = static_cast<long>(r);
    return true;
  }

  // Geometric-mean row/column scaling passes, then unit row maxima. Stationary
  // occupancies span many orders of magnitude; unscaled bases lose all accuracy.
  template <class Rows>
  void equilibrate(const Rows& rows, std::size_t nstruct) {
    std::vector<double> cmin(nstruct), cmax(nstruct);
    for (int pass = 0; pass < 8; ++pass) {
      for (std::size_t r = 0; r < rows.size(); ++r) {
        double lo = kInf, hi = 0.0;
        for (const auto& [c, v] : rows[r].a) {
          const double a = std::abs(v) * col_scale_[c];
          lo = std::min(lo, a), hi = std::max(hi, a);
        }
        if (hi > 0.0) row_scale_[r] = 1.0 / std::sqrt(lo * hi);
      }
      std::fill(cmin.begin(), cmin.end(), kInf);
      std::fill(cmax.begin(), cmax.end(), 0.0);
      for (std::size_t r = 0; r < rows.size(); ++r)
        for (const auto& [c, v] : rows[r].a) {
          const double a = std::abs(v) * row_scale_[r];
          cmin[c] = std::min(cmin[c], a), cmax[c] = std::max(cmax[c], a);
        }
      for (std::size_t c = 0; c < nstruct; ++c)
        if (cmax[c] > 0.0) col_scale_[c] = 1.0 / std::sqrt(cmin[c] * cmax[c]);
    }
    unit_row_maxima(rows);
  }

  template <class Rows>
  void unit_row_maxima(const Rows& rows) {
    for (std::size_t r = 0; r < rows.size(); ++r) {
      double hi = 0.0;
      for (const auto& [c, v] : rows[r].a) hi = std::max(hi, std::abs(v) * col_scale_[c]);
      row_scale_[r] = hi > 0.0 ? 1.0 / hi : 1.0;
    }
  }

  static S mul(double a, double f) {
    if constexpr (T::exact) {
      return T::from_double(a) * T::from_double(f);
    } else {
      return S(a * f);
    }
  }

  void set_costs() {
    cost_.assign(ncols_, S(0));
    if (phase_ == 1) {
      for (std::size_t j = 0; j < ncols_; ++j)
        if (is_art_[j]) cost_[j] = S(1);
    } else {
      cost_ = cost2_;
      for (std::size_t j = 0; j < ncols_; ++j)
        if (is_art_[j]) cost_[j] = S(0);
    }
    compute_duals();
  }

  void compute_duals() {
    y_.assign(m_, S(0));
    for (std::size_t r = 0; r < m_; ++r) {
      const S& cb = cost_[basis_[r]];
      if (is_zero(cb)) continue;
      for (std::size_t c = 0; c < m_; ++c) {
        const S& v = binv(r, c);
        if (!is_zero(v)) y_[c] += cb * v;
      }
    }
  }

  S reduced_cost(std::size_t j) const {
    S d = cost_[j];
    for (const auto& [r, v] : cols_[j]) d -= y_[r] * v;
    return d;
  }

  void ftran(std::size_t j, std::vector<S>& w) {
    w.assign(m_, S(0));
    for (const auto& [k, a] : cols_[j]) {
      const S* col = &binv_[static_cast<std::size_t>(k) * m_];
      for (std::size_t r = 0; r < m_; ++r)
        if (!is_zero(col[r])) w[r] += col[r] * a;
    }
  }

  // Gauss-Jordan with partial pivoting on the current basis.
  bool reinvert() {
    std::vector<S> bm(m_ * m_, S(0));  // row-major working copy
    for (std::size_t c = 0; c < m_; ++c)
      for (const auto& [r, v] : cols_[basis_[c]]) bm[r * m_ + c] = v;
    binv_.assign(m_ * m_, S(0));
    std::vector<S> inv(m_ * m_, S(0));
    for (std::size_t r = 0; r < m_; ++r) inv[r * m_ + r] = S(1);
    for (std::size_t c = 0; c < m_; ++c) {
      std::size_t piv = c;
      S best = T::abs(bm[c * m_ + c]);
      for (std::size_t r = c + 1; r < m_; ++r) {
        S a = T::abs(bm[r * m_ + c]);
        if (a > best) best = a, piv = r;
      }
      if (is_zero(best) || (!T::exact && T::to_double(best) < 1e-13)) return false;
      if (piv != c) {
        for (std::size_t k = 0; k < m_; ++k) {
          std::swap(bm[piv * m_ + k], bm[c * m_ + k]);
          std::swap(inv[piv * m_ + k], inv[c * m_ + k]);
        }
      }
      const S p = bm[c * m_ + c];
      for (std::size_t k = 0; k < m_; ++k) {
        bm[c * m_ + k] /= p;
        inv[c * m_ + k] /= p;
      }
      for (std::size_t r = 0; r < m_; ++r) {
        if (r == c) continue;
        const S f = bm[r * m_ + c];
        if (is_zero(f)) continue;
        for (std::size_t k = 0; k < m_; ++k) {
          if (!is_zero(bm[c * m_ + k])) bm[r * m_ + k] -= f * bm[c * m_ + k];
          if (!is_zero(inv[c * m_ + k])) inv[r * m_ + k] -= f * inv[c * m_ + k];
        }
      }
    }
    // inv is B^{-1} in row-major; store column-major.
    for (std::size_t r = 0; r < m_; ++r)
      for (std::size_t c = 0; c < m_; ++c) binv(r, c) = inv[r * m_ + c];
    xb_.assign(m_, S(0));
    for (std::size_t c = 0; c < m_; ++c) {
      if (is_zero(b_[c])) continue;
      for (std::size_t r = 0; r < m_; ++r) xb_[r] += binv(r, c) * b_[c];
    }
    if constexpr (!T::exact) {
      for (auto& v : xb_)
        if (v < 0 && v > -opt_.feasibility_tol) v = 0;
    }
    if (!cost_.empty()) compute_duals();
    return true;
  }

  void pivot(std::size_t r, std::size_t q, const std::vector<S>& w, const S& theta) {
    for (std::size_t i = 0; i < m_; ++i)
      if (i != r && !is_zero(w[i])) xb_[i] -= theta * w[i];
    xb_[r] = theta;
    const S wr = w[r];
    for (std::size_t c = 0; c < m_; ++c) {
      S* col = &binv_[c * m_];
      if (is_zero(col[r])) continue;
      const S v = col[r] / wr;
      col[r] = v;
      for (std::size_t i = 0; i < m_; ++i)
        if (i != r && !is_zero(w[i])) col[i] -= w[i] * v;
    }
    pos_[basis_[r]] = -1;
    basis_[r] = q;
    pos_[q] = static_cast<long>(r);
    if constexpr (!T::exact) {
      for (auto& v : xb_)
        if (v < 0 && v > -opt_.feasibility_tol) v = 0;
    }
  }

  bool residual_ok() {
    std::vector<double> res(m_, 0.0);
    for (std::size_t r = 0; r < m_; ++r) res[r] = T::to_double(b_[r]);
    for (std::size_t r = 0; r < m_; ++r)
      for (const auto& [k, a] : cols_[basis_[r]]) res[k] -= T::to_double(a) * T::to_double(xb_[r]);
    double mx = 0.0;
    for (double v : res) mx = std::max(mx, std::abs(v));
    return mx <= 1e-10 * (1.0 + bmax_);
  }

  Step iterate() {
    std::vector<S> w;
    std::size_t degenerate_streak = 0;
    bool bland = false;
    const double opt_tol = opt_.optimality_tol;
    std::size_t since_check = 0;
    for (;;) {
      if (++iters_ > max_iter_) return Step::failure;
      if constexpr (!T::exact) {
        if (++since_check >= 64) {
          since_check = 0;
          if (!residual_ok() && !reinvert()) return Step::failure;
          compute_duals();
        }
      }
      // Pricing. In float mode a column that just left on a degenerate pivot is held back
      // briefly; near-duplicate columns otherwise swap forever on reduced-cost noise.
      long q = -1, q_held = -1;
      S best(0), best_held(0);
      for (std::size_t j = 0; j < ncols_; ++j) {
        if (pos_[j] >= 0) continue;
        if (phase_ == 2 && is_art_[j]) continue;
        const S d = reduced_cost(j);
        if (!(T::to_double(d) < -opt_tol) && !(T::exact && d < 0)) continue;
        if (!T::exact && !bland && left_at_[j] && iters_ - left_at_[j] <= kHoldWindow) {
          if (q_held < 0 || d < best_held) best_held = d, q_held = static_cast<long>(j);
          continue;
        }
        if (bland) {
          q = static_cast<long>(j);
          break;
        }
        if (q < 0 || d < best) best = d, q = static_cast<long>(j);
      }
      if (q < 0 && q_held >= 0 && T::to_double(best_held) < -kHeldTol) q = q_held;
      if (q < 0) return Step::optimal;
      ftran(static_cast<std::size_t>(q), w);

      // Ratio test; basic artificials in phase 2 block at zero in either direction.
      long r_out = -1;
      auto blocking = [&](std::size_t r, S& wa) {
        const bool art = phase_ == 2 && is_art_[basis_[r]];
        wa = art ? T::abs(w[r]) : w[r];
        if constexpr (T::exact) return wa > 0;
        else return wa > opt_.pivot_tol;
      };
      if constexpr (T::exact) {
        S theta(0);
        for (std::size_t r = 0; r < m_; ++r) {
          S wa;
          if (!blocking(r, wa)) continue;
          const S ratio = (phase_ == 2 && is_art_[basis_[r]]) ? S(0) : S(xb_[r] / wa);
          if (r_out < 0 || ratio < theta ||
              (ratio == theta && basis_[r] < basis_[static_cast<std::size_t>(r_out)])) {
            r_out = static_cast<long>(r);
            theta = ratio;
          }
        }
      } else {
        // Harris two-pass: bound the step with relaxed bounds, then take the largest pivot.
        double bound = kInf;
        for (std::size_t r = 0; r < m_; ++r) {
          S wa;
          if (!blocking(r, wa)) continue;
          const double xr = (phase_ == 2 && is_art_[basis_[r]]) ? 0.0 : std::max(0.0, T::to_double(xb_[r]));
          bound = std::min(bound, (xr + opt_.feasibility_tol) / T::to_double(wa));
        }
        double best_w = 0.0;
        for (std::size_t r = 0; r < m_; ++r) {
          S wa;
          if (!blocking(r, wa)) continue;
          const double xr = (phase_ == 2 && is_art_[basis_[r]]) ? 0.0 : std::max(0.0, T::to_double(xb_[r]));
          if (xr / T::to_double(wa) > bound) continue;
          const double aw = T::to_double(wa);
          const bool take = r_out < 0 || (bland ? basis_[r] < basis_[static_cast<std::size_t>(r_out)]
                                                : aw > best_w * (1.0 + 1e-12) ||
                                                      (aw >= best_w * (1.0 - 1e-12) &&
                                                       basis_[r] < basis_[static_cast<std::size_t>(r_out)]));
          if (take) {
            r_out = static_cast<long>(r);
            best_w = aw;
          }
        }
      }
      if (r_out < 0) return Step::unbounded;
      const std::size_t r = static_cast<std::size_t>(r_out);
      S theta = xb_[r] / (phase_ == 2 && is_art_[basis_[r]] ? T::abs(w[r]) : w[r]);
      if (phase_ == 2 && is_art_[basis_[r]]) theta = S(0);
      if constexpr (!T::exact) {
        if (theta < 0) theta = S(0);
      }
      const bool degenerate = T::to_double(theta) <= 1e-11;
      degenerate_streak = degenerate ? degenerate_streak + 1 : 0;
      if (!T::exact && degenerate_streak > max_stall_) return Step::failure;
      bland = degenerate_streak >= opt_.degenerate_streak_for_bland;
      if (degenerate) left_at_[basis_[r]] = iters_;
      pivot(r, static_cast<std::size_t>(q), w, theta);
      compute_duals();
    }
  }

  void drive_out_artificials() {
    std::vector<S> w;
    for (std::size_t r = 0; r < m_; ++r) {
      if (!is_art_[basis_[r]]) continue;
      // Row r of B^{-1} A, scanned column by column.
      long best = -1;
      double best_abs = 0.0;
      for (std::size_t j = 0; j < ncols_; ++j) {
        if (pos_[j] >= 0 || is_art_[j]) continue;
        S v(0);
        for (const auto& [k, a] : cols_[j]) v += binv(r, k) * a;
        const double av = std::abs(T::to_double(v));
        if ((T::exact && !is_zero(v) && best < 0) || (!T::exact && av > 1e-7 && av > best_abs)) {
          best = static_cast<long>(j);
          best_abs = av;
          if (T::exact) break;
        }
      }
      if (best < 0) continue;  // redundant row: artificial stays basic at zero
      ftran(static_cast<std::size_t>(best), w);
      pivot(r, static_cast<std::size_t>(best), w, S(0));
    }
  }

  LpSolution extract(LpSolution& sol) {
    const std::size_t nv = lp_.num_variables();
    std::vector<double> colval(ncols_, 0.0);
    for (std::size_t r = 0; r < m_; ++r) colval[basis_[r]] = T::to_double(xb_[r]);
    for (std::size_t j = 0; j < col_scale_.size(); ++j) colval[j] *= col_scale_[j];
    sol.primal.assign(nv, 0.0);
    for (std::size_t j = 0; j < nv; ++j) {
      const auto& mp = vmap_[j];
      double x = mp.offset;
      if (mp.col >= 0) x += mp.sign * colval[mp.col];
      if (mp.col2 >= 0) x -= colval[mp.col2];
      const auto& v = lp_.variables[j];
      sol.primal[j] = std::clamp(x, v.lower, v.upper);
    }
    sol.dual.assign(lp_.num_constraints(), 0.0);
    for (std::size_t r = 0; r < m_; ++r) {
      if (orig_row_[r] < 0) continue;
      sol.dual[orig_row_[r]] = T::to_double(y_[r]) * row_flip_[r] * row_scale_[r];
    }
    sol.reduced_cost.assign(nv, 0.0);
    for (std::size_t j = 0; j < nv; ++j) sol.reduced_cost[j] = lp_.variables[j].cost;
    for (std::size_t i = 0; i < lp_.num_constraints(); ++i)
      for (const auto& t : lp_.constraints[i].terms) sol.reduced_cost[t.var] -= sol.dual[i] * t.coef;

    double obj = 0.0;
    if constexpr (T::exact) {
      S o(0);
      for (std::size_t j = 0; j < nv; ++j) {
        const auto& mp = vmap_[j];
        S x = T::from_double(mp.offset);
        if (mp.col >= 0) {
          const long p = pos_[mp.col];
          if (p >= 0) x += T::from_double(mp.sign) * xb_[p];
        }
        if (mp.col2 >= 0) {
          const long p = pos_[mp.col2];
          if (p >= 0) x -= xb_[p];
        }
        o += T::from_double(lp_.variables[j].cost) * x;
      }
      obj = T::to_double(o);
    } else {
      for (std::size_t j = 0; j < nv; ++j) obj += lp_.variables[j].cost * sol.primal[j];
    }
    sol.objective = obj;

    // Residuals and dual objective in the original space.
    double pres = 0.0, cres = 0.0, dobj = 0.0;
    for (std::size_t i = 0; i < lp_.num_constraints(); ++i) {
      const auto& c = lp_.constraints[i];
      const double act = lp_.row_activity(i, sol.primal);
      double viol = 0.0;
      if (c.rel != Relation::greater_equal) viol = std::max(viol, act - c.rhs);
      if (c.rel != Relation::less_equal) viol = std::max(viol, c.rhs - act);
      pres = std::max(pres, viol / (1.0 + std::abs(c.rhs)));
      cres = std::max(cres, std::abs(sol.dual[i] * (act - c.rhs)));
      dobj += sol.dual[i] * c.rhs;
    }
    for (std::size_t j = 0; j < nv; ++j) {
      const auto& v = lp_.variables[j];
      const double d = sol.reduced_cost[j];
      const double x = sol.primal[j];
      pres = std::max(pres, std::max(v.lower - x, x - v.upper));
      // Reduced costs within tolerance of zero are priced at the primal point.
      const double bound = d > 0.0 ? v.lower : v.upper;
      if (d == 0.0) continue;
      if (std::isfinite(bound)) {
        dobj += d * bound;
        cres = std::max(cres, std::abs(d * (x - bound)));
      } else {
        dobj += std::abs(d) <= 1e-9 * (1.0 + std::abs(v.cost)) ? d * x : -kInf;
      }
    }
    sol.primal_residual = pres;
    sol.complementarity_residual = cres;
    sol.dual_objective = dobj;
    sol.status = LpStatus::optimal;
    if (!T::exact && (pres > 1e-7 || cres > 1e-6)) sol.status = LpStatus::numerical_failure;
    return sol;
  }
};

}  // namespace detail

inline LpSolution solve(const LinearProgram& lp, Arithmetic mode = Arithmetic::floating,
                        const SimplexOptions& opt = {}) {
  if (mode == Arithmetic::exact) return detail::Simplex<mpq_class>(lp, opt).run();
  auto sol = detail::Simplex<double>(lp, opt).run();
  if (sol.status != LpStatus::numerical_failure) return sol;
  // Fallbacks: shifted bounds against stalling, then the caller's magnitude hints for
  // bases whose values span many decades.
  auto perturbed = opt;
  if (perturbed.perturbation == 0.0) {
    perturbed.perturbation = 1e-6;
    sol = detail::Simplex<double>(lp, perturbed).run();
    if (sol.status != LpStatus::numerical_failure) return sol;
  }
  const bool hinted = std::any_of(lp.variables.begin(), lp.variables.end(), [](const auto& v) { return v.scale != 1.0; });
  if (!hinted || opt.use_scale_hints) return sol;
  for (auto retry : {opt, perturbed}) {
    retry.use_scale_hints = true;
    sol = detail::Simplex<double>(lp, retry).run();
    if (sol.status != LpStatus::numerical_failure) return sol;
  }
  return sol;
}

}  // namespace matchq
