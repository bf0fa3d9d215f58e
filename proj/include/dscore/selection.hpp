#pragma once

// Penalties pi(j, n), the selection rule S and the data-driven test.

#include <cctype>
#include <cmath>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dscore/error.hpp"
#include "dscore/scores.hpp"
#include "dscore/teststat.hpp"

namespace dscore {

enum class PenaltyKind { Schwarz, Akaike, Custom };

struct Penalty {
  PenaltyKind kind = PenaltyKind::Schwarz;
  std::string name = "schwarz";
  std::function<double(double j, double n)> value;

  double operator()(int j, double n) const { return value(static_cast<double>(j), n); }
};

inline Penalty schwarz_penalty() {
  return {PenaltyKind::Schwarz, "schwarz", [](double j, double n) { return j * std::log(n); }};
}

inline Penalty akaike_penalty() {
  return {PenaltyKind::Akaike, "akaike", [](double j, double) { return j; }};
}

namespace detail {

// Recursive-descent parser for arithmetic in j and n:
//   expr   := term (('+' | '-') term)*
//   term   := power (('*' | '/') power)*
//   power  := unary ('^' power)?
//   unary  := '-' unary | primary
//   primary:= number | j | n | log(expr) | sqrt(expr) | exp(expr) | (expr)
class PenaltyParser {
 public:
  using Node = std::function<double(double, double)>;

  explicit PenaltyParser(std::string_view src) : s_(src) {}

  Node parse() {
    Node e = expr();
    skip();
    if (pos_ != s_.size()) fail("unexpected '" + std::string(1, s_[pos_]) + "'");
    return e;
  }

 private:
  [[noreturn]] void fail(const std::string& what) const {
    throw Error(ErrorCode::Config, "penalty expression: " + what + " at position " + std::to_string(pos_));
  }

  void skip() {
    while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
  }

  bool eat(char c) {
    skip();
    if (pos_ < s_.size() && s_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  Node expr() {
    Node lhs = term();
    for (;;) {
      if (eat('+')) {
        Node rhs = term();
        lhs = [lhs, rhs](double j, double n) { return lhs(j, n) + rhs(j, n); };
      } else if (eat('-')) {
        Node rhs = term();
        lhs = [lhs, rhs](double j, double n) { return lhs(j, n) - rhs(j, n); };
      } else {
        return lhs;
      }
    }
  }

  Node term() {
    Node lhs = power();
    for (;;) {
      if (eat('*')) {
        Node rhs = power();
        lhs = [lhs, rhs](double j, double n) { return lhs(j, n) * rhs(j, n); };
      } else if (eat('/')) {
        Node rhs = power();
        lhs = [lhs, rhs](double j, double n) { return lhs(j, n) / rhs(j, n); };
      } else {
        return lhs;
      }
    }
  }

  Node power() {
    Node base = unary();
    if (eat('^')) {
      Node ex = power();
      return [base, ex](double j, double n) { return std::pow(base(j, n), ex(j, n)); };
    }
    return base;
  }

  Node unary() {
    if (eat('-')) {
      Node inner = unary();
      return [inner](double j, double n) { return -inner(j, n); };
    }
    return primary();
  }

  Node primary() {
    skip();
    if (pos_ >= s_.size()) fail("unexpected end");
    const char c = s_[pos_];
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(std::string(s_.substr(pos_)), &used);
      } catch (const std::exception&) {
        fail("bad number");
      }
      pos_ += used;
      return [v](double, double) { return v; };
    }
    if (eat('(')) {
      Node inner = expr();
      if (!eat(')')) fail("expected ')'");
      return inner;
    }
    std::size_t start = pos_;
    while (pos_ < s_.size() && std::isalpha(static_cast<unsigned char>(s_[pos_]))) ++pos_;
    const std::string id(s_.substr(start, pos_ - start));
    if (id == "j") return [](double j, double) { return j; };
    if (id == "n") return [](double, double n) { return n; };
    double (*fn)(double) = nullptr;
    if (id == "log") fn = [](double x) { return std::log(x); };
    else if (id == "sqrt") fn = [](double x) { return std::sqrt(x); };
    else if (id == "exp") fn = [](double x) { return std::exp(x); };
    if (!fn) {
      pos_ = start;
      fail(id.empty() ? "unexpected character" : "unknown identifier '" + id + "'");
    }
    if (!eat('(')) fail("expected '(' after " + id);
    Node arg = expr();
    if (!eat(')')) fail("expected ')'");
    return [fn, arg](double j, double n) { return fn(arg(j, n)); };
  }

  std::string_view s_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline Penalty custom_penalty(const std::string& expression) {
  return {PenaltyKind::Custom, "custom:" + expression, detail::PenaltyParser(expression).parse()};
}

/// schwarz | akaike | custom:<expr>
inline Penalty parse_penalty(const std::string& spec) {
  if (spec == "schwarz") return schwarz_penalty();
  if (spec == "akaike") return akaike_penalty();
  if (spec.rfind("custom:", 0) == 0) return custom_penalty(spec.substr(7));
  throw Error(ErrorCode::Config, "penalty: unknown penalty '" + spec + "' (expected schwarz, akaike or custom:<expr>)");
}

/// Probe checks on n in {1e2, ..., 1e6}: strictly increasing in j (hard
/// error), pi(d, n)/n strictly decreasing (hard error), and pi(j, n) - pi(1, n)
/// growing in n for j >= 2 (warning only). Returns the warnings.
inline std::vector<std::string> validate_penalty(const Penalty& p, int d) {
  if (d < 1) throw Error(ErrorCode::Config, "penalty: d must be >= 1");
  std::vector<std::string> warnings;
  const double grid[] = {1e2, 1e3, 1e4, 1e5, 1e6};
  double prev_ratio = std::numeric_limits<double>::infinity();
  std::vector<double> prev_gap(static_cast<std::size_t>(d) + 1, -std::numeric_limits<double>::infinity());
  bool diverges = true;
  for (double n : grid) {
    double prev = -std::numeric_limits<double>::infinity();
    for (int j = 1; j <= d; ++j) {
      const double v = p(j, n);
      if (!std::isfinite(v)) {
        throw Error(ErrorCode::Config, "penalty: " + p.name + " is not finite at j=" + std::to_string(j));
      }
      if (!(v > prev)) {
        throw Error(ErrorCode::Config, "penalty: " + p.name + " is not strictly increasing in j at n=" +
                                           std::to_string(static_cast<long long>(n)));
      }
      prev = v;
      if (j >= 2) {
        const double gap = v - p(1, n);
        if (!(gap > prev_gap[static_cast<std::size_t>(j)])) diverges = false;
        prev_gap[static_cast<std::size_t>(j)] = gap;
      }
    }
    const double ratio = p(d, n) / n;
    if (!(ratio < prev_ratio)) {
      throw Error(ErrorCode::Config, "penalty: " + p.name + " violates pi(d,n)/n -> 0 on the probe grid");
    }
    prev_ratio = ratio;
  }
  if (d >= 2 && !diverges) {
    warnings.push_back("penalty " + p.name +
                       " does not make pi(j,n) - pi(1,n) grow with n; the selection rule may not "
                       "concentrate on S = 1 under the null");
  }
  return warnings;
}

/// Minimal index k (1-based) maximizing stats[k] - pi(k, n).
inline int select(std::span<const double> stats, const Penalty& p, double n) {
  if (stats.empty()) throw Error(ErrorCode::DimensionMismatch, "selection needs at least one statistic");
  int best = 1;
  double best_v = stats[0] - p(1, n);
  for (std::size_t i = 1; i < stats.size(); ++i) {
    const int k = static_cast<int>(i) + 1;
    const double v = stats[i] - p(k, n);
    if (v > best_v) {
      best_v = v;
      best = k;
    }
  }
  return best;
}

/// Nested statistics from one score matrix: level k uses the first k columns
/// and the inverse of the leading k x k information block.
inline std::vector<double> nested_statistics(const EstimatedScores& e) {
  const int d = e.k();
  const Eigen::Index n = e.n();
  if (n < 1) throw Error(ErrorCode::DegenerateSample, "no observations");
  const Vector m = e.values.colwise().sum().transpose() / std::sqrt(static_cast<double>(n));
  if (!m.allFinite()) throw Error(ErrorCode::NonFinite, "score sums are not finite");
  std::vector<double> out(static_cast<std::size_t>(d));
  for (int k = 1; k <= d; ++k) {
    const Matrix Lk = e.leading_L(k);
    const Vector mk = m.head(k);
    out[static_cast<std::size_t>(k - 1)] = std::max(0.0, mk.dot(Lk * mk));
  }
  return out;
}

struct DataDrivenOptions {
  Penalty penalty = schwarz_penalty();
  double alpha = 0.05;
  StatKind kind = StatKind::U;
};

/// Selects S from the nested statistics and reports U_S / W_S against chi2_1.
inline TestReport data_driven_test(const EstimatedScores& e, const DataDrivenOptions& opt) {
  TestReport r;
  r.kind = opt.kind;
  r.alpha = opt.alpha;
  r.penalty = opt.penalty.name;
  r.n = static_cast<long long>(e.n());
  r.provenance = e.provenance;
  r.statistics = nested_statistics(e);
  r.selected_S = select(r.statistics, opt.penalty, static_cast<double>(e.n()));
  r.stat_at_S = r.statistics[static_cast<std::size_t>(r.selected_S - 1)];
  const Decision d = decide(r.stat_at_S, 1, opt.alpha);
  r.p_value = d.p_value;
  r.reject = d.reject;
  r.p_value_df_at_S = chi2_sf(r.selected_S, r.stat_at_S);
  return r;
}

/// Simple case: exact scores from a d-dimensional system.
inline TestReport data_driven_test(const ScoreSystem& sys, std::span<const double> y,
                                   const DataDrivenOptions& opt, const EvaluationOptions& eval = {}) {
  DataDrivenOptions o = opt;
  o.kind = StatKind::U;
  return data_driven_test(exact_scores(sys, y, eval), o);
}

/// Composite case: moment plug-in for eta, efficient scores at (theta0, eta_hat).
inline TestReport data_driven_test(const ConvolvedModel& model, const Vector& theta0,
                                   std::span<const double> y, const DataDrivenOptions& opt,
                                   const PluginOptions& plugin = {}) {
  DataDrivenOptions o = opt;
  o.kind = StatKind::W;
  return data_driven_test(plugin_efficient_scores(model, theta0, y, plugin), o);
}

}  // namespace dscore
