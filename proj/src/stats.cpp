#include "alignlens/stats.hpp"

#include <cmath>
#include <limits>

#include "alignlens/error.hpp"

namespace alignlens {

std::string to_string(Alternative a) {
  switch (a) {
    case Alternative::greater: return "greater";
    case Alternative::less: return "less";
    case Alternative::two_sided: return "two-sided";
  }
  return "?";
}

double mean(std::span<const double> v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

namespace {

double sum_sq_dev(std::span<const double> v) {
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s;
}

// Modified Lentz evaluation of the incomplete-beta continued fraction.
double beta_continued_fraction(double a, double b, double x) {
  constexpr int kMaxIter = 500;
  constexpr double kEps = 1e-16;
  constexpr double kTiny = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) return h;
  }
  throw NumericError("incomplete beta: continued fraction did not converge");
}

}  // namespace

double sample_sd(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  return std::sqrt(sum_sq_dev(v) / static_cast<double>(v.size() - 1));
}

double population_sd(std::span<const double> v) {
  if (v.empty()) return 0.0;
  return std::sqrt(sum_sq_dev(v) / static_cast<double>(v.size()));
}

double regularized_incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0) || !(b > 0.0)) throw ValidationError("incomplete beta: a and b must be positive");
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double log_front =
      std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(log_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_continued_fraction(a, b, x) / a;
  return 1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b;
}

double student_t_cdf(double t, double df) {
  if (!(df > 0.0)) throw ValidationError("student_t_cdf: df must be positive");
  if (std::isinf(t)) return t > 0 ? 1.0 : 0.0;
  const double tail = 0.5 * regularized_incomplete_beta(0.5 * df, 0.5, df / (df + t * t));
  return t >= 0.0 ? 1.0 - tail : tail;
}

GroupComparison group_compare(std::span<const double> a, std::span<const double> b,
                              Alternative alternative) {
  if (a.size() < 2 || b.size() < 2) {
    throw ValidationError("group_compare: each group needs at least two samples");
  }
  GroupComparison r;
  r.n_a = a.size();
  r.n_b = b.size();
  r.mean_a = mean(a);
  r.mean_b = mean(b);
  r.sd_a = sample_sd(a);
  r.sd_b = sample_sd(b);
  const double va = r.sd_a * r.sd_a / static_cast<double>(r.n_a);
  const double vb = r.sd_b * r.sd_b / static_cast<double>(r.n_b);
  const double se2 = va + vb;
  const double diff = r.mean_a - r.mean_b;

  if (se2 == 0.0) {
    // Both groups constant.
    r.df = static_cast<double>(r.n_a + r.n_b - 2);
    if (diff == 0.0) {
      r.t = 0.0;
      r.p_value = alternative == Alternative::two_sided ? 1.0 : 0.5;
    } else {
      r.t = diff > 0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
      switch (alternative) {
        case Alternative::greater: r.p_value = diff > 0 ? 0.0 : 1.0; break;
        case Alternative::less: r.p_value = diff < 0 ? 0.0 : 1.0; break;
        case Alternative::two_sided: r.p_value = 0.0; break;
      }
    }
    return r;
  }

  r.t = diff / std::sqrt(se2);
  r.df = se2 * se2 /
         (va * va / static_cast<double>(r.n_a - 1) + vb * vb / static_cast<double>(r.n_b - 1));
  // Upper tail P(T >= |t|) straight from the incomplete beta to keep small p-values accurate.
  const double x = r.df / (r.df + r.t * r.t);
  const double upper_abs = 0.5 * regularized_incomplete_beta(0.5 * r.df, 0.5, x);
  switch (alternative) {
    case Alternative::greater: r.p_value = r.t >= 0 ? upper_abs : 1.0 - upper_abs; break;
    case Alternative::less: r.p_value = r.t <= 0 ? upper_abs : 1.0 - upper_abs; break;
    case Alternative::two_sided: r.p_value = std::min(1.0, 2.0 * upper_abs); break;
  }
  return r;
}

}  // namespace alignlens
