#pragma once

#include <span>
#include <string>

namespace alignlens {

enum class Alternative { greater, less, two_sided };

std::string to_string(Alternative a);

struct GroupComparison {
  std::size_t n_a = 0, n_b = 0;
  double mean_a = 0.0, sd_a = 0.0;  // sample standard deviations
  double mean_b = 0.0, sd_b = 0.0;
  double t = 0.0;
  double df = 0.0;
  double p_value = 0.0;
};

// Welch two-sample t-test. `greater` tests mean_a > mean_b.
// Both groups need at least two samples.
GroupComparison group_compare(std::span<const double> a, std::span<const double> b,
                              Alternative alternative);

double mean(std::span<const double> v);
double sample_sd(std::span<const double> v);
double population_sd(std::span<const double> v);

// I_x(a, b), continued-fraction evaluation.
double regularized_incomplete_beta(double a, double b, double x);

// CDF of Student's t with `df` degrees of freedom.
double student_t_cdf(double t, double df);

}  // namespace alignlens
