#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "exformer/data.hpp"

namespace exformer {

struct SyntheticSpec {
  std::size_t n = 1000;  // return days
  std::size_t n_covariates = 4;
  // r_t = sum_i coef_i * x_{i,t-1} + noise; missing coefficients are zero.
  std::vector<double> signal_coefs{0.8};
  double noise_std = 0.1;
  std::uint64_t seed = 0;
  Date start = parse_date("2010-01-04");

  void validate() const;
};

struct SyntheticPanel {
  std::vector<Date> dates;              // n + 1 business days
  std::vector<double> prices;           // target price, n + 1 values
  std::vector<std::vector<double>> covariates;  // i.i.d. N(0,1), n + 1 values each
};

SyntheticPanel generate_synthetic(const SyntheticSpec& spec);

// Writes target.csv, cov<i>.csv and manifest.json into `dir`; returns the
// manifest path.
std::filesystem::path write_synthetic(const SyntheticSpec& spec, const std::filesystem::path& dir);

// Consecutive Monday-to-Friday dates.
std::vector<Date> business_days(Date start, std::size_t count);

}  // namespace exformer
