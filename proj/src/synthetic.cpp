#include "exformer/synthetic.hpp"

#include <cmath>
#include <random>
#include <string>

#include "exformer/csv.hpp"

namespace exformer {

void SyntheticSpec::validate() const {
  if (n < 10) throw ConfigError("synthetic panel needs --n >= 10");
  if (n_covariates == 0) throw ConfigError("synthetic panel needs at least one covariate");
  if (signal_coefs.size() > n_covariates) throw ConfigError("more signal coefficients than covariates");
  if (!(noise_std >= 0.0)) throw ConfigError("noise std must be nonnegative");
}

std::vector<Date> business_days(Date start, std::size_t count) {
  std::vector<Date> out;
  out.reserve(count);
  for (Date d = start; out.size() < count; d += std::chrono::days{1}) {
    const std::chrono::weekday wd{d};
    if (wd != std::chrono::Saturday && wd != std::chrono::Sunday) out.push_back(d);
  }
  return out;
}

SyntheticPanel generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  SyntheticPanel p;
  const std::size_t days = spec.n + 1;
  p.dates = business_days(spec.start, days);
  p.covariates.assign(spec.n_covariates, std::vector<double>(days));
  for (std::size_t t = 0; t < days; ++t) {
    for (auto& c : p.covariates) c[t] = normal(rng);
  }
  p.prices.resize(days);
  p.prices[0] = 100.0;
  for (std::size_t t = 1; t < days; ++t) {
    double r = spec.noise_std * normal(rng);
    for (std::size_t i = 0; i < spec.signal_coefs.size(); ++i) r += spec.signal_coefs[i] * p.covariates[i][t - 1];
    p.prices[t] = p.prices[t - 1] * std::exp(r / 100.0);
  }
  return p;
}

namespace {

void write_series(const std::filesystem::path& path, const std::vector<Date>& dates, const std::vector<double>& values) {
  CsvWriter w(path);
  w.row({"date", "value"});
  for (std::size_t t = 0; t < dates.size(); ++t) {
    w.field(std::string_view(format_date(dates[t]))).field(values[t]);
    w.end_row();
  }
}

}  // namespace

std::filesystem::path write_synthetic(const SyntheticSpec& spec, const std::filesystem::path& dir) {
  const SyntheticPanel p = generate_synthetic(spec);
  std::filesystem::create_directories(dir);
  DataManifest m;
  m.target = {"target", dir / "target.csv", Frequency::daily, Transform::log_return};
  write_series(m.target.path, p.dates, p.prices);
  for (std::size_t i = 0; i < p.covariates.size(); ++i) {
    const std::string name = "cov" + std::to_string(i + 1);
    m.covariates.push_back({name, dir / (name + ".csv"), Frequency::daily, Transform::level});
    write_series(m.covariates.back().path, p.dates, p.covariates[i]);
  }
  const auto manifest = dir / "manifest.json";
  save_manifest(m, manifest);
  return manifest;
}

}  // namespace exformer
