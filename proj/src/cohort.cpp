#include "ncc/cohort.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "ncc/rng.hpp"

namespace ncc {

namespace {

// Substream ids, one per variable block.
enum StreamId : std::uint64_t { kM1 = 1, kM2, kXa, kXbNoise, kEvent, kCensor };

constexpr double kSqrt12 = 3.4641016151377544;  // sd of U[0,1] is 1/sqrt(12)

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double var_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size() - 1);
}

double cov_of(const std::vector<double>& a, const std::vector<double>& b) {
  double ma = mean_of(a), mb = mean_of(b);
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - ma) * (b[i] - mb);
  return a.size() < 2 ? 0.0 : s / static_cast<double>(a.size() - 1);
}

}  // namespace

void ScenarioConfig::validate() const {
  if (!(censor_lo >= 0.0) || !(censor_lo < censor_hi))
    throw std::invalid_argument("ScenarioConfig: need 0 <= censor_lo < censor_hi");
  if (!(weibull_shape > 0.0) || !(weibull_scale > 0.0))
    throw std::invalid_argument("ScenarioConfig: Weibull shape and scale must be positive");
  if (!(r2_xb > 0.0) || !(r2_xb < 1.0))
    throw std::invalid_argument("ScenarioConfig: r2_xb must lie in (0,1)");
  if (!(rho_mxa >= -0.25) || !(rho_mxa <= 0.75))
    throw std::invalid_argument("ScenarioConfig: rho_mxa leaves MAF outside [0,1]");
}

double linear_predictor(const Subject& s, const ScenarioConfig& c) {
  return c.alpha_a * s.xa + c.alpha_b * s.xb + c.alpha_m1 * s.m1 +
         c.alpha_m2 * s.m2 + c.alpha_m1m2 * s.m1 * s.m2 +
         c.alpha_mxa * s.m1 * s.m2 * s.xa;
}

double sample_event_time(double eta, const ScenarioConfig& c, double u) {
  if (!(u > 0.0) || !(u < 1.0))
    throw std::invalid_argument("sample_event_time: u must lie in (0,1)");
  return c.weibull_scale *
         std::pow(-std::log(u) * std::exp(-eta), 1.0 / c.weibull_shape);
}

std::pair<double, int> apply_censoring(double y, double c) {
  return {std::min(y, c), y <= c ? 1 : 0};
}

Cohort generate_cohort(const ScenarioConfig& config, std::uint64_t seed) {
  config.validate();
  Cohort cohort;
  cohort.config = config;
  cohort.config.seed = seed;
  const std::size_t n = config.n;
  if (n == 0) return cohort;

  RandomStream rng_m1(seed, kM1);
  RandomStream rng_m2(seed, kM2);
  RandomStream rng_xa(seed, kXa);
  RandomStream rng_xb(seed, kXbNoise);
  RandomStream rng_y(seed, kEvent);
  RandomStream rng_c(seed, kCensor);

  std::vector<double> m1(n), m2(n);
  std::vector<int> m2_raw(n), xa_raw(n);
  for (std::size_t i = 0; i < n; ++i) m1[i] = (rng_m1.uniform() - 0.5) * kSqrt12;
  for (std::size_t i = 0; i < n; ++i) {
    m2_raw[i] = rng_m2.bernoulli(0.5) ? 1 : 0;
    m2[i] = 2.0 * m2_raw[i] - 1.0;
  }

  // MAF thresholds apply to the centered-scaled M1 and the raw binary M2.
  for (std::size_t i = 0; i < n; ++i) {
    double maf = 0.25;
    if (config.m2_active) {
      if (m1[i] <= 0.0 && m2_raw[i] == 0) maf += config.rho_mxa;
    } else {
      if (m1[i] <= -1.0) maf += config.rho_mxa;
    }
    double u = rng_xa.uniform();
    double p2 = maf * maf;
    double p1 = 2.0 * maf * (1.0 - maf);
    xa_raw[i] = u < p2 ? 2 : (u < p2 + p1 ? 1 : 0);
  }

  // Calibrate beta so the systematic part X_a (beta + gamma M1) has unit
  // empirical variance, then sigma^2 = (1 - r2) / r2 gives R^2 = r2_xb.
  std::vector<double> a(n), ag(n);
  for (std::size_t i = 0; i < n; ++i) {
    a[i] = static_cast<double>(xa_raw[i]);
    ag[i] = a[i] * config.gamma_mxb * m1[i];
  }
  const double va = var_of(a);
  if (va <= 0.0)
    throw std::runtime_error("generate_cohort: X_a constant in realized cohort, cannot calibrate X_b");
  const double q_b = 2.0 * cov_of(a, ag);
  const double q_c = var_of(ag) - 1.0;
  const double disc = q_b * q_b - 4.0 * va * q_c;
  if (disc < 0.0)
    throw std::invalid_argument("generate_cohort: r2_xb target unattainable for this gamma_mxb");
  const double beta = (-q_b + std::sqrt(disc)) / (2.0 * va);
  const double sigma2 = (1.0 - config.r2_xb) / config.r2_xb;
  if (!std::isfinite(sigma2))
    throw std::invalid_argument("generate_cohort: non-finite residual variance for X_b");
  const double sigma = std::sqrt(sigma2);

  std::vector<double> xb(n);
  for (std::size_t i = 0; i < n; ++i)
    xb[i] = a[i] * (beta + config.gamma_mxb * m1[i]) + sigma * rng_xb.normal();

  // Center/scale X_a and X_b with the realized cohort's sample moments.
  const double ma = mean_of(a), sa = std::sqrt(var_of(a));
  const double mb = mean_of(xb), sb = std::sqrt(var_of(xb));
  if (sb <= 0.0) throw std::runtime_error("generate_cohort: X_b degenerate");

  cohort.subjects.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    Subject& s = cohort.subjects[i];
    s.id = i;
    s.m1 = m1[i];
    s.m2 = m2[i];
    s.xa_raw = xa_raw[i];
    s.xa = (a[i] - ma) / sa;
    s.xb = (xb[i] - mb) / sb;
    s.entry = 0.0;
  }
  for (std::size_t i = 0; i < n; ++i) {
    Subject& s = cohort.subjects[i];
    double eta = linear_predictor(s, config);
    s.y_latent = sample_event_time(eta, config, rng_y.uniform());
  }
  for (std::size_t i = 0; i < n; ++i) {
    Subject& s = cohort.subjects[i];
    double c = rng_c.uniform(config.censor_lo, config.censor_hi);
    auto [t, d] = apply_censoring(s.y_latent, c);
    s.t_obs = t;
    s.d = d;
  }
  return cohort;
}

double factor_value(const Subject& s, const std::string& name) {
  if (name == "m1") return s.m1;
  if (name == "m2") return s.m2;
  if (name == "xa") return s.xa;
  if (name == "xa_raw") return static_cast<double>(s.xa_raw);
  if (name == "xb") return s.xb;
  if (name == "entry") return s.entry;
  if (name == "t_obs") return s.t_obs;
  if (name == "d") return static_cast<double>(s.d);
  throw std::invalid_argument("unknown factor name: " + name);
}

void write_cohort_csv(const Cohort& cohort, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  out << "id,m1,m2,xa_raw,xa,xb,entry,t_obs,d\n";
  char buf[256];
  for (const Subject& s : cohort.subjects) {
    std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%d,%.17g,%.17g,%.17g,%.17g,%d\n",
                  s.id, s.m1, s.m2, s.xa_raw, s.xa, s.xb, s.entry, s.t_obs, s.d);
    out << buf;
  }
}

Cohort read_cohort_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open for reading: " + path.string());
  std::string line;
  if (!std::getline(in, line))
    throw std::runtime_error("empty cohort file: " + path.string());
  if (line.rfind("id,m1,m2,xa_raw,xa,xb,entry,t_obs,d", 0) != 0)
    throw std::runtime_error("unexpected cohort CSV header in " + path.string());
  Cohort cohort;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    Subject s;
    std::istringstream ss(line);
    std::string tok;
    auto next = [&]() {
      if (!std::getline(ss, tok, ','))
        throw std::runtime_error("short cohort CSV row in " + path.string());
      return tok;
    };
    s.id = std::stoull(next());
    s.m1 = std::stod(next());
    s.m2 = std::stod(next());
    s.xa_raw = std::stoi(next());
    s.xa = std::stod(next());
    s.xb = std::stod(next());
    s.entry = std::stod(next());
    s.t_obs = std::stod(next());
    s.d = std::stoi(next());
    cohort.subjects.push_back(s);
  }
  return cohort;
}

nlohmann::json scenario_to_json(const ScenarioConfig& c) {
  return nlohmann::json{
      {"n", c.n},
      {"exposures",
       {{"rho_mxa", c.rho_mxa}, {"gamma_mxb", c.gamma_mxb}, {"r2_xb", c.r2_xb}}},
      {"hazard",
       {{"alpha_a", c.alpha_a},
        {"alpha_b", c.alpha_b},
        {"alpha_m1", c.alpha_m1},
        {"alpha_m2", c.alpha_m2},
        {"alpha_m1m2", c.alpha_m1m2},
        {"alpha_mxa", c.alpha_mxa},
        {"weibull_shape", c.weibull_shape},
        {"weibull_scale", c.weibull_scale}}},
      {"censoring", {{"lo", c.censor_lo}, {"hi", c.censor_hi}}},
      {"m2_active", c.m2_active},
      {"seed", c.seed}};
}

ScenarioConfig scenario_from_json(const nlohmann::json& j) {
  ScenarioConfig c;
  c.n = j.value("n", c.n);
  if (j.contains("exposures")) {
    const auto& e = j.at("exposures");
    c.rho_mxa = e.value("rho_mxa", c.rho_mxa);
    c.gamma_mxb = e.value("gamma_mxb", c.gamma_mxb);
    c.r2_xb = e.value("r2_xb", c.r2_xb);
  }
  if (j.contains("hazard")) {
    const auto& h = j.at("hazard");
    c.alpha_a = h.value("alpha_a", c.alpha_a);
    c.alpha_b = h.value("alpha_b", c.alpha_b);
    c.alpha_m1 = h.value("alpha_m1", c.alpha_m1);
    c.alpha_m2 = h.value("alpha_m2", c.alpha_m2);
    c.alpha_m1m2 = h.value("alpha_m1m2", c.alpha_m1m2);
    c.alpha_mxa = h.value("alpha_mxa", c.alpha_mxa);
    c.weibull_shape = h.value("weibull_shape", c.weibull_shape);
    c.weibull_scale = h.value("weibull_scale", c.weibull_scale);
  }
  if (j.contains("censoring")) {
    const auto& u = j.at("censoring");
    c.censor_lo = u.value("lo", c.censor_lo);
    c.censor_hi = u.value("hi", c.censor_hi);
  }
  c.m2_active = j.value("m2_active", c.m2_active);
  c.seed = j.value("seed", c.seed);
  return c;
}

}  // namespace ncc
