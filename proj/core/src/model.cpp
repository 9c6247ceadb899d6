#include "mfcn/model.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "mfcn/rng.hpp"

namespace mfcn {

namespace {

void zero(std::span<double> out) { std::fill(out.begin(), out.end(), 0.0); }

double norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

double distance(std::span<const double> x, std::span<const double> y) {
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += (x[i] - y[i]) * (x[i] - y[i]);
  return std::sqrt(s);
}

}  // namespace

void FunctionCoefficients::drift(double t, std::span<const double> x,
                                 const ParticleCloud& mu, std::span<const double> u,
                                 std::span<double> out) const {
  if (b) b(t, x, mu, u, out); else zero(out);
}

void FunctionCoefficients::diffusion(double t, std::span<const double> x,
                                     const ParticleCloud& mu,
                                     std::span<const double> u,
                                     std::span<double> out) const {
  if (sigma) sigma(t, x, mu, u, out); else zero(out);
}

void FunctionCoefficients::jump(double t, std::span<const double> x,
                                const ParticleCloud& mu, std::span<const double> z,
                                std::span<double> out) const {
  if (gamma) gamma(t, x, mu, z, out); else zero(out);
}

double FunctionCoefficients::running_cost(double t, std::span<const double> x,
                                          const ParticleCloud& mu,
                                          std::span<const double> u) const {
  return f ? f(t, x, mu, u) : 0.0;
}

ControlSet ControlSet::box(Vector lower, Vector upper) {
  ControlSet s;
  s.lower = std::move(lower);
  s.upper = std::move(upper);
  s.validate();
  return s;
}

ControlSet ControlSet::finite(std::vector<Vector> points) {
  ControlSet s;
  s.points = std::move(points);
  s.validate();
  return s;
}

std::size_t ControlSet::dim() const {
  return is_finite() ? points.front().size() : lower.size();
}

bool ControlSet::contains(std::span<const double> u, double tol) const {
  if (is_finite()) {
    return std::any_of(points.begin(), points.end(),
                       [&](const Vector& p) { return distance(p, u) <= tol; });
  }
  for (std::size_t i = 0; i < lower.size(); ++i) {
    if (u[i] < lower[i] - tol || u[i] > upper[i] + tol) return false;
  }
  return true;
}

void ControlSet::validate() const {
  if (is_finite()) {
    for (const auto& p : points) {
      if (p.size() != points.front().size() || p.empty()) {
        throw std::invalid_argument("ControlSet: inconsistent point dimensions");
      }
      for (double v : p) {
        if (!std::isfinite(v)) throw std::invalid_argument("ControlSet: non-finite point");
      }
    }
    return;
  }
  if (lower.empty() || lower.size() != upper.size()) {
    throw std::invalid_argument("ControlSet: control set must be nonempty");
  }
  for (std::size_t i = 0; i < lower.size(); ++i) {
    if (!std::isfinite(lower[i]) || !std::isfinite(upper[i]) || lower[i] > upper[i]) {
      throw std::invalid_argument("ControlSet: box must be bounded and nonempty");
    }
  }
}

MarkDistribution MarkDistribution::finite(std::vector<Vector> marks,
                                          std::vector<double> probabilities) {
  MarkDistribution m;
  m.marks = std::move(marks);
  m.probabilities = std::move(probabilities);
  m.validate();
  return m;
}

MarkDistribution MarkDistribution::single(double mark) {
  return finite({{mark}}, {1.0});
}

MarkDistribution MarkDistribution::box(Vector lower, Vector upper) {
  MarkDistribution m;
  m.lower = std::move(lower);
  m.upper = std::move(upper);
  m.validate();
  return m;
}

std::size_t MarkDistribution::dim() const {
  return is_finite() ? marks.front().size() : lower.size();
}

Vector MarkDistribution::sample(StreamRng& rng) const {
  if (is_finite()) {
    const double u = rng.uniform();
    double acc = 0.0;
    for (std::size_t k = 0; k < marks.size(); ++k) {
      acc += probabilities[k];
      if (u < acc) return marks[k];
    }
    return marks.back();
  }
  Vector z(lower.size());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = rng.uniform(lower[i], upper[i]);
  return z;
}

void MarkDistribution::validate() const {
  if (is_finite()) {
    if (probabilities.size() != marks.size()) {
      throw std::invalid_argument("MarkDistribution: one probability per mark");
    }
    double total = 0.0;
    for (double p : probabilities) {
      if (!(p >= 0.0)) throw std::invalid_argument("MarkDistribution: negative probability");
      total += p;
    }
    if (std::abs(total - 1.0) > 1e-12) {
      throw std::invalid_argument("MarkDistribution: probabilities must sum to 1");
    }
    return;
  }
  if (lower.empty() || lower.size() != upper.size()) {
    throw std::invalid_argument("MarkDistribution: empty mark space");
  }
  for (std::size_t i = 0; i < lower.size(); ++i) {
    if (!(lower[i] < upper[i])) throw std::invalid_argument("MarkDistribution: empty box");
  }
}

void IntensitySpec::validate() const {
  if (!std::isfinite(total_rate) || total_rate < 0.0) {
    throw std::invalid_argument("IntensitySpec: total_rate must be finite and >= 0");
  }
  marks.validate();
}

void InitialLaw::validate() const {
  if (mean.empty() || mean.size() != stddev.size()) {
    throw std::invalid_argument("InitialLaw: mean/stddev dimension mismatch");
  }
  for (std::size_t i = 0; i < mean.size(); ++i) {
    if (!std::isfinite(mean[i]) || !(stddev[i] >= 0.0) || !std::isfinite(stddev[i])) {
      throw std::invalid_argument("InitialLaw: invalid parameters");
    }
  }
}

void LqParams::validate() const {
  for (double v : {a, b_gain, sigma, jump_scale, cost_q, cost_r, coupling}) {
    if (!std::isfinite(v)) throw std::invalid_argument("LqParams: non-finite parameter");
  }
  if (!(cost_r > 0.0)) throw std::invalid_argument("LqParams: cost_r must be > 0");
  if (cost_q < 0.0) throw std::invalid_argument("LqParams: cost_q must be >= 0");
}

void Problem::validate() const {
  if (!coefficients) throw std::invalid_argument("Problem: missing coefficients");
  if (dim_state == 0 || dim_noise == 0) throw std::invalid_argument("Problem: zero dimension");
  if (!(horizon > 0.0) || !std::isfinite(horizon)) {
    throw std::invalid_argument("Problem: horizon must be > 0");
  }
  if (!(moment_order > 2.0)) throw std::invalid_argument("Problem: moment_order must be > 2");
  if (!(declared_lipschitz > 0.0)) {
    throw std::invalid_argument("Problem: declared_lipschitz must be > 0");
  }
  control_set.validate();
  intensity.validate();
  initial_law.validate();
  if (initial_law.dim() != dim_state) {
    throw std::invalid_argument("Problem: initial law dimension mismatch");
  }
  if (lq) lq->validate();
}

Problem Problem::with_initial_law(InitialLaw law) const {
  Problem p = *this;
  p.initial_law = std::move(law);
  p.validate();
  return p;
}

Problem Problem::with_intensity(IntensitySpec spec) const {
  Problem p = *this;
  p.intensity = std::move(spec);
  p.validate();
  return p;
}

namespace {

class LqCoefficients final : public Coefficients {
 public:
  explicit LqCoefficients(const LqParams& p) : p_(p) {}

  void drift(double, std::span<const double> x, const ParticleCloud&,
             std::span<const double> u, std::span<double> out) const override {
    out[0] = p_.a * x[0] + p_.b_gain * u[0];
  }
  void diffusion(double, std::span<const double>, const ParticleCloud&,
                 std::span<const double>, std::span<double> out) const override {
    out[0] = p_.sigma;
  }
  void jump(double, std::span<const double> x, const ParticleCloud&,
            std::span<const double> z, std::span<double> out) const override {
    out[0] = p_.jump_scale * z[0] * x[0];
  }
  double running_cost(double, std::span<const double> x, const ParticleCloud& mu,
                      std::span<const double> u) const override {
    const double target = p_.coupling == 0.0 ? 0.0 : p_.coupling * mu.mean()[0];
    const double dx = x[0] - target;
    return p_.cost_q * dx * dx + p_.cost_r * u[0] * u[0];
  }
  bool uses_measure() const override { return p_.coupling != 0.0; }

 private:
  LqParams p_;
};

double max_abs_mark(const MarkDistribution& m) {
  if (m.is_finite()) {
    double z = 0.0;
    for (const auto& mk : m.marks) z = std::max(z, std::abs(mk[0]));
    return z;
  }
  return std::max(std::abs(m.lower[0]), std::abs(m.upper[0]));
}

}  // namespace

Problem make_lq_problem(const LqParams& params, const IntensitySpec& intensity,
                        double initial_mean, double initial_std, double horizon) {
  params.validate();
  intensity.validate();
  if (intensity.marks.dim() != 1) {
    throw std::invalid_argument("make_lq_problem: marks must be scalar");
  }
  Problem p;
  p.name = params.coupling == 0.0 ? "lq1d" : "lq1d-meanfield";
  p.dim_state = 1;
  p.dim_noise = 1;
  p.horizon = horizon;
  p.coefficients = std::make_shared<LqCoefficients>(params);
  const double bound = 10.0 * (1.0 + std::abs(initial_mean));
  p.control_set = ControlSet::box({-bound}, {bound});
  p.intensity = intensity;
  p.initial_law = InitialLaw{{initial_mean}, {initial_std}};
  // b is Lipschitz with constant a, gamma with c * max|z|.
  const double m = std::abs(params.a) + std::abs(params.jump_scale) * max_abs_mark(intensity.marks);
  p.declared_lipschitz = std::max(m, 1e-3);
  p.lq = params;
  p.validate();
  return p;
}

std::vector<std::string> benchmark_names() { return {"lq1d", "lq1d-meanfield"}; }

Problem make_benchmark(const std::string& name, LqParams params,
                       const IntensitySpec& intensity, double initial_mean,
                       double initial_std, double horizon) {
  if (name == "lq1d") {
    params.coupling = 0.0;
  } else if (name == "lq1d-meanfield") {
    if (params.coupling == 0.0) params.coupling = 0.1;
  } else {
    throw std::invalid_argument("unknown benchmark '" + name + "'");
  }
  return make_lq_problem(params, intensity, initial_mean, initial_std, horizon);
}

namespace {

std::string describe(std::string_view coefficient, double t, std::span<const double> x) {
  std::ostringstream os;
  os << "coefficient '" << coefficient << "' returned a non-finite value at t=" << t
     << ", x=[";
  for (std::size_t i = 0; i < x.size(); ++i) os << (i ? "," : "") << x[i];
  os << "]";
  return os.str();
}

void require_finite(std::span<const double> v, std::string_view coefficient, double t,
                    std::span<const double> x) {
  for (double e : v) {
    if (!std::isfinite(e)) throw std::runtime_error(describe(coefficient, t, x));
  }
}

ParticleCloud random_cloud(StreamRng& rng, std::size_t dim, std::size_t size, double w) {
  Vector pts(dim * size);
  for (double& v : pts) v = rng.uniform(-w, w);
  return ParticleCloud(dim, std::move(pts));
}

Vector random_control(StreamRng& rng, const ControlSet& set) {
  if (set.is_finite()) {
    const auto k = static_cast<std::size_t>(rng.uniform() * static_cast<double>(set.points.size()));
    return set.points[std::min(k, set.points.size() - 1)];
  }
  Vector u(set.lower.size());
  for (std::size_t i = 0; i < u.size(); ++i) u[i] = rng.uniform(set.lower[i], set.upper[i]);
  return u;
}

}  // namespace

ValidationReport validate_problem(const Problem& problem, std::size_t probe_budget,
                                  std::uint64_t seed, const ProbeOptions& options) {
  if (probe_budget == 0) throw std::invalid_argument("validate_problem: probe_budget >= 1");
  problem.validate();
  const auto& coef = *problem.coefficients;
  const std::size_t n = problem.dim_state;
  const std::size_t d = problem.dim_noise;
  const double w = options.state_half_width;
  StreamRng rng(derive_seed(seed, "validate-problem"));

  ValidationReport report;
  report.probes = probe_budget;
  Vector x(n), x2(n), out1(n * d), out2(n * d);

  auto ratio = [](double num, double den) { return den > 0.0 ? num / den : 0.0; };

  for (std::size_t probe = 0; probe < probe_budget; ++probe) {
    const double t = rng.uniform(0.0, problem.horizon);
    for (auto& v : x) v = rng.uniform(-w, w);
    for (auto& v : x2) v = rng.uniform(-w, w);
    const ParticleCloud mu = random_cloud(rng, n, options.cloud_size, w);
    const ParticleCloud mu2 = random_cloud(rng, n, options.cloud_size, w);
    const Vector u = random_control(rng, problem.control_set);
    const Vector u2 = random_control(rng, problem.control_set);
    const Vector z = problem.intensity.marks.sample(rng);
    const double dx = distance(x, x2);
    const double dmu = wasserstein2(mu, mu2).value;
    const double du = distance(u, u2);

    // Evaluates g at four input variations and updates the probe record.
    auto probe_vector = [&](CoefficientProbe& rec, std::size_t width, auto&& eval,
                            std::span<const double> arg, std::span<const double> arg2) {
      Vector base(width), vx(width), vm(width), vj(width), va(width);
      eval(x, mu, arg, std::span<double>(base));
      require_finite(base, rec.name, t, x);
      eval(x2, mu, arg, std::span<double>(vx));
      require_finite(vx, rec.name, t, x2);
      eval(x, mu2, arg, std::span<double>(vm));
      require_finite(vm, rec.name, t, x);
      eval(x2, mu2, arg, std::span<double>(vj));
      require_finite(vj, rec.name, t, x2);
      eval(x, mu, arg2, std::span<double>(va));
      require_finite(va, rec.name, t, x);
      rec.ratio_state = std::max(rec.ratio_state, ratio(distance(vx, base), dx));
      rec.ratio_measure = std::max(rec.ratio_measure, ratio(distance(vm, base), dmu));
      rec.ratio_joint = std::max(rec.ratio_joint, ratio(distance(vj, base), dx + dmu));
      return distance(va, base);
    };

    const double db = probe_vector(
        report.drift, n,
        [&](std::span<const double> xx, const ParticleCloud& m, std::span<const double> a,
            std::span<double> o) { coef.drift(t, xx, m, a, o); },
        u, u2);
    report.drift.ratio_control = std::max(report.drift.ratio_control, ratio(db, du));
    const double ds = probe_vector(
        report.diffusion, n * d,
        [&](std::span<const double> xx, const ParticleCloud& m, std::span<const double> a,
            std::span<double> o) { coef.diffusion(t, xx, m, a, o); },
        u, u2);
    report.diffusion.ratio_control = std::max(report.diffusion.ratio_control, ratio(ds, du));
    probe_vector(
        report.jump, n,
        [&](std::span<const double> xx, const ParticleCloud& m, std::span<const double> a,
            std::span<double> o) { coef.jump(t, xx, m, a, o); },
        z, z);

    Vector g(n);
    coef.jump(t, x, mu, z, g);
    report.growth_ratio =
        std::max(report.growth_ratio, norm(g) / (1.0 + norm(x) + mu.second_moment()));

    const double fu = coef.running_cost(t, x, mu, u);
    if (!std::isfinite(fu)) throw std::runtime_error(describe("running_cost", t, x));
  }

  const double limit = 1.01 * problem.declared_lipschitz;
  for (CoefficientProbe* rec : {&report.drift, &report.diffusion, &report.jump}) {
    rec->flagged = std::max({rec->ratio_state, rec->ratio_measure, rec->ratio_joint}) > limit;
  }
  report.growth_flagged = report.growth_ratio > limit;
  return report;
}

QuadraticForm QuadraticForm::identity_coordinate(std::size_t dim, std::size_t k) {
  QuadraticForm q;
  q.dim = dim;
  q.A.assign(dim * dim, 0.0);
  q.b.assign(dim, 0.0);
  q.b[k] = 1.0;
  return q;
}

QuadraticForm QuadraticForm::squared_norm(std::size_t dim) {
  QuadraticForm q;
  q.dim = dim;
  q.A.assign(dim * dim, 0.0);
  for (std::size_t i = 0; i < dim; ++i) q.A[i * dim + i] = 1.0;
  q.b.assign(dim, 0.0);
  return q;
}

double QuadraticForm::value(std::span<const double> x) const {
  double s = c;
  for (std::size_t i = 0; i < dim; ++i) {
    s += b[i] * x[i];
    for (std::size_t j = 0; j < dim; ++j) s += x[i] * A[i * dim + j] * x[j];
  }
  return s;
}

void QuadraticForm::gradient(std::span<const double> x, std::span<double> out) const {
  for (std::size_t i = 0; i < dim; ++i) {
    double g = b[i];
    for (std::size_t j = 0; j < dim; ++j) g += (A[i * dim + j] + A[j * dim + i]) * x[j];
    out[i] = g;
  }
}

Vector QuadraticForm::hessian() const {
  Vector h(dim * dim);
  for (std::size_t i = 0; i < dim; ++i) {
    for (std::size_t j = 0; j < dim; ++j) h[i * dim + j] = A[i * dim + j] + A[j * dim + i];
  }
  return h;
}

double eval_generator(const Problem& problem, const QuadraticForm& phi, double t,
                      std::span<const double> x, const ParticleCloud& mu,
                      std::span<const double> u) {
  const std::size_t n = problem.dim_state;
  const std::size_t d = problem.dim_noise;
  if (phi.dim != n || x.size() != n) {
    throw std::invalid_argument("eval_generator: dimension mismatch");
  }
  Vector drift(n), sigma(n * d), grad(n);
  problem.coefficients->drift(t, x, mu, u, drift);
  require_finite(drift, "drift", t, x);
  problem.coefficients->diffusion(t, x, mu, u, sigma);
  require_finite(sigma, "diffusion", t, x);
  phi.gradient(x, grad);
  const Vector hess = phi.hessian();
  double value = 0.0;
  for (std::size_t i = 0; i < n; ++i) value += drift[i] * grad[i];
  // 1/2 tr(sigma sigma^T H) = 1/2 sum_{i,j} (sigma sigma^T)_{ij} H_{ji}
  double trace = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double ss = 0.0;
      for (std::size_t k = 0; k < d; ++k) ss += sigma[i * d + k] * sigma[j * d + k];
      trace += ss * hess[j * n + i];
    }
  }
  return value + 0.5 * trace;
}

}  // namespace mfcn
