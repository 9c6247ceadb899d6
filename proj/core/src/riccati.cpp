#include "mfcn/riccati.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>

namespace mfcn {

namespace {

double interpolate(const std::vector<double>& times, const std::vector<double>& v, double t) {
  if (t <= times.front()) return v.front();
  if (t >= times.back()) return v.back();
  auto it = std::upper_bound(times.begin(), times.end(), t);
  const auto k = static_cast<std::size_t>(it - times.begin()) - 1;
  if (times[k + 1] == times[k]) return v[k + 1];
  const double w = (t - times[k]) / (times[k + 1] - times[k]);
  return v[k] + w * (v[k + 1] - v[k]);
}

}  // namespace

double RiccatiSolution::gain(double t) const { return interpolate(times, P, t); }
double RiccatiSolution::offset(double t) const { return interpolate(times, eta, t); }

double RiccatiSolution::feedback(double t, double x) const {
  if (zero_control) return 0.0;
  return -b_over_r * (gain(t) * x + offset(t));
}

RiccatiSolution riccati_oracle(const LqParams& params, const PointPath& path, double horizon,
                               double initial_mean, double initial_std,
                               const RiccatiOptions& options) {
  params.validate();
  if (!(horizon > 0.0) || !(options.max_step > 0.0)) {
    throw std::invalid_argument("riccati_oracle: horizon and step must be > 0");
  }
  const double a = params.a, q = params.cost_q, s2 = params.sigma * params.sigma;
  const double k = options.zero_control ? 0.0 : params.b_gain * params.b_gain / params.cost_r;
  auto h = [&](double t) { return options.target ? options.target(t) : 0.0; };
  // State y = (P, eta, ell); returns dy/dt.
  auto rhs = [&](double t, const std::array<double, 3>& y) {
    const double ht = h(t);
    return std::array<double, 3>{-2.0 * a * y[0] + k * y[0] * y[0] - q,
                                 -a * y[1] + k * y[0] * y[1] + q * ht,
                                 k * y[1] * y[1] - s2 * y[0] - q * ht * ht};
  };

  RiccatiSolution sol;
  sol.b_over_r = params.b_gain / params.cost_r;
  sol.zero_control = options.zero_control;
  // Built backward, reversed at the end.
  std::vector<double> ts{horizon}, ps{0.0}, es{0.0}, ls{0.0};
  std::array<double, 3> y{0.0, 0.0, 0.0};
  double t = horizon;
  auto push = [&] {
    if (!std::isfinite(y[0]) || std::abs(y[0]) > 1e12) {
      throw std::runtime_error("riccati_oracle: Riccati solution blows up before t=" +
                               std::to_string(t));
    }
    ts.push_back(t);
    ps.push_back(y[0]);
    es.push_back(y[1]);
    ls.push_back(y[2]);
  };
  std::size_t next = path.events.size();
  for (;;) {
    const double stop = next == 0 ? 0.0 : path.events[next - 1].time;
    const double span = t - stop;
    const auto steps = static_cast<std::size_t>(std::ceil(span / options.max_step));
    const double end = t;
    for (std::size_t i = 1; i <= steps; ++i) {
      const double hstep = -span / static_cast<double>(steps);
      const double t0 = end - span * static_cast<double>(i - 1) / static_cast<double>(steps);
      auto add = [](const std::array<double, 3>& u, const std::array<double, 3>& v, double f) {
        return std::array<double, 3>{u[0] + f * v[0], u[1] + f * v[1], u[2] + f * v[2]};
      };
      const auto k1 = rhs(t0, y);
      const auto k2 = rhs(t0 + 0.5 * hstep, add(y, k1, 0.5 * hstep));
      const auto k3 = rhs(t0 + 0.5 * hstep, add(y, k2, 0.5 * hstep));
      const auto k4 = rhs(t0 + hstep, add(y, k3, hstep));
      for (int c = 0; c < 3; ++c) y[c] += hstep / 6.0 * (k1[c] + 2.0 * k2[c] + 2.0 * k3[c] + k4[c]);
      t = i == steps ? stop : end - span * static_cast<double>(i) / static_cast<double>(steps);
      push();
    }
    if (next == 0) break;
    const double z = path.events[next - 1].mark.empty() ? 1.0 : path.events[next - 1].mark[0];
    const double factor = 1.0 + params.jump_scale * z;
    y[0] *= factor * factor;
    y[1] *= factor;
    push();  // left limit at the jump time
    --next;
  }
  std::reverse(ts.begin(), ts.end());
  std::reverse(ps.begin(), ps.end());
  std::reverse(es.begin(), es.end());
  std::reverse(ls.begin(), ls.end());
  sol.times = std::move(ts);
  sol.P = std::move(ps);
  sol.eta = std::move(es);
  sol.ell = std::move(ls);
  const double m2 = initial_mean * initial_mean + initial_std * initial_std;
  sol.value = sol.P.front() * m2 + 2.0 * sol.eta.front() * initial_mean + sol.ell.front();
  return sol;
}

}  // namespace mfcn
