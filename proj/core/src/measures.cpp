#include "mfcn/measures.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include "mfcn/rng.hpp"
#include "mfcn/transport.hpp"

namespace mfcn {

ParticleCloud::ParticleCloud(std::size_t dim, std::vector<double> points)
    : dim_(dim), points_(std::move(points)) {
  validate_and_summarize();
}

ParticleCloud::ParticleCloud(std::size_t dim, std::vector<double> points,
                             std::vector<double> weights)
    : dim_(dim), points_(std::move(points)), weights_(std::move(weights)) {
  validate_and_summarize();
}

ParticleCloud ParticleCloud::dirac(std::span<const double> x) {
  return ParticleCloud(x.size(), std::vector<double>(x.begin(), x.end()));
}

void ParticleCloud::validate_and_summarize() {
  if (dim_ == 0) throw std::invalid_argument("ParticleCloud: zero dimension");
  if (points_.empty() || points_.size() % dim_ != 0) {
    throw std::invalid_argument("ParticleCloud: need at least one point");
  }
  size_ = points_.size() / dim_;
  for (double x : points_) {
    if (!std::isfinite(x)) {
      throw std::invalid_argument("ParticleCloud: non-finite point");
    }
  }
  if (!weights_.empty()) {
    if (weights_.size() != size_) {
      throw std::invalid_argument("ParticleCloud: weight count mismatch");
    }
    double total = 0.0;
    for (double w : weights_) {
      if (!(w >= 0.0)) throw std::invalid_argument("ParticleCloud: negative weight");
      total += w;
    }
    if (std::abs(total - 1.0) > 1e-12) {
      throw std::invalid_argument("ParticleCloud: weights must sum to 1");
    }
  }
  mean_.assign(dim_, 0.0);
  double m2 = 0.0;
  for (std::size_t i = 0; i < size_; ++i) {
    const double w = weight(i);
    for (std::size_t d = 0; d < dim_; ++d) {
      const double x = points_[i * dim_ + d];
      mean_[d] += w * x;
      m2 += w * x * x;
    }
  }
  second_moment_ = std::sqrt(m2);
}

std::ptrdiff_t MeasureFlow::jump_slot(std::size_t node) const {
  const auto it = std::lower_bound(jump_nodes.begin(), jump_nodes.end(), node);
  if (it == jump_nodes.end() || *it != node) return -1;
  return it - jump_nodes.begin();
}

const ParticleCloud& MeasureFlow::left_limit(std::size_t node) const {
  const auto slot = jump_slot(node);
  return slot < 0 ? clouds.at(node) : left_limits.at(static_cast<std::size_t>(slot));
}

void MeasureFlow::validate() const {
  if (grid.size() < 2) throw std::invalid_argument("MeasureFlow: grid too short");
  if (clouds.size() != grid.size()) {
    throw std::invalid_argument("MeasureFlow: one cloud per node required");
  }
  if (left_limits.size() != jump_nodes.size()) {
    throw std::invalid_argument("MeasureFlow: one left limit per jump node");
  }
  for (std::size_t k = 1; k < grid.size(); ++k) {
    if (!(grid[k] > grid[k - 1])) {
      throw std::invalid_argument("MeasureFlow: grid must be increasing");
    }
  }
  if (grid.front() != 0.0) throw std::invalid_argument("MeasureFlow: grid must start at 0");
}

std::span<const double> PiecewisePath::at(double t) const {
  const auto& g = *grid;
  auto it = std::upper_bound(g.begin(), g.end(), t);
  std::size_t k = (it == g.begin()) ? 0 : static_cast<std::size_t>(it - g.begin()) - 1;
  return value(k);
}

std::string to_string(TransportMethod m) {
  switch (m) {
    case TransportMethod::exact_1d: return "exact-1d";
    case TransportMethod::network_simplex: return "network-simplex";
    case TransportMethod::sliced: return "sliced";
  }
  return "unknown";
}

double wasserstein2_squared_1d(std::span<const double> xa,
                               std::span<const double> wa,
                               std::span<const double> xb,
                               std::span<const double> wb) {
  auto order = [](std::span<const double> x) {
    std::vector<std::size_t> idx(x.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(),
              [&](std::size_t i, std::size_t j) { return x[i] < x[j]; });
    return idx;
  };
  const auto ia = order(xa);
  const auto ib = order(xb);
  std::size_t i = 0, j = 0;
  double ra = wa[ia[0]], rb = wb[ib[0]];
  double total = 0.0;
  while (i < ia.size() && j < ib.size()) {
    const double d = xa[ia[i]] - xb[ib[j]];
    if (ra <= rb) {
      total += ra * d * d;
      rb -= ra;
      if (++i < ia.size()) ra = wa[ia[i]];
    } else {
      total += rb * d * d;
      ra -= rb;
      if (++j < ib.size()) rb = wb[ib[j]];
    }
  }
  return total;
}

namespace {

std::vector<double> weights_of(const ParticleCloud& c) {
  std::vector<double> w(c.size());
  for (std::size_t i = 0; i < c.size(); ++i) w[i] = c.weight(i);
  return w;
}

std::vector<double> coordinate(const ParticleCloud& c, std::span<const double> dir) {
  std::vector<double> proj(c.size());
  for (std::size_t i = 0; i < c.size(); ++i) {
    const auto p = c.point(i);
    double s = 0.0;
    for (std::size_t d = 0; d < c.dim(); ++d) s += p[d] * dir[d];
    proj[i] = s;
  }
  return proj;
}

}  // namespace

WassersteinResult wasserstein2(const ParticleCloud& a, const ParticleCloud& b,
                               const WassersteinOptions& options) {
  if (a.dim() != b.dim()) {
    throw std::invalid_argument("wasserstein2: dimension mismatch");
  }
  const std::size_t n = a.dim();
  const auto wa = weights_of(a);
  const auto wb = weights_of(b);
  WassersteinResult result;
  if (n == 1 && !options.force_network_simplex) {
    result.value = std::sqrt(std::max(
        0.0, wasserstein2_squared_1d(a.points(), wa, b.points(), wb)));
    result.method = TransportMethod::exact_1d;
    return result;
  }
  const double cells = static_cast<double>(a.size()) * static_cast<double>(b.size());
  if (cells <= options.lp_size_limit || options.force_network_simplex) {
    std::vector<double> cost(a.size() * b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      const auto x = a.point(i);
      for (std::size_t j = 0; j < b.size(); ++j) {
        const auto y = b.point(j);
        double s = 0.0;
        for (std::size_t d = 0; d < n; ++d) s += (x[d] - y[d]) * (x[d] - y[d]);
        cost[i * b.size() + j] = s;
      }
    }
    // Renormalize so tiny summation drift never unbalances the LP.
    const double sa = std::accumulate(wa.begin(), wa.end(), 0.0);
    const double sb = std::accumulate(wb.begin(), wb.end(), 0.0);
    std::vector<double> demand(wb);
    for (double& w : demand) w *= sa / sb;
    const auto sol = solve_transport(wa, demand, cost);
    result.value = std::sqrt(std::max(0.0, sol.cost));
    result.method = TransportMethod::network_simplex;
    return result;
  }
  StreamRng rng(derive_seed(options.projection_seed, "sliced-w2"));
  double acc = 0.0;
  std::vector<double> dir(n);
  for (std::size_t k = 0; k < options.projections; ++k) {
    double norm = 0.0;
    do {
      norm = 0.0;
      for (double& d : dir) {
        d = rng.normal();
        norm += d * d;
      }
    } while (norm == 0.0);
    norm = std::sqrt(norm);
    for (double& d : dir) d /= norm;
    acc += wasserstein2_squared_1d(coordinate(a, dir), wa, coordinate(b, dir), wb);
  }
  result.value = std::sqrt(acc / static_cast<double>(options.projections));
  result.method = TransportMethod::sliced;
  result.projections = options.projections;
  return result;
}

double moment(const ParticleCloud& cloud, double order) {
  if (!(order >= 1.0)) throw std::invalid_argument("moment: order must be >= 1");
  double s = 0.0;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto x = cloud.point(i);
    double r2 = 0.0;
    for (double v : x) r2 += v * v;
    s += cloud.weight(i) * std::pow(std::sqrt(r2), order);
  }
  return std::pow(s, 1.0 / order);
}

namespace {

double horizon_of(const PiecewisePath& p) {
  if (!p.grid || p.grid->size() < 2) {
    throw std::invalid_argument("skorokhod: path grid must have two nodes");
  }
  if (p.grid->front() != 0.0) {
    throw std::invalid_argument("skorokhod: grid does not start at 0");
  }
  if (p.values.size() != p.grid->size() * p.dim) {
    throw std::invalid_argument("skorokhod: value count mismatch");
  }
  return p.grid->back();
}

double distance(std::span<const double> x, std::span<const double> y) {
  double s = 0.0;
  for (std::size_t d = 0; d < x.size(); ++d) s += (x[d] - y[d]) * (x[d] - y[d]);
  return std::sqrt(s);
}

// sup_t |a(t) - b(tau(t))| for step paths, evaluated on every interval of the
// merged breakpoint set (each side is constant there) plus the endpoint.
template <typename TimeChange>
double sup_difference(const PiecewisePath& a, const PiecewisePath& b,
                      std::vector<double> breakpoints, TimeChange tau,
                      double horizon) {
  std::sort(breakpoints.begin(), breakpoints.end());
  breakpoints.erase(std::unique(breakpoints.begin(), breakpoints.end()),
                    breakpoints.end());
  double sup = distance(a.at(horizon), b.at(horizon));
  for (std::size_t k = 0; k + 1 < breakpoints.size(); ++k) {
    const double mid = 0.5 * (breakpoints[k] + breakpoints[k + 1]);
    sup = std::max(sup, distance(a.at(mid), b.at(tau(mid))));
  }
  return sup;
}

}  // namespace

SkorokhodResult skorokhod_distance_restricted(const PiecewisePath& a,
                                              const PiecewisePath& b) {
  const double ta = horizon_of(a);
  const double tb = horizon_of(b);
  if (std::abs(ta - tb) > 1e-12 * std::max(1.0, ta)) {
    throw std::invalid_argument("skorokhod: grids do not cover the same [0,T]");
  }
  if (a.dim != b.dim) throw std::invalid_argument("skorokhod: dimension mismatch");
  const double horizon = ta;

  std::vector<double> merged(a.grid->begin(), a.grid->end());
  merged.insert(merged.end(), b.grid->begin(), b.grid->end());
  const double identity =
      sup_difference(a, b, merged, [](double t) { return t; }, horizon);

  SkorokhodResult result{identity, true};
  if (a.jump_times.size() != b.jump_times.size()) return result;

  std::vector<double> from{0.0}, to{0.0};
  for (std::size_t i = 0; i < a.jump_times.size(); ++i) {
    from.push_back(a.jump_times[i]);
    to.push_back(b.jump_times[i]);
  }
  from.push_back(horizon);
  to.push_back(horizon);
  // Drop anchors coinciding with the endpoint; an anchor that cannot be
  // matched strictly monotonically leaves only the identity.
  std::vector<double> f2, t2;
  for (std::size_t i = 0; i < from.size(); ++i) {
    if (!f2.empty() && from[i] == f2.back() && to[i] == t2.back()) continue;
    if (!f2.empty() && (!(from[i] > f2.back()) || !(to[i] > t2.back()))) {
      return result;
    }
    f2.push_back(from[i]);
    t2.push_back(to[i]);
  }
  auto piecewise = [](const std::vector<double>& xs, const std::vector<double>& ys,
                      double t) {
    auto it = std::upper_bound(xs.begin(), xs.end(), t);
    std::size_t k = (it == xs.begin()) ? 0 : static_cast<std::size_t>(it - xs.begin()) - 1;
    if (k + 1 >= xs.size()) return ys.back();
    const double s = (t - xs[k]) / (xs[k + 1] - xs[k]);
    return ys[k] + s * (ys[k + 1] - ys[k]);
  };
  auto delta = [&](double t) { return piecewise(f2, t2, t); };
  auto delta_inv = [&](double s) { return piecewise(t2, f2, s); };

  double shift = 0.0;
  for (std::size_t i = 0; i < f2.size(); ++i) shift = std::max(shift, std::abs(t2[i] - f2[i]));
  std::vector<double> breaks(a.grid->begin(), a.grid->end());
  for (double s : *b.grid) breaks.push_back(delta_inv(s));
  breaks.insert(breaks.end(), f2.begin(), f2.end());
  const double anchored = shift + sup_difference(a, b, breaks, delta, horizon);

  result.identity_only = false;
  result.value = std::min(anchored, identity);
  return result;
}

namespace {

void put(std::ostream& out, double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  out << buf;
}

}  // namespace

void write_cloud_csv(std::ostream& out, const ParticleCloud& cloud, double time,
                     bool header) {
  if (header) {
    out << "time,index";
    for (std::size_t d = 0; d < cloud.dim(); ++d) out << ",x" << d;
    out << ",weight\n";
  }
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    put(out, time);
    out << ',' << i;
    for (double v : cloud.point(i)) {
      out << ',';
      put(out, v);
    }
    out << ',';
    put(out, cloud.weight(i));
    out << '\n';
  }
}

void write_flow_csv(std::ostream& out, const MeasureFlow& flow) {
  bool header = true;
  for (std::size_t k = 0; k < flow.grid.size(); ++k) {
    write_cloud_csv(out, flow.clouds[k], flow.grid[k], header);
    header = false;
  }
}

}  // namespace mfcn
