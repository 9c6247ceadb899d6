#include "mfcn/kernel.hpp"

#include <algorithm>
#include <cstring>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace mfcn {

std::size_t SpacePartition::count() const {
  std::size_t n = 1;
  for (std::size_t c : cells) n *= c;
  return n;
}

std::size_t SpacePartition::locate(std::span<const double> x) const {
  std::size_t index = 0;
  for (std::size_t a = 0; a < lower.size(); ++a) {
    const double width = (upper[a] - lower[a]) / static_cast<double>(cells[a]);
    const double pos = std::floor((x[a] - lower[a]) / width);
    const double clamped = std::clamp(pos, 0.0, static_cast<double>(cells[a] - 1));
    index = index * cells[a] + static_cast<std::size_t>(clamped);
  }
  return index;
}

Vector SpacePartition::center(std::size_t cell) const {
  Vector c(lower.size());
  for (std::size_t a = lower.size(); a-- > 0;) {
    const std::size_t k = cell % cells[a];
    cell /= cells[a];
    const double width = (upper[a] - lower[a]) / static_cast<double>(cells[a]);
    c[a] = lower[a] + (static_cast<double>(k) + 0.5) * width;
  }
  return c;
}

void SpacePartition::validate() const {
  if (lower.empty() || lower.size() != upper.size() || cells.size() != lower.size()) {
    throw std::invalid_argument("SpacePartition: dimension mismatch");
  }
  for (std::size_t a = 0; a < lower.size(); ++a) {
    if (!(lower[a] < upper[a]) || cells[a] == 0) {
      throw std::invalid_argument("SpacePartition: empty box or zero cells");
    }
  }
}

SpacePartition SpacePartition::around(const InitialLaw& law, std::size_t cells_per_axis,
                                      double half_widths) {
  SpacePartition p;
  for (std::size_t a = 0; a < law.dim(); ++a) {
    const double s = law.stddev[a] > 0.0 ? law.stddev[a] : 1.0;
    p.lower.push_back(law.mean[a] - half_widths * s);
    p.upper.push_back(law.mean[a] + half_widths * s);
    p.cells.push_back(cells_per_axis);
  }
  p.validate();
  return p;
}

std::vector<double> make_time_edges(double horizon, std::size_t cells,
                                    std::span<const double> jump_times) {
  if (cells == 0) throw std::invalid_argument("make_time_edges: cells must be >= 1");
  std::vector<double> edges(cells + 1);
  for (std::size_t j = 0; j <= cells; ++j) {
    edges[j] = horizon * static_cast<double>(j) / static_cast<double>(cells);
  }
  edges.back() = horizon;
  const double snap = 1e-9 * horizon;
  for (double t : jump_times) {
    auto it = std::lower_bound(edges.begin(), edges.end(), t - snap);
    if (it != edges.end() && std::abs(*it - t) <= snap) continue;
    edges.insert(it, t);
  }
  return edges;
}

ControlKernel::ControlKernel(std::vector<double> time_edges, SpacePartition space,
                             std::vector<Vector> control_grid)
    : time_edges_(std::move(time_edges)), space_(std::move(space)), grid_(std::move(control_grid)) {
  if (time_edges_.size() < 2) throw std::invalid_argument("ControlKernel: need >= 1 time cell");
  for (std::size_t j = 1; j < time_edges_.size(); ++j) {
    if (!(time_edges_[j] > time_edges_[j - 1])) {
      throw std::invalid_argument("ControlKernel: time edges must increase");
    }
  }
  space_.validate();
  if (grid_.empty()) throw std::invalid_argument("ControlKernel: empty control grid");
  space_cells_ = space_.count();
  const std::size_t cells = time_cells() * space_cells_;
  table_.assign(cells * grid_.size(), 0.0);
  dirac_.assign(cells, -1);
}

ControlKernel ControlKernel::midpoint(std::vector<double> time_edges, SpacePartition space,
                                      std::vector<Vector> control_grid) {
  ControlKernel k(std::move(time_edges), std::move(space), std::move(control_grid));
  Vector lo = k.grid_.front(), hi = k.grid_.front();
  for (const auto& u : k.grid_) {
    for (std::size_t i = 0; i < u.size(); ++i) {
      lo[i] = std::min(lo[i], u[i]);
      hi[i] = std::max(hi[i], u[i]);
    }
  }
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t g = 0; g < k.grid_.size(); ++g) {
    double d = 0.0;
    for (std::size_t i = 0; i < lo.size(); ++i) {
      const double e = k.grid_[g][i] - 0.5 * (lo[i] + hi[i]);
      d += e * e;
    }
    if (d < best_d - 1e-15) {
      best_d = d;
      best = g;
    }
  }
  Vector p(k.grid_.size(), 0.0);
  p[best] = 1.0;
  for (std::size_t j = 0; j < k.time_cells(); ++j) {
    for (std::size_t s = 0; s < k.space_cells_; ++s) k.set_probs(j, s, p);
  }
  return k;
}

ControlKernel ControlKernel::uniform(std::vector<double> time_edges, SpacePartition space,
                                     std::vector<Vector> control_grid) {
  ControlKernel k(std::move(time_edges), std::move(space), std::move(control_grid));
  const Vector p(k.grid_.size(), 1.0 / static_cast<double>(k.grid_.size()));
  for (std::size_t j = 0; j < k.time_cells(); ++j) {
    for (std::size_t s = 0; s < k.space_cells_; ++s) k.set_probs(j, s, p);
  }
  return k;
}

ControlKernel ControlKernel::from_feedback(
    std::vector<double> time_edges, SpacePartition space, std::vector<Vector> control_grid,
    const std::function<Vector(double, std::span<const double>)>& feedback) {
  ControlKernel k(std::move(time_edges), std::move(space), std::move(control_grid));
  Vector p(k.grid_.size());
  for (std::size_t j = 0; j < k.time_cells(); ++j) {
    const double t = 0.5 * (k.time_edges_[j] + k.time_edges_[j + 1]);
    for (std::size_t s = 0; s < k.space_cells_; ++s) {
      const Vector u = feedback(t, k.space_.center(s));
      std::size_t best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t g = 0; g < k.grid_.size(); ++g) {
        double d = 0.0;
        for (std::size_t i = 0; i < u.size(); ++i) {
          d += (k.grid_[g][i] - u[i]) * (k.grid_[g][i] - u[i]);
        }
        if (d < best_d) {
          best_d = d;
          best = g;
        }
      }
      std::fill(p.begin(), p.end(), 0.0);
      p[best] = 1.0;
      k.set_probs(j, s, p);
    }
  }
  return k;
}

std::size_t ControlKernel::time_cell(double t) const {
  const double slack = 1e-9 * time_edges_.back();
  auto it = std::upper_bound(time_edges_.begin(), time_edges_.end(), t + slack);
  const auto idx = static_cast<std::ptrdiff_t>(it - time_edges_.begin()) - 1;
  return static_cast<std::size_t>(
      std::clamp<std::ptrdiff_t>(idx, 0, static_cast<std::ptrdiff_t>(time_cells()) - 1));
}

void ControlKernel::set_probs(std::size_t j, std::size_t s, std::span<const double> p) {
  if (p.size() != grid_.size()) throw std::invalid_argument("set_probs: size mismatch");
  double total = 0.0;
  for (double v : p) {
    if (!(v >= 0.0)) throw std::invalid_argument("set_probs: negative probability");
    total += v;
  }
  if (std::abs(total - 1.0) > 1e-12) throw std::invalid_argument("set_probs: vector does not sum to 1");
  const std::size_t cell = j * space_cells_ + s;
  std::copy(p.begin(), p.end(), table_.begin() + static_cast<std::ptrdiff_t>(cell * grid_.size()));
  refresh(cell);
}

void ControlKernel::refresh(std::size_t cell) {
  const double* p = table_.data() + cell * grid_.size();
  dirac_[cell] = -1;
  for (std::size_t g = 0; g < grid_.size(); ++g) {
    if (p[g] == 1.0) {
      dirac_[cell] = static_cast<int>(g);
      return;
    }
  }
}

std::size_t ControlKernel::sample(std::size_t j, std::size_t s, double u01) const {
  const int d = dirac_index(j, s);
  if (d >= 0) return static_cast<std::size_t>(d);
  const auto p = probs(j, s);
  double acc = 0.0;
  for (std::size_t g = 0; g < p.size(); ++g) {
    acc += p[g];
    if (u01 < acc) return g;
  }
  // Rounding left u01 above the accumulated mass: take the last charged point.
  for (std::size_t g = p.size(); g-- > 0;) {
    if (p[g] > 0.0) return g;
  }
  return 0;
}

double ControlKernel::entropy(std::size_t j, std::size_t s) const {
  double h = 0.0;
  for (double p : probs(j, s)) {
    if (p > 0.0) h -= p * std::log(p);
  }
  return h;
}

void ControlKernel::validate(const ControlSet* set) const {
  for (std::size_t j = 0; j < time_cells(); ++j) {
    for (std::size_t s = 0; s < space_cells_; ++s) {
      const auto p = probs(j, s);
      double total = 0.0;
      for (double v : p) {
        if (!(v >= 0.0)) throw std::invalid_argument("ControlKernel: negative probability");
        total += v;
      }
      if (std::abs(total - 1.0) > 1e-12) {
        throw std::invalid_argument("ControlKernel: cell (" + std::to_string(j) + "," +
                                    std::to_string(s) + ") does not sum to 1");
      }
    }
  }
  if (set) {
    for (const auto& u : grid_) {
      if (u.size() != set->dim() || !set->contains(u, 1e-12)) {
        throw std::invalid_argument("ControlKernel: control grid leaves the control set");
      }
    }
  }
}

bool ControlKernel::operator==(const ControlKernel& other) const {
  return time_edges_ == other.time_edges_ && space_.lower == other.space_.lower &&
         space_.upper == other.space_.upper && space_.cells == other.space_.cells &&
         grid_ == other.grid_ && table_ == other.table_;
}

std::vector<Vector> linear_control_grid(double lo, double hi, std::size_t points) {
  if (points == 0 || !(lo <= hi)) throw std::invalid_argument("linear_control_grid: bad range");
  std::vector<Vector> grid;
  grid.reserve(points);
  if (points == 1) return {{0.5 * (lo + hi)}};
  for (std::size_t i = 0; i < points; ++i) {
    grid.push_back({lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(points - 1)});
  }
  grid.back()[0] = hi;
  return grid;
}

std::string kernel_to_json(const ControlKernel& kernel) {
  nlohmann::json j;
  j["time_edges"] = kernel.time_edges();
  j["space"] = {{"lower", kernel.space().lower},
                {"upper", kernel.space().upper},
                {"cells", kernel.space().cells}};
  j["control_grid"] = kernel.control_grid();
  j["table"] = kernel.table();
  return j.dump();
}

ControlKernel kernel_from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  SpacePartition space;
  space.lower = j.at("space").at("lower").get<Vector>();
  space.upper = j.at("space").at("upper").get<Vector>();
  space.cells = j.at("space").at("cells").get<std::vector<std::size_t>>();
  ControlKernel k(j.at("time_edges").get<std::vector<double>>(), std::move(space),
                  j.at("control_grid").get<std::vector<Vector>>());
  const auto table = j.at("table").get<std::vector<double>>();
  if (table.size() != k.table().size()) {
    throw std::invalid_argument("kernel_from_json: table size mismatch");
  }
  const std::size_t g = k.grid_size();
  for (std::size_t t = 0; t < k.time_cells(); ++t) {
    for (std::size_t s = 0; s < k.space_cells(); ++s) {
      k.set_probs(t, s, std::span(table).subspan((t * k.space_cells() + s) * g, g));
    }
  }
  k.validate();
  return k;
}

std::uint64_t digest(const ControlKernel& kernel) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  auto feed = [&](double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    for (int i = 0; i < 8; ++i) {
      h ^= (bits >> (8 * i)) & 0xFF;
      h *= 0x100000001B3ULL;
    }
  };
  for (double t : kernel.time_edges()) feed(t);
  for (double v : kernel.space().lower) feed(v);
  for (double v : kernel.space().upper) feed(v);
  for (std::size_t c : kernel.space().cells) feed(static_cast<double>(c));
  for (const auto& u : kernel.control_grid()) {
    for (double v : u) feed(v);
  }
  for (double p : kernel.table()) feed(p);
  return h;
}

ControlKernel strictify(const ControlKernel& kernel) {
  ControlKernel out = kernel;
  Vector p(kernel.grid_size());
  for (std::size_t j = 0; j < kernel.time_cells(); ++j) {
    for (std::size_t s = 0; s < kernel.space_cells(); ++s) {
      const auto q = kernel.probs(j, s);
      // max_element returns the first maximum: ties go to the smallest index.
      const auto best = static_cast<std::size_t>(std::max_element(q.begin(), q.end()) - q.begin());
      std::fill(p.begin(), p.end(), 0.0);
      p[best] = 1.0;
      out.set_probs(j, s, p);
    }
  }
  return out;
}

}  // namespace mfcn
