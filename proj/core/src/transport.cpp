#include "mfcn/transport.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace mfcn {

namespace {

struct BasicCell {
  std::size_t row;
  std::size_t col;
  double flow;
};

class NetworkSimplex {
 public:
  NetworkSimplex(std::span<const double> supply, std::span<const double> demand,
                 std::span<const double> cost)
      : n_(supply.size()),
        m_(demand.size()),
        cost_(cost),
        adjacency_(n_ + m_),
        u_(n_, 0.0),
        v_(m_, 0.0) {
    double scale = 0.0;
    for (double c : cost_) scale = std::max(scale, std::abs(c));
    tolerance_ = 1e-12 * std::max(scale, 1.0);
    northwest_corner(supply, demand);
  }

  TransportSolution solve() {
    TransportSolution out;
    const std::size_t max_pivots = 200 * (n_ + m_) * (n_ + m_) + 1000;
    compute_potentials();
    for (;;) {
      std::size_t row = 0, col = 0;
      if (!price(row, col)) break;
      pivot(row, col);
      compute_potentials();
      if (++out.pivots > max_pivots) {
        throw std::runtime_error("network simplex: pivot limit exceeded");
      }
    }
    for (const auto& cell : basis_) {
      if (cell.flow <= 0.0) continue;
      out.cost += cell.flow * c(cell.row, cell.col);
      out.plan.push_back({cell.row, cell.col, cell.flow});
    }
    return out;
  }

 private:
  double c(std::size_t i, std::size_t j) const { return cost_[i * m_ + j]; }

  void add_basic(std::size_t i, std::size_t j, double flow) {
    const std::size_t id = basis_.size();
    basis_.push_back({i, j, flow});
    adjacency_[i].push_back(id);
    adjacency_[n_ + j].push_back(id);
  }

  // Staircase initial basis; a tie exhausts only the row so the degenerate
  // zero cell keeps the basis a spanning tree with n + m - 1 edges.
  void northwest_corner(std::span<const double> supply,
                        std::span<const double> demand) {
    std::size_t i = 0, j = 0;
    double ra = supply[0], rb = demand[0];
    basis_.reserve(n_ + m_ - 1);
    for (;;) {
      const double f = std::max(0.0, std::min(ra, rb));
      add_basic(i, j, f);
      ra -= f;
      rb -= f;
      if (i + 1 == n_ && j + 1 == m_) break;
      if (i + 1 == n_) {
        rb = demand[++j];
      } else if (j + 1 == m_) {
        ra = supply[++i];
      } else if (ra <= rb) {
        ra = supply[++i];
      } else {
        rb = demand[++j];
      }
    }
  }

  void compute_potentials() {
    std::vector<char> seen(n_ + m_, 0);
    std::vector<std::size_t> stack{0};
    seen[0] = 1;
    u_[0] = 0.0;
    while (!stack.empty()) {
      const std::size_t node = stack.back();
      stack.pop_back();
      for (std::size_t id : adjacency_[node]) {
        const auto& cell = basis_[id];
        if (node < n_) {
          const std::size_t other = n_ + cell.col;
          if (seen[other]) continue;
          v_[cell.col] = c(cell.row, cell.col) - u_[cell.row];
          seen[other] = 1;
          stack.push_back(other);
        } else {
          if (seen[cell.row]) continue;
          u_[cell.row] = c(cell.row, cell.col) - v_[cell.col];
          seen[cell.row] = 1;
          stack.push_back(cell.row);
        }
      }
    }
  }

  // Block-search pricing: scan blocks of cells cyclically and return the most
  // negative reduced cost of the first block containing one.
  bool price(std::size_t& row, std::size_t& col) {
    const std::size_t total = n_ * m_;
    const std::size_t block =
        std::max<std::size_t>(16, static_cast<std::size_t>(std::sqrt(
                                      static_cast<double>(total))));
    double best = -tolerance_;
    bool found = false;
    std::size_t scanned = 0;
    while (scanned < total) {
      const std::size_t stop = std::min(total, scanned + block);
      for (; scanned < stop; ++scanned) {
        const std::size_t k = cursor_;
        cursor_ = (cursor_ + 1 == total) ? 0 : cursor_ + 1;
        const std::size_t i = k / m_, j = k % m_;
        const double reduced = c(i, j) - u_[i] - v_[j];
        if (reduced < best) {
          best = reduced;
          row = i;
          col = j;
          found = true;
        }
      }
      if (found) return true;
    }
    return false;
  }

  void pivot(std::size_t row, std::size_t col) {
    // Tree path from the entering column node back to the entering row node.
    const std::size_t start = n_ + col;
    const std::size_t goal = row;
    std::vector<std::ptrdiff_t> parent_edge(n_ + m_, -1);
    std::vector<char> seen(n_ + m_, 0);
    std::vector<std::size_t> queue{start};
    seen[start] = 1;
    for (std::size_t head = 0; head < queue.size() && !seen[goal]; ++head) {
      const std::size_t node = queue[head];
      for (std::size_t id : adjacency_[node]) {
        const auto& cell = basis_[id];
        const std::size_t other = node < n_ ? n_ + cell.col : cell.row;
        if (seen[other]) continue;
        seen[other] = 1;
        parent_edge[other] = static_cast<std::ptrdiff_t>(id);
        queue.push_back(other);
      }
    }
    // Walk back from goal to start; edges nearest the column get -theta.
    std::vector<std::size_t> path;
    for (std::size_t node = goal; node != start;) {
      const auto id = static_cast<std::size_t>(parent_edge[node]);
      path.push_back(id);
      const auto& cell = basis_[id];
      node = (node < n_) ? n_ + cell.col : cell.row;
    }
    std::reverse(path.begin(), path.end());  // path[0] touches the column
    double theta = INFINITY;
    std::size_t leaving = path[0];
    for (std::size_t k = 0; k < path.size(); k += 2) {
      if (basis_[path[k]].flow < theta) {
        theta = basis_[path[k]].flow;
        leaving = path[k];
      }
    }
    theta = std::max(theta, 0.0);
    for (std::size_t k = 0; k < path.size(); ++k) {
      basis_[path[k]].flow += (k % 2 == 0) ? -theta : theta;
    }
    // Swap the leaving edge for the entering one in place.
    auto detach = [&](std::size_t node, std::size_t id) {
      auto& adj = adjacency_[node];
      adj.erase(std::find(adj.begin(), adj.end(), id));
    };
    detach(basis_[leaving].row, leaving);
    detach(n_ + basis_[leaving].col, leaving);
    basis_[leaving] = {row, col, theta};
    adjacency_[row].push_back(leaving);
    adjacency_[n_ + col].push_back(leaving);
  }

  std::size_t n_, m_;
  std::span<const double> cost_;
  std::vector<BasicCell> basis_;
  std::vector<std::vector<std::size_t>> adjacency_;
  std::vector<double> u_, v_;
  double tolerance_ = 0.0;
  std::size_t cursor_ = 0;
};

}  // namespace

TransportSolution solve_transport(std::span<const double> supply,
                                  std::span<const double> demand,
                                  std::span<const double> cost) {
  if (supply.empty() || demand.empty()) {
    throw std::invalid_argument("solve_transport: empty marginal");
  }
  if (cost.size() != supply.size() * demand.size()) {
    throw std::invalid_argument("solve_transport: cost matrix size mismatch");
  }
  const double sa = std::accumulate(supply.begin(), supply.end(), 0.0);
  const double sb = std::accumulate(demand.begin(), demand.end(), 0.0);
  if (std::abs(sa - sb) > 1e-9 * std::max(1.0, std::abs(sa))) {
    throw std::invalid_argument("solve_transport: unbalanced marginals");
  }
  return NetworkSimplex(supply, demand, cost).solve();
}

}  // namespace mfcn
