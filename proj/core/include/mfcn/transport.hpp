#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace mfcn {

struct TransportPlanEntry {
  std::size_t source;
  std::size_t target;
  double mass;
};

struct TransportSolution {
  double cost = 0.0;
  std::vector<TransportPlanEntry> plan;  // basic cells with positive mass
  std::size_t pivots = 0;
};

/// Balanced transportation problem min sum c_ij x_ij subject to row sums
/// `supply` and column sums `demand`, solved by the network simplex method
/// on the bipartite graph (spanning-tree basis, block-search pricing).
/// `cost` is row-major, supply.size() x demand.size(). Supply and demand
/// must carry the same total mass.
TransportSolution solve_transport(std::span<const double> supply,
                                  std::span<const double> demand,
                                  std::span<const double> cost);

}  // namespace mfcn
