#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mfcn/model.hpp"

namespace mfcn {

/// Axis-aligned grid of cells on a state box. Points outside the box are
/// assigned to the nearest boundary cell, so the overflow region shares
/// that cell's control vector.
struct SpacePartition {
  Vector lower, upper;
  std::vector<std::size_t> cells;  // per axis

  std::size_t dim() const { return lower.size(); }
  std::size_t count() const;
  std::size_t locate(std::span<const double> x) const;
  /// Center of a cell (row-major over axes, last axis fastest).
  Vector center(std::size_t cell) const;
  void validate() const;

  /// Box mean(lambda) +- half_widths * std per axis (std 0 counts as 1).
  static SpacePartition around(const InitialLaw& law, std::size_t cells_per_axis,
                               double half_widths = 6.0);
};

/// Uniform time edges on [0, T] with every jump time inserted.
std::vector<double> make_time_edges(double horizon, std::size_t cells,
                                    std::span<const double> jump_times = {});

/// Piecewise-constant relaxed feedback control: one probability vector over
/// a finite control grid per (time cell, space cell).
class ControlKernel {
 public:
  ControlKernel() = default;
  ControlKernel(std::vector<double> time_edges, SpacePartition space,
                std::vector<Vector> control_grid);

  /// All mass on the grid point closest to the middle of the control set.
  static ControlKernel midpoint(std::vector<double> time_edges, SpacePartition space,
                                std::vector<Vector> control_grid);
  static ControlKernel uniform(std::vector<double> time_edges, SpacePartition space,
                               std::vector<Vector> control_grid);
  /// Dirac at the grid point nearest to feedback(t, x) at each cell center.
  static ControlKernel from_feedback(
      std::vector<double> time_edges, SpacePartition space,
      std::vector<Vector> control_grid,
      const std::function<Vector(double, std::span<const double>)>& feedback);

  const std::vector<double>& time_edges() const { return time_edges_; }
  const SpacePartition& space() const { return space_; }
  const std::vector<Vector>& control_grid() const { return grid_; }
  std::size_t time_cells() const { return time_edges_.size() - 1; }
  std::size_t space_cells() const { return space_cells_; }
  std::size_t grid_size() const { return grid_.size(); }
  std::size_t control_dim() const { return grid_.front().size(); }
  const std::vector<double>& table() const { return table_; }

  /// Cell containing t; a time within 1e-9 T below an edge counts as being
  /// on that edge.
  std::size_t time_cell(double t) const;
  std::size_t space_cell(std::span<const double> x) const { return space_.locate(x); }

  std::span<const double> probs(std::size_t j, std::size_t s) const {
    return {table_.data() + (j * space_cells_ + s) * grid_.size(), grid_.size()};
  }
  void set_probs(std::size_t j, std::size_t s, std::span<const double> p);
  /// Grid index carrying all the mass, or -1.
  int dirac_index(std::size_t j, std::size_t s) const {
    return dirac_[j * space_cells_ + s];
  }
  /// Inverse-CDF draw from the cell's vector with a uniform in [0, 1).
  std::size_t sample(std::size_t j, std::size_t s, double u01) const;

  /// Shannon entropy of a cell vector (nats).
  double entropy(std::size_t j, std::size_t s) const;

  /// All cell vectors sum to 1 and the grid lies in the control set.
  void validate(const ControlSet* set = nullptr) const;

  bool operator==(const ControlKernel& other) const;

 private:
  void refresh(std::size_t cell);

  std::vector<double> time_edges_;
  SpacePartition space_;
  std::vector<Vector> grid_;
  std::size_t space_cells_ = 0;
  std::vector<double> table_;
  std::vector<int> dirac_;
};

/// Evenly spaced scalar control grid on [lo, hi].
std::vector<Vector> linear_control_grid(double lo, double hi, std::size_t points);

std::string kernel_to_json(const ControlKernel& kernel);
ControlKernel kernel_from_json(const std::string& text);

/// FNV-1a over edges, partition, grid and table bit patterns.
std::uint64_t digest(const ControlKernel& kernel);

/// Per-cell argmax, ties to the smallest grid index.
ControlKernel strictify(const ControlKernel& kernel);

}  // namespace mfcn
