#pragma once

#include "gmetro/graph.hpp"

#include <string>
#include <vector>

namespace gmetro {

struct BarSeries {
  std::string name;
  std::vector<double> values;
  std::vector<double> errors;  // optional, same length as values
};

/// Grouped vertical bars, one group per label. Values are plotted on [0, ymax]
/// where ymax is the larger of 1 and the largest value.
std::string bar_chart_svg(const std::string& title, const std::vector<std::string>& labels,
                          const std::vector<BarSeries>& series);

/// Cells shaded from white (0) to dark blue (max of the matrix, or 1).
std::string heatmap_svg(const std::string& title, const Matrix& m, const std::vector<std::string>& row_labels,
                        const std::vector<std::string>& col_labels);

}  // namespace gmetro
