#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace distill {

struct PlotSeries {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
  std::string color = "#1f77b4";
  bool scatter = false;
  double radius = 2.0;
  double opacity = 1.0;
};

struct PlotSpec {
  std::string title;
  std::string x_label;
  std::string y_label;
  /// Log-scaled y axis; non-positive values are dropped from the plot.
  bool log_y = false;
  /// Square data aspect, for point clouds.
  bool equal_axes = false;
  std::vector<PlotSeries> series;
};

/// Standalone SVG. The plot area is a <g class="plot-area"> carrying its data
/// ranges and pixel box as data-* attributes, so coordinates can be inverted.
std::string render_svg(const PlotSpec& spec);

/// Reads trajectory.csv (required), norms.csv and samples.csv from `dir` and writes
/// kl.svg, norms.svg and samples.svg for the tables present. Returns the written paths.
std::vector<std::filesystem::path> emit_plots(const std::filesystem::path& dir);

}  // namespace distill
