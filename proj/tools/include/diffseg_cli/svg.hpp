#pragma once

#include <string>
#include <vector>

namespace diffseg::cli {

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

struct PlotSpec {
  std::string title;
  std::string x_label = "t";
  std::string y_label;
  int width = 640;
  int height = 400;
};

/// Standalone SVG document: axes with min/max ticks, one <polyline> per series,
/// and a legend entry (<text class="legend">) per series label.
std::string line_plot_svg(const PlotSpec& spec, const std::vector<Series>& series);

}  // namespace diffseg::cli
