#pragma once

#include <string>
#include <vector>

namespace levyfilter {

struct PlotSeries {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

struct PlotOptions {
  bool log_x = false;
  bool log_y = false;
  std::string title;
  std::string x_label;
  std::string y_label;
};

/// Self-contained SVG line plot (axes, ticks, legend), one polyline per
/// series. Byte-identical output for identical input.
std::string emit_svg(const std::vector<PlotSeries>& series, const PlotOptions& options);

}  // namespace levyfilter
