// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <fstream>
#include <string>
#include <vector>

#include "tfuse/common.hpp"

namespace tfuse {

struct BarSeries {
  std::string name;
  std::vector<double> values;
};

/// Minimal grouped bar chart, one group per label.
inline void svg_grouped_bars(const std::string& title, const std::vector<std::string>& labels,
                             const std::vector<BarSeries>& series, const std::string& path,
                             double y_max = 0.0) {
  check(!series.empty(), Errc::usage, "svg: no series");
  const int w = 720, h = 420, ml = 60, mr = 20, mt = 48, mb = 70;
  const int plot_w = w - ml - mr, plot_h = h - mt - mb;
  double vmax = y_max;
  if (vmax <= 0) {
    for (const auto& s : series)
      for (double v : s.values) vmax = std::max(vmax, v);
    vmax = vmax <= 0 ? 1.0 : vmax * 1.15;
  }
  const char* palette[] = {"#4878cf", "#e1812c", "#3a923a", "#c03d3e", "#8172b2", "#6f6f6f"};

  std::ofstream f(path);
  check(f.good(), Errc::io, "cannot write svg: " + path);
  f << "<svg xmlns='http://www.w3.org/2000/svg' width='" << w << "' height='" << h << "'>\n";
  f << "<rect width='100%' height='100%' fill='white'/>\n";
  f << "<text x='" << w / 2 << "' y='24' text-anchor='middle' font-size='16' "
       "font-family='sans-serif'>" << title << "</text>\n";
  // axes
  f << "<line x1='" << ml << "' y1='" << mt << "' x2='" << ml << "' y2='" << mt + plot_h
    << "' stroke='black'/>\n";
  f << "<line x1='" << ml << "' y1='" << mt + plot_h << "' x2='" << ml + plot_w << "' y2='"
    << mt + plot_h << "' stroke='black'/>\n";
  for (int tick = 0; tick <= 4; ++tick) {
    const double v = vmax * tick / 4;
    const int y = mt + plot_h - static_cast<int>(plot_h * tick / 4.0);
    f << "<text x='" << ml - 8 << "' y='" << y + 4
      << "' text-anchor='end' font-size='11' font-family='sans-serif'>";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    f << buf << "</text>\n";
    f << "<line x1='" << ml << "' y1='" << y << "' x2='" << ml + plot_w << "' y2='" << y
      << "' stroke='#dddddd'/>\n";
  }
  const size_t groups = labels.size();
  const double group_w = static_cast<double>(plot_w) / std::max<size_t>(1, groups);
  const double bar_w = group_w * 0.8 / series.size();
  for (size_t gi = 0; gi < groups; ++gi) {
    for (size_t si = 0; si < series.size(); ++si) {
      if (gi >= series[si].values.size()) continue;
      const double v = series[si].values[gi];
      const int bh = static_cast<int>(plot_h * std::clamp(v / vmax, 0.0, 1.0));
      const double x = ml + gi * group_w + group_w * 0.1 + si * bar_w;
      f << "<rect x='" << x << "' y='" << mt + plot_h - bh << "' width='" << bar_w * 0.92
        << "' height='" << bh << "' fill='" << palette[si % 6] << "'/>\n";
    }
    f << "<text x='" << ml + gi * group_w + group_w / 2 << "' y='" << mt + plot_h + 18
      << "' text-anchor='middle' font-size='11' font-family='sans-serif'>" << labels[gi]
      << "</text>\n";
  }
  // legend
  for (size_t si = 0; si < series.size(); ++si) {
    const int x = ml + static_cast<int>(si) * 150, y = h - 26;
    f << "<rect x='" << x << "' y='" << y - 10 << "' width='12' height='12' fill='"
      << palette[si % 6] << "'/>\n";
    f << "<text x='" << x + 18 << "' y='" << y
      << "' font-size='12' font-family='sans-serif'>" << series[si].name << "</text>\n";
  }
  f << "</svg>\n";
}

}  // namespace tfuse
