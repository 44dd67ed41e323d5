#include "wwf/svg.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

namespace wwf::svg {

namespace {

constexpr double kWidth = 800, kHeight = 400, kLeft = 60, kRight = 20, kTop = 40, kBottom = 50;

std::string f(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

struct Frame {
  double x0, x1, y0, y1;
  double px(double x) const { return kLeft + (x - x0) / (x1 - x0) * (kWidth - kLeft - kRight); }
  double py(double y) const { return kHeight - kBottom - (y - y0) / (y1 - y0) * (kHeight - kTop - kBottom); }
};

void header(std::ostringstream& os, const std::string& title, const std::string& provenance) {
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
     << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  os << "<!-- " << escape(provenance) << " -->\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << kWidth / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << escape(title)
     << "</text>\n";
}

void axes(std::ostringstream& os, const Frame& fr, const std::string& ylabel) {
  os << "<line x1=\"" << kLeft << "\" y1=\"" << kHeight - kBottom << "\" x2=\"" << kWidth - kRight << "\" y2=\""
     << kHeight - kBottom << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << kLeft << "\" y1=\"" << kTop << "\" x2=\"" << kLeft << "\" y2=\"" << kHeight - kBottom
     << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double v = fr.y0 + (fr.y1 - fr.y0) * i / 4.0;
    os << "<text x=\"" << kLeft - 5 << "\" y=\"" << f(fr.py(v) + 4) << "\" text-anchor=\"end\">" << f(v)
       << "</text>\n";
  }
  os << "<text x=\"14\" y=\"" << kHeight / 2 << "\" transform=\"rotate(-90 14 " << kHeight / 2
     << ")\" text-anchor=\"middle\">" << escape(ylabel) << "</text>\n";
}

std::string polyline(const Frame& fr, const std::vector<double>& x, const std::vector<double>& y) {
  std::string pts;
  for (std::size_t i = 0; i < x.size(); ++i) pts += f(fr.px(x[i])) + "," + f(fr.py(y[i])) + " ";
  return pts;
}

}  // namespace

std::string forecast_chart(const std::string& title, const CountyPanel& panel, const BacktestResult& result,
                           const std::string& provenance) {
  const std::size_t nq = result.quantiles.size(), med = result.median_index();
  const std::size_t lo = 0, hi = nq - 1;
  std::vector<const QuantileForecast*> blocks;
  for (const auto& fc : result.forecasts)
    if (fc.county_id == panel.county_id) blocks.push_back(&fc);

  // Show the test region plus one look-back of context.
  const std::size_t start = panel.split.val_end > 30 ? panel.split.val_end - 30 : 0;
  double ymax = 1e-9;
  for (std::size_t i = start; i < panel.length(); ++i) ymax = std::max(ymax, panel.target_raw[i]);
  for (const auto* b : blocks)
    for (std::size_t h = 0; h < b->actual.size(); ++h) ymax = std::max(ymax, b->values[h * nq + hi]);
  Frame fr{static_cast<double>(start), static_cast<double>(panel.length() - 1), 0.0, ymax * 1.05};

  std::ostringstream os;
  header(os, title, provenance);
  axes(os, fr, "daily cases per 100k");
  for (const auto* b : blocks) {
    std::vector<double> x, lower, upper, mid;
    for (std::size_t h = 0; h < b->actual.size(); ++h) {
      x.push_back(static_cast<double>(b->origin + h));
      lower.push_back(b->values[h * nq + lo]);
      upper.push_back(b->values[h * nq + hi]);
      mid.push_back(b->values[h * nq + med]);
    }
    std::vector<double> rx(x.rbegin(), x.rend()), ru(upper.rbegin(), upper.rend());
    os << "<polygon fill=\"#9ecae1\" fill-opacity=\"0.6\" stroke=\"none\" points=\"" << polyline(fr, x, lower)
       << polyline(fr, rx, ru) << "\"/>\n";
    os << "<polyline fill=\"none\" stroke=\"#08519c\" stroke-width=\"1.5\" points=\"" << polyline(fr, x, mid)
       << "\"/>\n";
  }
  std::vector<double> ax, ay;
  for (std::size_t i = start; i < panel.length(); ++i) {
    ax.push_back(static_cast<double>(i));
    ay.push_back(panel.target_raw[i]);
  }
  os << "<polyline fill=\"none\" stroke=\"black\" stroke-width=\"1\" points=\"" << polyline(fr, ax, ay) << "\"/>\n";
  const double split_x = fr.px(static_cast<double>(panel.split.val_end));
  os << "<line x1=\"" << f(split_x) << "\" y1=\"" << kTop << "\" x2=\"" << f(split_x) << "\" y2=\""
     << kHeight - kBottom << "\" stroke=\"gray\" stroke-dasharray=\"4 3\"/>\n";
  os << "<text x=\"" << kLeft << "\" y=\"" << kHeight - 15 << "\">" << panel.dates[start].iso() << "</text>\n";
  os << "<text x=\"" << kWidth - kRight << "\" y=\"" << kHeight - 15 << "\" text-anchor=\"end\">"
     << panel.dates.back().iso() << "</text>\n";
  os << "</svg>\n";
  return os.str();
}

std::string bar_chart(const std::string& title, const std::vector<std::string>& labels,
                      const std::vector<double>& values, const std::string& provenance) {
  std::ostringstream os;
  header(os, title, provenance);
  const double vmax = std::max(1e-9, *std::max_element(values.begin(), values.end()));
  const double left = 160, bar_h = std::min(28.0, (kHeight - kTop - 20) / static_cast<double>(values.size()));
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double y = kTop + static_cast<double>(i) * bar_h;
    const double w = values[i] / vmax * (kWidth - left - 80);
    os << "<text x=\"" << left - 6 << "\" y=\"" << f(y + bar_h * 0.65) << "\" text-anchor=\"end\">"
       << escape(labels[i]) << "</text>\n";
    os << "<rect x=\"" << left << "\" y=\"" << f(y + 2) << "\" width=\"" << f(w) << "\" height=\"" << f(bar_h - 4)
       << "\" fill=\"#3182bd\"/>\n";
    os << "<text x=\"" << f(left + w + 4) << "\" y=\"" << f(y + bar_h * 0.65) << "\">" << f(values[i])
       << "%</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace wwf::svg
