#include "cinegen/plots.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace cinegen {

namespace {

double quantile_sorted(const std::vector<double>& s, double q) {
  const double pos = q * static_cast<double>(s.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, s.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return s[lo] * (1.0 - frac) + s[hi] * frac;
}

void check_cohorts(const std::vector<CurveCohort>& cohorts) {
  if (cohorts.empty()) throw std::invalid_argument("no cohorts to plot");
  for (const auto& c : cohorts) {
    if (c.curves.empty()) throw std::invalid_argument("cohort '" + c.name + "' has no curves");
    for (const auto& v : c.curves)
      if (v.size() != c.curves.front().size() || v.empty())
        throw std::invalid_argument("cohort '" + c.name + "' has curves of unequal length");
  }
}

}  // namespace

CurveSummary summarize_curves(const std::vector<std::vector<double>>& curves) {
  if (curves.empty()) throw std::invalid_argument("no curves to summarize");
  const std::size_t T = curves.front().size();
  CurveSummary s;
  s.mean.assign(T, 0.0);
  s.q25.resize(T);
  s.q75.resize(T);
  std::vector<double> col(curves.size());
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t i = 0; i < curves.size(); ++i) {
      col[i] = curves[i].at(t);
      s.mean[t] += col[i];
    }
    s.mean[t] /= static_cast<double>(curves.size());
    std::sort(col.begin(), col.end());
    s.q25[t] = quantile_sorted(col, 0.25);
    s.q75[t] = quantile_sorted(col, 0.75);
  }
  return s;
}

void write_curves_csv(const std::filesystem::path& path, const std::vector<CurveCohort>& cohorts) {
  check_cohorts(cohorts);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << std::setprecision(17);
  out << "cohort,curve,frame,value,mean,q25,q75\n";
  for (const auto& c : cohorts) {
    const auto s = summarize_curves(c.curves);
    for (std::size_t i = 0; i < c.curves.size(); ++i)
      for (std::size_t t = 0; t < c.curves[i].size(); ++t)
        out << c.name << ',' << i << ',' << t << ',' << c.curves[i][t] << ',' << s.mean[t] << ','
            << s.q25[t] << ',' << s.q75[t] << '\n';
  }
}

void write_curves_svg(const std::filesystem::path& path, const std::vector<CurveCohort>& cohorts) {
  check_cohorts(cohorts);
  constexpr double kPanelW = 320, kPanelH = 240, kMargin = 40;
  const double width = kPanelW * static_cast<double>(cohorts.size()) + kMargin;
  const double height = kPanelH + 2 * kMargin;

  double lo = 1e300, hi = -1e300;
  for (const auto& c : cohorts)
    for (const auto& v : c.curves)
      for (double x : v) {
        lo = std::min(lo, x);
        hi = std::max(hi, x);
      }
  lo = std::min(lo, 0.0);
  hi = std::max(hi, 1.0);

  std::ostringstream svg;
  svg << std::fixed << std::setprecision(2);
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (std::size_t p = 0; p < cohorts.size(); ++p) {
    const auto& c = cohorts[p];
    const std::size_t T = c.curves.front().size();
    const double x0 = kMargin + kPanelW * static_cast<double>(p);
    const double y0 = kMargin;
    const double pw = kPanelW - kMargin, ph = kPanelH;
    auto px = [&](std::size_t t) {
      return x0 + (T > 1 ? pw * static_cast<double>(t) / static_cast<double>(T - 1) : 0.0);
    };
    auto py = [&](double v) { return y0 + ph * (1.0 - (v - lo) / (hi - lo)); };
    auto polyline = [&](const std::vector<double>& v) {
      std::ostringstream s;
      s << std::fixed << std::setprecision(2);
      for (std::size_t t = 0; t < v.size(); ++t) s << (t ? " " : "") << px(t) << ',' << py(v[t]);
      return s.str();
    };

    svg << "<g>\n<text x=\"" << x0 << "\" y=\"" << y0 - 10 << "\">" << c.name << " (n=" << c.curves.size()
        << ")</text>\n";
    svg << "<rect x=\"" << x0 << "\" y=\"" << y0 << "\" width=\"" << pw << "\" height=\"" << ph
        << "\" fill=\"none\" stroke=\"black\"/>\n";
    for (const auto& v : c.curves)
      svg << "<polyline fill=\"none\" stroke=\"#c8c8c8\" stroke-width=\"0.8\" points=\""
          << polyline(v) << "\"/>\n";
    const auto s = summarize_curves(c.curves);
    svg << "<polygon fill=\"#9ecae1\" fill-opacity=\"0.6\" stroke=\"none\" points=\"";
    for (std::size_t t = 0; t < T; ++t) svg << px(t) << ',' << py(s.q75[t]) << ' ';
    for (std::size_t t = T; t-- > 0;) svg << px(t) << ',' << py(s.q25[t]) << (t ? " " : "");
    svg << "\"/>\n";
    svg << "<polyline fill=\"none\" stroke=\"#08306b\" stroke-width=\"2\" points=\""
        << polyline(s.mean) << "\"/>\n";
    svg << "<text x=\"" << x0 << "\" y=\"" << y0 + ph + 15 << "\">0</text>\n";
    svg << "<text x=\"" << x0 + pw - 10 << "\" y=\"" << y0 + ph + 15 << "\">" << T - 1 << "</text>\n";
    svg << "<text x=\"" << x0 + pw / 2 - 20 << "\" y=\"" << y0 + ph + 28 << "\">frame</text>\n";
    svg << "<text x=\"" << x0 - 30 << "\" y=\"" << py(1.0) + 4 << "\">1.0</text>\n";
    svg << "</g>\n";
  }
  svg << "</svg>\n";
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << svg.str();
}

void emit_plots(const std::vector<CurveCohort>& cohorts, const std::filesystem::path& csv,
                const std::filesystem::path& svg) {
  write_curves_csv(csv, cohorts);
  write_curves_svg(svg, cohorts);
}

}  // namespace cinegen
