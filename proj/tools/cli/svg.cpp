#include "cli/svg.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "scalerl/curve_io.hpp"

namespace scalerl::cli {
namespace {

constexpr double kWidth = 640, kHeight = 400;
constexpr double kLeft = 60, kRight = 20, kTop = 20, kBottom = 50;

struct Frame {
  double lx0, lx1, y0, y1;
  double x(double c) const { return kLeft + (std::log10(c) - lx0) / (lx1 - lx0) * (kWidth - kLeft - kRight); }
  double y(double r) const { return kTop + (y1 - r) / (y1 - y0) * (kHeight - kTop - kBottom); }
};

std::string num(double v) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(2);
  os << v;
  return os.str();
}

std::string polyline(const FitResult& fit, const Frame& f, double lo, double hi, const char* extra) {
  std::ostringstream os;
  os << "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\"" << extra << " points=\"";
  const int n = 200;
  for (int i = 0; i <= n; ++i) {
    const double c = lo * std::pow(hi / lo, static_cast<double>(i) / n);
    const double r = std::clamp(predict(fit, c), f.y0, f.y1);
    os << num(f.x(c)) << ',' << num(f.y(r)) << (i < n ? " " : "");
  }
  os << "\"/>\n";
  return os.str();
}

}  // namespace

std::string render_fit_svg(const TrainingCurve& data, const FitResult& fit, double extend_to) {
  double cmin = fit.window.first > 0.0 ? fit.window.first : fit.window.second / 100.0;
  double cmax = std::max(fit.window.second, extend_to);
  for (const auto& p : data.points) {
    if (p.compute > 0.0) {
      cmin = std::min(cmin, p.compute);
      cmax = std::max(cmax, p.compute);
    }
  }
  Frame f{std::floor(std::log10(cmin)), std::ceil(std::log10(cmax)), 0.0, 1.0};
  if (f.lx1 <= f.lx0) f.lx1 = f.lx0 + 1.0;

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
     << "\" viewBox=\"0 0 " << kWidth << ' ' << kHeight << "\">\n";
  os << "<!-- fit " << to_json(fit).dump() << " -->\n";
  os << "<!-- data\ncompute,reward\n";
  for (const auto& p : data.points) os << format_double(p.compute) << ',' << format_double(p.reward) << '\n';
  os << "-->\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";

  // axes, decade ticks on x, tenths on y
  const double xa = kLeft, xb = kWidth - kRight, ya = kTop, yb = kHeight - kBottom;
  os << "<g stroke=\"#444\" stroke-width=\"1\" font-family=\"sans-serif\" font-size=\"11\">\n";
  os << "<line x1=\"" << xa << "\" y1=\"" << yb << "\" x2=\"" << xb << "\" y2=\"" << yb << "\"/>\n";
  os << "<line x1=\"" << xa << "\" y1=\"" << ya << "\" x2=\"" << xa << "\" y2=\"" << yb << "\"/>\n";
  for (double e = f.lx0; e <= f.lx1 + 1e-9; e += 1.0) {
    const double x = f.x(std::pow(10.0, e));
    os << "<line x1=\"" << num(x) << "\" y1=\"" << yb << "\" x2=\"" << num(x) << "\" y2=\"" << yb + 5 << "\"/>\n";
    os << "<text stroke=\"none\" text-anchor=\"middle\" x=\"" << num(x) << "\" y=\"" << yb + 18 << "\">1e"
       << static_cast<int>(e) << "</text>\n";
  }
  for (int i = 0; i <= 10; i += 2) {
    const double y = f.y(i / 10.0);
    os << "<line x1=\"" << xa - 5 << "\" y1=\"" << num(y) << "\" x2=\"" << xa << "\" y2=\"" << num(y) << "\"/>\n";
    os << "<text stroke=\"none\" text-anchor=\"end\" x=\"" << xa - 8 << "\" y=\"" << num(y + 4) << "\">"
       << num(i / 10.0) << "</text>\n";
  }
  os << "<text stroke=\"none\" text-anchor=\"middle\" x=\"" << (xa + xb) / 2 << "\" y=\"" << kHeight - 10
     << "\">compute</text>\n";
  os << "<text stroke=\"none\" text-anchor=\"middle\" transform=\"rotate(-90)\" x=\"" << -(ya + yb) / 2
     << "\" y=\"15\">reward</text>\n</g>\n";

  os << "<g fill=\"#d62728\">\n";
  for (const auto& p : data.points) {
    if (p.compute <= 0.0) continue;
    os << "<circle r=\"2.5\" cx=\"" << num(f.x(p.compute)) << "\" cy=\"" << num(f.y(p.reward)) << "\"/>\n";
  }
  os << "</g>\n";

  const double lo = fit.window.first > 0.0 ? fit.window.first : cmin;
  const double hi = fit.window.second;
  if (hi > lo) os << polyline(fit, f, lo, hi, " class=\"fit\"");
  if (cmax > hi) os << polyline(fit, f, hi, cmax, " class=\"extrapolation\" stroke-dasharray=\"6 4\"");
  os << "</svg>\n";
  return os.str();
}

}  // namespace scalerl::cli
