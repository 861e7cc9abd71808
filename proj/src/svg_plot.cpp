#include "distill/svg_plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "distill/runner.hpp"
#include "distill/trajectory.hpp"

namespace distill {

namespace fs = std::filesystem;

namespace {

constexpr double kWidth = 640, kHeight = 420;
constexpr double kLeft = 70, kRight = 160, kTop = 36, kBottom = 50;

const char* const kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

std::string px(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3f", v);
  return buf;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

struct Range {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();

  void add(double v) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  bool empty() const { return !(lo <= hi); }

  /// Empty ranges become [0, 1]; flat ones are widened around the value.
  Range settled(double pad_fraction) const {
    if (empty()) return {0.0, 1.0};
    if (hi == lo) {
      const double w = lo == 0.0 ? 1.0 : std::abs(lo) * 0.1;
      return {lo - w, hi + w};
    }
    const double pad = (hi - lo) * pad_fraction;
    return {lo - pad, hi + pad};
  }
};

}  // namespace

std::string render_svg(const PlotSpec& spec) {
  auto ty = [&](double y) { return spec.log_y ? std::log10(y) : y; };
  auto usable = [&](double x, double y) { return std::isfinite(x) && std::isfinite(y) && (!spec.log_y || y > 0.0); };

  Range xr, yr;
  for (const auto& s : spec.series)
    for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i)
      if (usable(s.x[i], s.y[i])) {
        xr.add(s.x[i]);
        yr.add(ty(s.y[i]));
      }
  xr = xr.settled(spec.equal_axes ? 0.05 : 0.0);
  yr = yr.settled(0.05);
  double w = kWidth - kLeft - kRight;
  double h = kHeight - kTop - kBottom;
  if (spec.equal_axes) {
    const double span = std::max(xr.hi - xr.lo, yr.hi - yr.lo);
    const double cx = 0.5 * (xr.lo + xr.hi), cy = 0.5 * (yr.lo + yr.hi);
    xr = {cx - span / 2, cx + span / 2};
    yr = {cy - span / 2, cy + span / 2};
    w = h = std::min(w, h);
  }
  const double left = kLeft, top = kTop, right = left + w, bottom = top + h;
  auto mx = [&](double x) { return left + (x - xr.lo) / (xr.hi - xr.lo) * w; };
  auto my = [&](double y) { return bottom - (ty(y) - yr.lo) / (yr.hi - yr.lo) * h; };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
     << "\" viewBox=\"0 0 " << kWidth << " " << kHeight << "\">\n";
  os << "<rect x=\"0\" y=\"0\" width=\"" << kWidth << "\" height=\"" << kHeight << "\" fill=\"white\"/>\n";
  os << "<text x=\"" << kWidth / 2 << "\" y=\"22\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">"
     << escape(spec.title) << "</text>\n";
  os << "<g class=\"plot-area\" data-x-min=\"" << format_number(xr.lo) << "\" data-x-max=\"" << format_number(xr.hi)
     << "\" data-y-min=\"" << format_number(yr.lo) << "\" data-y-max=\"" << format_number(yr.hi)
     << "\" data-y-scale=\"" << (spec.log_y ? "log10" : "linear") << "\" data-px-left=\"" << px(left)
     << "\" data-px-right=\"" << px(right) << "\" data-px-top=\"" << px(top) << "\" data-px-bottom=\""
     << px(bottom) << "\">\n";
  os << "<rect x=\"" << px(left) << "\" y=\"" << px(top) << "\" width=\"" << px(w) << "\" height=\"" << px(h)
     << "\" fill=\"none\" stroke=\"black\"/>\n";

  for (int k = 0; k <= 4; ++k) {
    const double fx = xr.lo + (xr.hi - xr.lo) * k / 4.0;
    const double fy = yr.lo + (yr.hi - yr.lo) * k / 4.0;
    const double sx = left + w * k / 4.0, sy = bottom - h * k / 4.0;
    os << "<line x1=\"" << px(sx) << "\" y1=\"" << px(bottom) << "\" x2=\"" << px(sx) << "\" y2=\"" << px(bottom + 5)
       << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << px(sx) << "\" y=\"" << px(bottom + 18)
       << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">" << num(fx) << "</text>\n";
    os << "<line x1=\"" << px(left - 5) << "\" y1=\"" << px(sy) << "\" x2=\"" << px(left) << "\" y2=\"" << px(sy)
       << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << px(left - 8) << "\" y=\"" << px(sy + 3)
       << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">"
       << num(spec.log_y ? std::pow(10.0, fy) : fy) << "</text>\n";
  }
  os << "<text x=\"" << px(left + w / 2) << "\" y=\"" << px(bottom + 38)
     << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" << escape(spec.x_label)
     << "</text>\n";
  os << "<text x=\"16\" y=\"" << px(top + h / 2) << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
     << "font-size=\"12\" transform=\"rotate(-90 16 " << px(top + h / 2) << ")\">" << escape(spec.y_label)
     << "</text>\n";

  for (const auto& s : spec.series) {
    const std::size_t n = std::min(s.x.size(), s.y.size());
    if (s.scatter) {
      os << "<g class=\"series\" data-label=\"" << escape(s.label) << "\" fill=\"" << s.color << "\" fill-opacity=\""
         << s.opacity << "\">\n";
      for (std::size_t i = 0; i < n; ++i)
        if (usable(s.x[i], s.y[i]))
          os << "<circle cx=\"" << px(mx(s.x[i])) << "\" cy=\"" << px(my(s.y[i])) << "\" r=\"" << s.radius
             << "\"/>\n";
      os << "</g>\n";
    } else {
      os << "<polyline class=\"series\" data-label=\"" << escape(s.label) << "\" fill=\"none\" stroke=\"" << s.color
         << "\" stroke-width=\"1.5\" points=\"";
      bool first = true;
      for (std::size_t i = 0; i < n; ++i) {
        if (!usable(s.x[i], s.y[i])) continue;
        os << (first ? "" : " ") << px(mx(s.x[i])) << "," << px(my(s.y[i]));
        first = false;
      }
      os << "\"/>\n";
    }
  }
  os << "</g>\n";

  double ly = top + 10;
  for (const auto& s : spec.series) {
    if (s.label.empty()) continue;
    os << "<g class=\"legend\">";
    if (s.scatter) {
      os << "<circle cx=\"" << px(right + 18) << "\" cy=\"" << px(ly - 4) << "\" r=\"4\" fill=\"" << s.color << "\"/>";
    } else {
      os << "<line x1=\"" << px(right + 10) << "\" y1=\"" << px(ly - 4) << "\" x2=\"" << px(right + 26) << "\" y2=\""
         << px(ly - 4) << "\" stroke=\"" << s.color << "\" stroke-width=\"2\"/>";
    }
    os << "<text x=\"" << px(right + 32) << "\" y=\"" << px(ly)
       << "\" font-family=\"sans-serif\" font-size=\"11\">" << escape(s.label) << "</text></g>\n";
    ly += 16;
  }
  os << "</svg>\n";
  return os.str();
}

namespace {

TrajectoryRecord load_table(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read '" + path.string() + "'");
  return read_csv(in);
}

bool all_positive(const TrajectoryRecord& t, const std::vector<std::string>& cols) {
  if (t.empty()) return false;
  for (const auto& c : cols)
    for (double v : t.column(c))
      if (std::isfinite(v) && !(v > 0.0)) return false;
  return true;
}

std::string grade(double f) {
  // blue (early) to red (late)
  const int r = static_cast<int>(std::lround(30 + 200 * f));
  const int b = static_cast<int>(std::lround(230 - 200 * f));
  char buf[16];
  std::snprintf(buf, sizeof(buf), "#%02x50%02x", r, b);
  return buf;
}

}  // namespace

std::vector<fs::path> emit_plots(const fs::path& dir) {
  const fs::path traj_path = dir / "trajectory.csv";
  if (!fs::exists(traj_path)) throw std::runtime_error("no trajectory.csv in '" + dir.string() + "'");
  std::vector<fs::path> written;

  const TrajectoryRecord traj = load_table(traj_path);
  {
    PlotSpec spec{"KL(q || p) over steps", "step", "divergence", false, false, {}};
    std::vector<std::string> cols{"kl"};
    if (traj.has_column("sym_kl")) cols.push_back("sym_kl");
    const auto steps = traj.column("step");
    int k = 0;
    for (const auto& c : cols) spec.series.push_back({c, steps, traj.column(c), kPalette[k++ % 6]});
    spec.log_y = all_positive(traj, cols);
    written.push_back(dir / "kl.svg");
    write_atomic(written.back(), render_svg(spec));
  }

  if (fs::exists(dir / "norms.csv")) {
    const TrajectoryRecord norms = load_table(dir / "norms.csv");
    PlotSpec spec{"estimator output norms", "step", "norm", false, false, {}};
    std::vector<std::string> cols;
    for (const auto& c : norms.columns())
      if (c.rfind("norm_", 0) == 0) cols.push_back(c);
    if (cols.empty()) throw std::runtime_error("norms.csv has no norm_* column");
    const auto steps = norms.column("step");
    int k = 0;
    for (const auto& c : cols) spec.series.push_back({c, steps, norms.column(c), kPalette[k++ % 6]});
    spec.log_y = all_positive(norms, cols);
    written.push_back(dir / "norms.svg");
    write_atomic(written.back(), render_svg(spec));
  }

  if (fs::exists(dir / "samples.csv")) {
    std::ifstream in(dir / "samples.csv");
    const auto snaps = read_samples_csv(in);
    PlotSpec spec{"samples over steps (blue early, red late)", "x_0", "x_1", false, true, {}};
    if (!snaps.empty()) {
      auto coords = [](const PointBatch& b, int axis) {
        std::vector<double> v(static_cast<std::size_t>(b.cols()));
        for (Eigen::Index k = 0; k < b.cols(); ++k) v[static_cast<std::size_t>(k)] = b.rows() > axis ? b(axis, k) : 0.0;
        return v;
      };
      const PointBatch& p = snaps.front().p;
      if (p.cols() > 0) spec.series.push_back({"p", coords(p, 0), coords(p, 1), "#999999", true, 1.5, 0.5});
      const std::size_t shown = std::min<std::size_t>(8, snaps.size());
      for (std::size_t k = 0; k < shown; ++k) {
        const std::size_t idx = shown == 1 ? snaps.size() - 1 : k * (snaps.size() - 1) / (shown - 1);
        const auto& s = snaps[idx];
        const double f = shown == 1 ? 1.0 : static_cast<double>(k) / static_cast<double>(shown - 1);
        spec.series.push_back({"q step " + std::to_string(s.step), coords(s.q, 0), coords(s.q, 1), grade(f), true,
                               2.0, 0.8});
      }
      const auto& last = snaps.back();
      if (last.r.cols() > 0)
        spec.series.push_back({"r step " + std::to_string(last.step), coords(last.r, 0), coords(last.r, 1),
                               "#2ca02c", true, 1.5, 0.6});
    }
    written.push_back(dir / "samples.svg");
    write_atomic(written.back(), render_svg(spec));
  }
  return written;
}

}  // namespace distill
