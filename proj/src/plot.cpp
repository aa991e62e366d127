#include "npo/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "npo/error.hpp"
#include "npo/metrics.hpp"
#include "npo/sources.hpp"

namespace npo {

namespace fs = std::filesystem;

namespace {

const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};

std::string esc(const std::string& s) {
  std::string o;
  for (char c : s) {
    switch (c) {
      case '<': o += "&lt;"; break;
      case '>': o += "&gt;"; break;
      case '&': o += "&amp;"; break;
      case '"': o += "&quot;"; break;
      default: o += c;
    }
  }
  return o;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

std::string polyline(const std::vector<double>& xs, const std::vector<double>& ys, auto&& px, auto&& py,
                     const char* color, double width, double opacity) {
  std::string s = "<polyline fill=\"none\" stroke=\"" + std::string(color) + "\" stroke-width=\"" + fmt(width) +
                  "\" stroke-opacity=\"" + fmt(opacity) + "\" points=\"";
  for (std::size_t i = 0; i < xs.size(); ++i) s += fmt(px(xs[i])) + "," + fmt(py(ys[i])) + " ";
  return s + "\"/>\n";
}

double field_of(const MetricsRecord& r, const std::string& f) {
  if (f == "reward_mean") return r.reward_mean;
  if (f == "reward_ema") return r.reward_ema;
  if (f == "entropy_mean") return r.entropy_mean;
  if (f == "gradient_norm") return r.gradient_norm;
  if (f == "loss") return r.loss;
  if (f == "pool_size") return static_cast<double>(r.pool_size);
  if (f == "groups_replaced") return r.groups_replaced;
  throw ConfigError("plot: unknown field '" + f + "'");
}

bool is_qv_table(const fs::path& p) {
  std::ifstream in(p);
  std::string first;
  std::getline(in, first);
  return first.rfind("delta", 0) == 0;
}

}  // namespace

std::vector<double> ema(const std::vector<double>& y, double alpha) {
  std::vector<double> out;
  out.reserve(y.size());
  for (double v : y) out.push_back(out.empty() ? v : alpha * v + (1.0 - alpha) * out.back());
  return out;
}

std::string render_svg(const std::vector<Series>& series, const PlotOptions& opt) {
  const double W = opt.width, H = opt.height;
  const double left = 64, right = 160, top = 36, bottom = 48;
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : series)
    for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 - x0 < 1e-12) x1 = x0 + 1;
  if (y1 - y0 < 1e-12) y0 -= 0.5, y1 += 0.5;
  auto px = [&](double x) { return left + (x - x0) / (x1 - x0) * (W - left - right); };
  auto py = [&](double y) { return H - bottom - (y - y0) / (y1 - y0) * (H - top - bottom); };

  std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt(W) + "\" height=\"" + fmt(H) +
                  "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  if (!opt.title.empty())
    s += "<text x=\"" + fmt(W / 2) + "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" + esc(opt.title) +
         "</text>\n";
  // axes
  s += "<line x1=\"" + fmt(left) + "\" y1=\"" + fmt(H - bottom) + "\" x2=\"" + fmt(W - right) + "\" y2=\"" +
       fmt(H - bottom) + "\" stroke=\"black\"/>\n";
  s += "<line x1=\"" + fmt(left) + "\" y1=\"" + fmt(top) + "\" x2=\"" + fmt(left) + "\" y2=\"" + fmt(H - bottom) +
       "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double xv = x0 + (x1 - x0) * k / 4.0, yv = y0 + (y1 - y0) * k / 4.0;
    s += "<text x=\"" + fmt(px(xv)) + "\" y=\"" + fmt(H - bottom + 16) + "\" text-anchor=\"middle\">" + fmt(xv) +
         "</text>\n";
    s += "<text x=\"" + fmt(left - 6) + "\" y=\"" + fmt(py(yv) + 4) + "\" text-anchor=\"end\">" + fmt(yv) +
         "</text>\n";
  }
  s += "<text x=\"" + fmt((left + W - right) / 2) + "\" y=\"" + fmt(H - 10) + "\" text-anchor=\"middle\">" +
       esc(opt.xlabel) + "</text>\n";
  s += "<text x=\"16\" y=\"" + fmt((top + H - bottom) / 2) + "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " +
       fmt((top + H - bottom) / 2) + ")\">" + esc(opt.ylabel) + "</text>\n";

  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& sr = series[k];
    const char* color = kColors[k % std::size(kColors)];
    const std::size_t n = std::min(sr.x.size(), sr.y.size());
    std::vector<double> xs(sr.x.begin(), sr.x.begin() + n), ys(sr.y.begin(), sr.y.begin() + n);
    if (!xs.empty()) {
      if (opt.ema_alpha > 0) {
        s += polyline(xs, ys, px, py, color, 1.0, 0.35);
        s += polyline(xs, ema(ys, opt.ema_alpha), px, py, color, 2.0, 1.0);
      } else {
        s += polyline(xs, ys, px, py, color, 2.0, 1.0);
        for (std::size_t i = 0; i < xs.size(); ++i)
          s += "<circle cx=\"" + fmt(px(xs[i])) + "\" cy=\"" + fmt(py(ys[i])) + "\" r=\"3\" fill=\"" + color +
               "\"/>\n";
      }
    }
    const double ly = top + 14 + 16 * static_cast<double>(k);
    s += "<line x1=\"" + fmt(W - right + 10) + "\" y1=\"" + fmt(ly - 4) + "\" x2=\"" + fmt(W - right + 30) +
         "\" y2=\"" + fmt(ly - 4) + "\" stroke=\"" + color + "\" stroke-width=\"2\"/>\n";
    s += "<text x=\"" + fmt(W - right + 36) + "\" y=\"" + fmt(ly) + "\">" + esc(sr.name) + "</text>\n";
  }
  if (opt.marker_x) {
    const double mx = px(*opt.marker_x);
    s += "<line class=\"marker\" x1=\"" + fmt(mx) + "\" y1=\"" + fmt(top) + "\" x2=\"" + fmt(mx) + "\" y2=\"" +
         fmt(H - bottom) + "\" stroke=\"gray\" stroke-dasharray=\"4 3\"/>\n";
    s += "<text x=\"" + fmt(mx + 4) + "\" y=\"" + fmt(top + 10) + "\">argmax " + fmt(*opt.marker_x) + "</text>\n";
  }
  return s + "</svg>\n";
}

void cmd_plot(const std::vector<fs::path>& inputs, const fs::path& output, const std::string& field) {
  if (inputs.empty()) throw ConfigError("plot: no inputs");
  std::vector<Series> series;
  PlotOptions opt;
  const bool qv = is_qv_table(inputs.front());
  if (qv) {
    opt.title = "S = Q / V by rollback distance";
    opt.xlabel = "delta";
    opt.ylabel = "S";
    opt.ema_alpha = 0;
    double best_s = -std::numeric_limits<double>::infinity();
    for (const auto& in : inputs) {
      std::ifstream f(in);
      if (!f) throw NotFoundError("plot: cannot open " + in.string());
      const auto rows = read_qv_table(f);
      Series s{in.stem().string(), {}, {}};
      for (const auto& r : rows) {
        s.x.push_back(static_cast<double>(r.delta));
        s.y.push_back(r.s);
        if (r.s > best_s) {
          best_s = r.s;
          opt.marker_x = static_cast<double>(r.delta);
        }
      }
      series.push_back(std::move(s));
    }
  } else {
    opt.title = field;
    opt.ylabel = field;
    for (const auto& in : inputs) {
      const auto lines = read_metrics_file(in);
      Series s{in.parent_path().filename().string(), {}, {}};
      if (s.name.empty()) s.name = in.stem().string();
      for (const auto& l : lines)
        if (l.record) {
          s.x.push_back(static_cast<double>(l.record->step));
          s.y.push_back(field_of(*l.record, field));
        }
      series.push_back(std::move(s));
    }
  }
  if (output.has_parent_path()) fs::create_directories(output.parent_path());
  std::ofstream out(output, std::ios::trunc);
  if (!out) throw Error("plot: cannot write " + output.string());
  out << render_svg(series, opt);
}

}  // namespace npo
