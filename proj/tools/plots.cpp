#include "plots.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <vector>

namespace sgfa::cli {

using nlohmann::json;

namespace {

const char* const palette[] = {"#1b9e77", "#d95f02", "#7570b3", "#e7298a",
                               "#66a61e", "#e6ab02", "#a6761d", "#666666"};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
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

std::string header(double w, double h) {
  return "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(w) + "\" height=\"" + num(h) +
         "\" viewBox=\"0 0 " + num(w) + " " + num(h) +
         "\" font-family=\"sans-serif\" font-size=\"12\">\n<rect width=\"100%\" height=\"100%\" "
         "fill=\"white\"/>\n";
}

std::string text(double x, double y, const std::string& s, const char* anchor = "middle") {
  return "<text x=\"" + num(x) + "\" y=\"" + num(y) + "\" text-anchor=\"" + anchor + "\">" +
         escape(s) + "</text>\n";
}

std::string line(double x1, double y1, double x2, double y2, const char* stroke = "black") {
  return "<line x1=\"" + num(x1) + "\" y1=\"" + num(y1) + "\" x2=\"" + num(x2) + "\" y2=\"" +
         num(y2) + "\" stroke=\"" + stroke + "\"/>\n";
}

std::string rect(double x, double y, double w, double h, const std::string& fill) {
  return "<rect x=\"" + num(x) + "\" y=\"" + num(y) + "\" width=\"" + num(w) + "\" height=\"" +
         num(h) + "\" fill=\"" + fill + "\" stroke=\"black\" stroke-width=\"0.5\"/>\n";
}

std::vector<std::string> group_names(const json& a) {
  std::vector<std::string> names;
  if (a.contains("group_names")) names = a["group_names"].get<std::vector<std::string>>();
  return names;
}

std::string empty_figure(const std::string& title, const std::string& message) {
  std::string s = header(400, 120);
  s += text(200, 30, title);
  s += text(200, 70, message);
  s += "</svg>\n";
  return s;
}

std::string legend(const std::vector<std::string>& groups, double x, double y) {
  std::string s;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const double yy = y + 18.0 * static_cast<double>(g);
    s += rect(x, yy - 10, 12, 12, palette[g % 8]);
    s += text(x + 18, yy, groups[g], "start");
  }
  return s;
}

double quantile(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) return 0.0;
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

}  // namespace

std::string contributions_svg(const json& a) {
  const auto groups = group_names(a);
  const json& factors = a.at("factors");
  if (factors.empty()) return empty_figure("Subgroup contributions", "no robust factors");
  if (groups.empty()) return empty_figure("Subgroup contributions", "no subgroup labels");

  const double bar = 18.0, gap = 24.0, left = 60.0, top = 40.0, plot_h = 240.0;
  const double group_w = bar * static_cast<double>(groups.size());
  const double plot_w = static_cast<double>(factors.size()) * (group_w + gap) + gap;
  const double width = left + plot_w + 140.0, height = top + plot_h + 60.0;

  std::string s = header(width, height);
  s += text(left + plot_w / 2, 22, "Subgroup contributions per robust factor");
  const double y0 = top + plot_h;
  for (int t = 0; t <= 4; ++t) {
    const double v = 0.25 * t, y = y0 - v * plot_h;
    s += line(left - 4, y, left, y);
    s += text(left - 8, y + 4, num(v), "end");
  }
  s += line(left, top, left, y0);
  s += line(left, y0, left + plot_w, y0);
  for (std::size_t k = 0; k < factors.size(); ++k) {
    const double x = left + gap + static_cast<double>(k) * (group_w + gap);
    const json& c = factors[k].at("contributions");
    for (std::size_t g = 0; g < groups.size() && g < c.size(); ++g) {
      const double v = c[g].is_number() ? std::clamp(c[g].get<double>(), 0.0, 1.0) : 0.0;
      s += rect(x + bar * static_cast<double>(g), y0 - v * plot_h, bar, v * plot_h, palette[g % 8]);
    }
    s += text(x + group_w / 2, y0 + 18, "factor " + std::to_string(k + 1));
  }
  s += legend(groups, left + plot_w + 20, top + 10);
  s += "</svg>\n";
  return s;
}

std::string abs_scores_svg(const json& a) {
  const auto groups = group_names(a);
  const json& factors = a.at("factors");
  if (factors.empty()) return empty_figure("Absolute latent scores", "no robust factors");
  if (groups.empty() || !a.contains("labels") || a["labels"].is_null())
    return empty_figure("Absolute latent scores", "no subgroup labels");
  const auto labels = a["labels"].get<std::vector<int>>();

  const double box = 22.0, gap = 12.0, panel_top = 40.0, plot_h = 200.0, left = 60.0;
  const double panel_w = gap + static_cast<double>(groups.size()) * (box + gap);
  const double panel_gap = 50.0;
  const double width =
      left + static_cast<double>(factors.size()) * (panel_w + panel_gap) + 120.0;
  const double height = panel_top + plot_h + 60.0;

  std::string s = header(width, height);
  s += text(width / 2, 22, "Absolute latent scores per subgroup");
  for (std::size_t k = 0; k < factors.size(); ++k) {
    const auto z = factors[k].at("abs_latent").get<std::vector<double>>();
    double zmax = 0.0;
    for (double v : z) zmax = std::max(zmax, v);
    if (zmax <= 0.0) zmax = 1.0;
    const double x0 = left + static_cast<double>(k) * (panel_w + panel_gap), y0 = panel_top + plot_h;
    const auto y = [&](double v) { return y0 - v / zmax * plot_h; };
    s += line(x0, panel_top, x0, y0);
    s += line(x0, y0, x0 + panel_w, y0);
    for (int t = 0; t <= 2; ++t) {
      const double v = zmax * 0.5 * t;
      s += line(x0 - 4, y(v), x0, y(v));
      s += text(x0 - 6, y(v) + 4, num(v), "end");
    }
    for (std::size_t g = 0; g < groups.size(); ++g) {
      std::vector<double> v;
      for (std::size_t n = 0; n < z.size() && n < labels.size(); ++n)
        if (labels[n] == static_cast<int>(g)) v.push_back(z[n]);
      if (v.empty()) continue;
      std::sort(v.begin(), v.end());
      const double q1 = quantile(v, 0.25), q2 = quantile(v, 0.5), q3 = quantile(v, 0.75);
      const double iqr = q3 - q1;
      double lo = v.front(), hi = v.back();
      for (double x : v)
        if (x >= q1 - 1.5 * iqr) { lo = x; break; }
      for (auto it = v.rbegin(); it != v.rend(); ++it)
        if (*it <= q3 + 1.5 * iqr) { hi = *it; break; }
      const double bx = x0 + gap + static_cast<double>(g) * (box + gap), cx = bx + box / 2;
      s += line(cx, y(hi), cx, y(q3));
      s += line(cx, y(q1), cx, y(lo));
      s += line(bx + 4, y(hi), bx + box - 4, y(hi));
      s += line(bx + 4, y(lo), bx + box - 4, y(lo));
      s += rect(bx, y(q3), box, std::max(y(q1) - y(q3), 0.5), palette[g % 8]);
      s += line(bx, y(q2), bx + box, y(q2));
      for (double x : v)
        if (x < lo || x > hi)
          s += "<circle cx=\"" + num(cx) + "\" cy=\"" + num(y(x)) + "\" r=\"2\" fill=\"none\" "
               "stroke=\"black\"/>\n";
    }
    s += text(x0 + panel_w / 2, y0 + 18, "factor " + std::to_string(k + 1));
  }
  s += legend(groups, width - 110, panel_top + 10);
  s += "</svg>\n";
  return s;
}

}  // namespace sgfa::cli
