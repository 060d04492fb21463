#include "twinflow/report.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "twinflow/common.hpp"

namespace twinflow {

void write_text_file(const std::string& path, const std::string& content) {
  std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream f(path);
  f << content;
  require(f.good(), "failed writing " + path);
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

namespace {

std::string svg_header(int w, int h, const std::string& title) {
  std::string s;
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(w) + "\" height=\"" +
       std::to_string(h) + "\" viewBox=\"0 0 " + std::to_string(w) + " " + std::to_string(h) + "\">\n";
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s += "<text x=\"" + std::to_string(w / 2) + "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\" "
       "font-family=\"sans-serif\">" + title + "</text>\n";
  return s;
}

}  // namespace

std::string svg_bar_chart(const std::string& title, const std::vector<std::string>& labels,
                          const std::vector<double>& values, const std::string& value_name) {
  require(labels.size() == values.size() && !values.empty(), "bar chart inputs mismatch");
  const int w = 640, h = 400, pad = 60;
  double vmax = *std::max_element(values.begin(), values.end());
  if (vmax <= 0) vmax = 1.0;
  std::string s = svg_header(w, h, title);
  int n = static_cast<int>(values.size());
  double band = static_cast<double>(w - 2 * pad) / n;
  for (int i = 0; i < n; ++i) {
    double bh = (h - 2 * pad) * (values[i] / vmax);
    double x = pad + i * band + band * 0.15;
    double y = h - pad - bh;
    s += "<rect x=\"" + format_double(x) + "\" y=\"" + format_double(y) + "\" width=\"" +
         format_double(band * 0.7) + "\" height=\"" + format_double(bh) +
         "\" fill=\"#4878a8\"/>\n";
    s += "<text x=\"" + format_double(pad + i * band + band / 2) + "\" y=\"" +
         std::to_string(h - pad + 18) +
         "\" text-anchor=\"middle\" font-size=\"11\" font-family=\"sans-serif\">" + labels[i] +
         "</text>\n";
    s += "<text x=\"" + format_double(pad + i * band + band / 2) + "\" y=\"" +
         format_double(y - 6) + "\" text-anchor=\"middle\" font-size=\"11\" "
         "font-family=\"sans-serif\">" + format_double(values[i]) + "</text>\n";
  }
  s += "<line x1=\"" + std::to_string(pad) + "\" y1=\"" + std::to_string(h - pad) + "\" x2=\"" +
       std::to_string(w - pad) + "\" y2=\"" + std::to_string(h - pad) +
       "\" stroke=\"black\"/>\n";
  s += "<text x=\"16\" y=\"" + std::to_string(h / 2) +
       "\" font-size=\"12\" font-family=\"sans-serif\" transform=\"rotate(-90 16 " +
       std::to_string(h / 2) + ")\" text-anchor=\"middle\">" + value_name + "</text>\n";
  s += "</svg>\n";
  return s;
}

std::string svg_line_chart(const std::string& title, const std::vector<double>& xs,
                           const std::vector<double>& ys, const std::string& x_name,
                           const std::string& y_name) {
  require(xs.size() == ys.size() && xs.size() >= 2, "line chart inputs mismatch");
  const int w = 640, h = 400, pad = 60;
  double xmin = *std::min_element(xs.begin(), xs.end());
  double xmax = *std::max_element(xs.begin(), xs.end());
  double ymax = std::max(1e-9, *std::max_element(ys.begin(), ys.end()));
  if (xmax == xmin) xmax = xmin + 1;
  auto px = [&](double x) { return pad + (w - 2 * pad) * (x - xmin) / (xmax - xmin); };
  auto py = [&](double y) { return h - pad - (h - 2 * pad) * (y / ymax); };

  std::string s = svg_header(w, h, title);
  s += "<polyline fill=\"none\" stroke=\"#4878a8\" stroke-width=\"2\" points=\"";
  for (std::size_t i = 0; i < xs.size(); ++i)
    s += format_double(px(xs[i])) + "," + format_double(py(ys[i])) + " ";
  s += "\"/>\n";
  for (std::size_t i = 0; i < xs.size(); ++i) {
    s += "<circle cx=\"" + format_double(px(xs[i])) + "\" cy=\"" + format_double(py(ys[i])) +
         "\" r=\"4\" fill=\"#4878a8\"/>\n";
    s += "<text x=\"" + format_double(px(xs[i])) + "\" y=\"" + std::to_string(h - pad + 18) +
         "\" text-anchor=\"middle\" font-size=\"11\" font-family=\"sans-serif\">" +
         format_double(xs[i]) + "</text>\n";
    s += "<text x=\"" + format_double(px(xs[i])) + "\" y=\"" + format_double(py(ys[i]) - 8) +
         "\" text-anchor=\"middle\" font-size=\"11\" font-family=\"sans-serif\">" +
         format_double(ys[i]) + "</text>\n";
  }
  s += "<line x1=\"" + std::to_string(pad) + "\" y1=\"" + std::to_string(h - pad) + "\" x2=\"" +
       std::to_string(w - pad) + "\" y2=\"" + std::to_string(h - pad) + "\" stroke=\"black\"/>\n";
  s += "<text x=\"" + std::to_string(w / 2) + "\" y=\"" + std::to_string(h - 12) +
       "\" text-anchor=\"middle\" font-size=\"12\" font-family=\"sans-serif\">" + x_name +
       "</text>\n";
  s += "<text x=\"16\" y=\"" + std::to_string(h / 2) +
       "\" font-size=\"12\" font-family=\"sans-serif\" transform=\"rotate(-90 16 " +
       std::to_string(h / 2) + ")\" text-anchor=\"middle\">" + y_name + "</text>\n";
  s += "</svg>\n";
  return s;
}

}  // namespace twinflow
