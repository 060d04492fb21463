#pragma once

#include <string>
#include <vector>

namespace twinflow {

void write_text_file(const std::string& path, const std::string& content);

// Minimal static SVG writers; output is deterministic for identical inputs.
std::string svg_bar_chart(const std::string& title, const std::vector<std::string>& labels,
                          const std::vector<double>& values, const std::string& value_name);

std::string svg_line_chart(const std::string& title, const std::vector<double>& xs,
                           const std::vector<double>& ys, const std::string& x_name,
                           const std::string& y_name);

std::string format_double(double v);

}  // namespace twinflow
