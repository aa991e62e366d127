#pragma once

// Minimal SVG line charts for metrics streams and Q/V tables.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace npo {

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

struct PlotOptions {
  std::string title;
  std::string xlabel = "step";
  std::string ylabel;
  double ema_alpha = 0.1;  // smoothed overlay; 0 disables it
  std::optional<double> marker_x;
  int width = 720;
  int height = 420;
};

std::string render_svg(const std::vector<Series>& series, const PlotOptions& opt);

/// Exponential moving average seeded by the first value.
std::vector<double> ema(const std::vector<double>& y, double alpha);

/// Reward curve (raw + smoothed) from one metrics stream per input, or the
/// S-vs-delta curve with its argmax when the inputs are Q/V tables.
/// Throws ParseError naming the offending line for malformed input.
void cmd_plot(const std::vector<std::filesystem::path>& inputs, const std::filesystem::path& output,
              const std::string& field = "reward_mean");

}  // namespace npo
