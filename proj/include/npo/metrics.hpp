#pragma once

// Line-delimited JSON metrics: one record per training step, interleaved with
// controller events. Floats carry 17 significant digits.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "npo/controller.hpp"

namespace npo {

struct MetricsRecord {
  std::int64_t step = 0;        // iteration counter, strictly increasing
  std::int64_t model_step = 0;  // optimizer steps applied to the current params
  double reward_mean = 0.0;     // on-policy pass rate averaged over the batch
  double reward_ema = 0.0;
  double entropy_mean = 0.0;
  int groups_replaced = 0;
  double gradient_norm = 0.0;
  std::int64_t pool_size = 0;
  double loss = 0.0;

  friend bool operator==(const MetricsRecord&, const MetricsRecord&) = default;
};

struct MetricsLine {
  std::optional<MetricsRecord> record;
  std::optional<ControllerEvent> event;
  std::int64_t event_stamp = 0;  // iteration at which the event was logged
};

std::string format_record(const MetricsRecord& r);
std::string format_event(std::int64_t iteration, const ControllerEvent& e);

/// Parses a metrics stream; throws ParseError naming the offending line.
std::vector<MetricsLine> read_metrics(std::istream& is);
std::vector<MetricsLine> read_metrics_file(const std::filesystem::path& path);

class MetricsWriter {
 public:
  MetricsWriter() = default;
  explicit MetricsWriter(const std::filesystem::path& path, bool append = false);

  void write(const MetricsRecord& r);
  void write(std::int64_t iteration, const ControllerEvent& e);
  bool open() const { return out_.is_open(); }

 private:
  std::ofstream out_;
  std::int64_t last_step_ = -1;
};

}  // namespace npo
