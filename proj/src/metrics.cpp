#include "npo/metrics.hpp"

#include <cstdio>
#include <istream>
#include <sstream>

#include <json.hpp>

#include "npo/error.hpp"

namespace npo {

using nlohmann::json;

namespace {

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string pairs(const std::vector<std::pair<std::int64_t, double>>& table) {
  std::string s = "[";
  for (std::size_t i = 0; i < table.size(); ++i) {
    if (i) s += ",";
    s += "[" + std::to_string(table[i].first) + "," + num(table[i].second) + "]";
  }
  return s + "]";
}

EventKind parse_event_kind(const std::string& s) {
  for (auto k : {EventKind::Warning, EventKind::Confirm, EventKind::Rollback, EventKind::Resume,
                 EventKind::CooldownStart, EventKind::Abort})
    if (s == to_string(k)) return k;
  throw ParseError("unknown event '" + s + "'");
}

}  // namespace

std::string format_record(const MetricsRecord& r) {
  std::string s = "{\"step\":" + std::to_string(r.step);
  s += ",\"model_step\":" + std::to_string(r.model_step);
  s += ",\"reward_mean\":" + num(r.reward_mean);
  s += ",\"reward_ema\":" + num(r.reward_ema);
  s += ",\"entropy_mean\":" + num(r.entropy_mean);
  s += ",\"groups_replaced\":" + std::to_string(r.groups_replaced);
  s += ",\"gradient_norm\":" + num(r.gradient_norm);
  s += ",\"pool_size\":" + std::to_string(r.pool_size);
  s += ",\"loss\":" + num(r.loss);
  return s + "}";
}

std::string format_event(std::int64_t iteration, const ControllerEvent& e) {
  std::string s = "{\"step\":" + std::to_string(iteration);
  s += ",\"t\":" + std::to_string(e.step);
  s += ",\"event\":\"" + std::string(to_string(e.kind)) + "\"";
  switch (e.kind) {
    case EventKind::Confirm:
      s += ",\"p_hat\":" + num(e.p_hat) + ",\"q\":" + pairs(e.q_table) + ",\"v\":" + pairs(e.v_table);
      break;
    case EventKind::Rollback:
      s += ",\"delta\":" + std::to_string(e.delta) + ",\"target_step\":" + std::to_string(e.target_step);
      break;
    case EventKind::Resume:
    case EventKind::CooldownStart:
      s += ",\"target_step\":" + std::to_string(e.target_step);
      break;
    default:
      break;
  }
  if (!e.note.empty()) s += ",\"note\":" + json(e.note).dump();
  return s + "}";
}

std::vector<MetricsLine> read_metrics(std::istream& is) {
  std::vector<MetricsLine> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = json::parse(line);
      MetricsLine ml;
      if (j.contains("event")) {
        ControllerEvent e;
        e.kind = parse_event_kind(j.at("event").get<std::string>());
        e.step = j.at("t").get<std::int64_t>();
        if (j.contains("p_hat")) e.p_hat = j["p_hat"].get<double>();
        if (j.contains("q")) e.q_table = j["q"].get<std::vector<std::pair<std::int64_t, double>>>();
        if (j.contains("v")) e.v_table = j["v"].get<std::vector<std::pair<std::int64_t, double>>>();
        if (j.contains("delta")) e.delta = j["delta"].get<std::int64_t>();
        if (j.contains("target_step")) e.target_step = j["target_step"].get<std::int64_t>();
        if (j.contains("note")) e.note = j["note"].get<std::string>();
        ml.event = e;
        ml.event_stamp = j.at("step").get<std::int64_t>();
      } else {
        MetricsRecord r;
        r.step = j.at("step").get<std::int64_t>();
        r.model_step = j.at("model_step").get<std::int64_t>();
        r.reward_mean = j.at("reward_mean").get<double>();
        r.reward_ema = j.at("reward_ema").get<double>();
        r.entropy_mean = j.at("entropy_mean").get<double>();
        r.groups_replaced = j.at("groups_replaced").get<int>();
        r.gradient_norm = j.at("gradient_norm").get<double>();
        r.pool_size = j.at("pool_size").get<std::int64_t>();
        r.loss = j.at("loss").get<double>();
        ml.record = r;
      }
      out.push_back(std::move(ml));
    } catch (const std::exception& e) {
      throw ParseError("metrics line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

std::vector<MetricsLine> read_metrics_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw NotFoundError("metrics: cannot open " + path.string());
  return read_metrics(in);
}

MetricsWriter::MetricsWriter(const std::filesystem::path& path, bool append) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  out_.open(path, append ? std::ios::app : std::ios::trunc);
  if (!out_) throw Error("metrics: cannot open " + path.string());
}

void MetricsWriter::write(const MetricsRecord& r) {
  if (!out_.is_open()) return;
  if (r.step <= last_step_) throw ContractError("metrics: steps must be strictly increasing");
  last_step_ = r.step;
  out_ << format_record(r) << '\n';
  out_.flush();
}

void MetricsWriter::write(std::int64_t iteration, const ControllerEvent& e) {
  if (!out_.is_open()) return;
  out_ << format_event(iteration, e) << '\n';
  out_.flush();
}

}  // namespace npo
