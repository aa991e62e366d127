#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "npo/checkpoint.hpp"
#include "npo/controller.hpp"
#include "npo/guidance.hpp"
#include "npo/policy.hpp"
#include "npo/tasks.hpp"

namespace npo {

struct TaskConfig {
  std::string kind = "mixed";  // arith | parity | mixed
  int count = 256;
  int modulus = 7;
  int operand_limit = 0;  // 0: operands range over [0, modulus)
  std::string ops = "+*";
  int chain_length = 3;
  double arith_fraction = 0.5;
  std::uint64_t seed = 1234;
};

struct GrpoConfig {
  int n = 8;
  double temperature = 1.0;
  double lr = 3e-3;
  int batch = 32;
  double eps_low = 0.2;
  double eps_high = 0.28;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int steps = 400;
  double init_scale = 0.1;
  double init_scale_input = -1.0;  // first-layer scale; < 0 means init_scale
};

struct GuidanceConfig {
  double tau_gate = 0.6;
  int attempts_per_prompt = 8;
  bool reverify = false;
  std::string selection = "shortest";  // shortest | first
};

struct EarlyConfig {
  int scout_steps = 20;
  int window = 40;  // guided steps after the restart
};

struct LateConfig {
  int plateau_start = 100;
  int plateau_end = 140;
  int guide_step = 160;
};

struct SourceConfig {
  int far_step = -1;  // far-future guide step; -1 means grpo.steps
  std::size_t replay_capacity = 4096;
};

enum class Mode { Grpo, NpoEarly, NpoLate, AutoNpo, Source };
enum class SourceKind { NearFuture, FarFuture, PastReplay, ExternalOracle };

const char* to_string(SourceKind k);
SourceKind parse_source_kind(const std::string& s);

struct RunConfig {
  std::uint64_t seed = 1;
  std::string mode = "grpo";  // grpo | npo_early | npo_late | autonpo | source:<kind>
  bool is_correction = false;
  int threads = 1;
  std::string out = "runs/default";
  TaskConfig task;
  Layout policy;
  GrpoConfig grpo;
  GuidanceConfig guidance;
  EarlyConfig npo_early;
  LateConfig npo_late;
  SourceConfig source;
  ControllerConfig controller;
  Retention checkpoints;

  Mode parsed_mode() const;
  SourceKind source_kind() const;  // valid when parsed_mode() == Source
  void validate() const;
};

RunConfig config_from_json(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);
/// Canonical serialization with every field present.
std::string config_to_json(const RunConfig& cfg);

Dataset make_dataset(const RunConfig& cfg);

/// Resolve the output directory against $NPO_OUT_ROOT when it is relative.
std::filesystem::path resolve_out_dir(const std::string& out);

}  // namespace npo
