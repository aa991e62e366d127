// npo: train / measure-qv / plot / replay

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "npo/config.hpp"
#include "npo/error.hpp"
#include "npo/plot.hpp"
#include "npo/sources.hpp"
#include "npo/trainer.hpp"

namespace fs = std::filesystem;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string mode;
};

npo::RunConfig resolve(const Common& c) {
  npo::RunConfig cfg = c.config.empty() ? npo::RunConfig{} : npo::load_config(c.config);
  if (c.seed) cfg.seed = *c.seed;
  if (!c.out.empty()) cfg.out = c.out;
  if (!c.mode.empty()) cfg.mode = c.mode;
  cfg.validate();
  return cfg;
}

fs::path run_dir_of(const std::string& positional, const Common& c) {
  if (!positional.empty()) return npo::resolve_out_dir(positional);
  if (!c.out.empty()) return npo::resolve_out_dir(c.out);
  if (!c.config.empty()) return npo::resolve_out_dir(npo::load_config(c.config).out);
  throw npo::ConfigError("no run directory given");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"near-future policy optimization toy trainer"};
  app.require_subcommand(1);
  Common common;
  app.add_option("--config", common.config, "run config (JSON)");
  app.add_option("--seed", common.seed, "seed override");
  app.add_option("--out", common.out, "output / run directory");
  app.add_option("--mode", common.mode, "mode override: grpo | npo_early | npo_late | autonpo | source:<kind>");

  auto* train = app.add_subcommand("train", "run a training mode");
  train->fallthrough();

  auto* qv = app.add_subcommand("measure-qv", "Q/V/S table over a run's checkpoints");
  qv->fallthrough();
  std::string qv_run, qv_table;
  npo::QvOptions qo;
  qv->add_option("run", qv_run, "run directory");
  qv->add_option("--anchor", qo.anchor, "anchor step");
  qv->add_option("--deltas", qo.deltas, "rollback distances (default: every saved step after the anchor)")->delimiter(',');
  qv->add_option("--probes", qo.probe_count, "probe prompts (0 = all)");
  qv->add_option("--n", qo.n, "attempts per probe");
  qv->add_option("--kl-samples", qo.kl_samples);
  qv->add_option("--c", qo.v_proxy_c, "variance proxy coefficient");
  qv->add_option("--table", qv_table, "output table (default <run>/qv.tsv)");

  auto* plot = app.add_subcommand("plot", "render metrics streams or qv tables to SVG");
  plot->fallthrough();
  std::vector<std::string> plot_inputs;
  std::string plot_output = "plot.svg", plot_field = "reward_mean";
  plot->add_option("inputs", plot_inputs, "metrics.jsonl or qv.tsv files")->required();
  plot->add_option("-o,--output", plot_output);
  plot->add_option("--field", plot_field, "metrics field to plot");

  auto* replay = app.add_subcommand("replay", "re-execute a segment from a checkpoint and diff metrics");
  replay->fallthrough();
  std::string replay_run;
  std::int64_t from = 0, to = -1;
  replay->add_option("run", replay_run, "run directory");
  replay->add_option("--from", from)->required();
  replay->add_option("--to", to)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*train) {
      const auto dir = npo::cmd_train(resolve(common));
      std::cout << dir.string() << "\n";
    } else if (*qv) {
      const auto dir = run_dir_of(qv_run, common);
      if (!fs::exists(dir)) throw npo::NotFoundError("no run directory " + dir.string());
      if (common.seed) qo.seed = *common.seed;
      const auto rows = npo::measure_qv_run(dir, qo);
      const fs::path table = qv_table.empty() ? dir / "qv.tsv" : fs::path(qv_table);
      std::ofstream out(table, std::ios::trunc);
      npo::write_qv_table(out, rows);
      std::cout << table.string() << "\n";
    } else if (*plot) {
      std::vector<fs::path> ins(plot_inputs.begin(), plot_inputs.end());
      npo::cmd_plot(ins, plot_output, plot_field);
      std::cout << plot_output << "\n";
    } else if (*replay) {
      const auto rep = npo::cmd_replay(run_dir_of(replay_run, common), from, to);
      if (!rep.ok) {
        std::cerr << "divergence at step " << rep.first_divergence << " (" << rep.field << ")\n";
        return 3;
      }
      std::cout << "ok: " << rep.compared << " steps identical\n";
    }
  } catch (const npo::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const npo::NotFoundError& e) {
    std::cerr << "not found: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
