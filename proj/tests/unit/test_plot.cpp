#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>
#include <set>
#include <sstream>

#include "npo/error.hpp"
#include "npo/metrics.hpp"
#include "npo/plot.hpp"
#include "npo/sources.hpp"
#include "support.hpp"

using namespace npo;

namespace {

std::size_t count(const std::string& s, const std::string& what) {
  std::size_t n = 0;
  for (auto pos = s.find(what); pos != std::string::npos; pos = s.find(what, pos + 1)) ++n;
  return n;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_metrics(const std::filesystem::path& p, int steps, double slope) {
  std::filesystem::create_directories(p.parent_path());
  MetricsWriter w(p);
  for (int t = 0; t < steps; ++t) {
    MetricsRecord r;
    r.step = t;
    r.model_step = t;
    r.reward_mean = slope * t;
    w.write(r);
  }
}

}  // namespace

TEST_CASE("ema seeds with the first value") {
  const auto e = ema({1.0, 3.0, 3.0}, 0.5);
  CHECK(e == std::vector<double>{1.0, 2.0, 2.5});
  CHECK(ema({}, 0.5).empty());
}

TEST_CASE("empty series still draws axes and no polyline") {
  const auto svg = render_svg({Series{"none", {}, {}}}, PlotOptions{});
  CHECK(svg.rfind("<svg", 0) == 0);
  CHECK(svg.find("</svg>") != std::string::npos);
  CHECK(count(svg, "<line") >= 2);
  CHECK(count(svg, "<polyline") == 0);
}

TEST_CASE("two runs give two styled series, raw and smoothed, plus a legend") {
  const auto dir = npo::testing::scratch_dir("plot_two");
  write_metrics(dir / "a" / "metrics.jsonl", 30, 0.01);
  write_metrics(dir / "b" / "metrics.jsonl", 30, 0.02);
  cmd_plot({dir / "a" / "metrics.jsonl", dir / "b" / "metrics.jsonl"}, dir / "out" / "r.svg");
  const auto svg = slurp(dir / "out" / "r.svg");
  CHECK(count(svg, "<polyline") == 4);
  CHECK(svg.find(">a</text>") != std::string::npos);
  CHECK(svg.find(">b</text>") != std::string::npos);
  std::set<std::string> colors;
  for (auto pos = svg.find("<polyline"); pos != std::string::npos; pos = svg.find("<polyline", pos + 1)) {
    const auto c = svg.find("stroke=\"", pos) + 8;
    colors.insert(svg.substr(c, svg.find('"', c) - c));
  }
  CHECK(colors.size() == 2);
  CHECK_THROWS_AS(cmd_plot({dir / "a" / "metrics.jsonl"}, dir / "x.svg", "nonsense"), ConfigError);
}

TEST_CASE("qv table input marks the argmax") {
  const auto dir = npo::testing::scratch_dir("plot_qv");
  std::vector<QvRow> rows;
  for (int d : {0, 10, 20, 30, 40}) {
    QvRow r;
    r.delta = d;
    r.s = d == 20 ? 0.5 : 0.1 + 0.001 * d;
    rows.push_back(r);
  }
  {
    std::ofstream f(dir / "qv.tsv");
    write_qv_table(f, rows);
  }
  cmd_plot({dir / "qv.tsv"}, dir / "qv.svg");
  const auto svg = slurp(dir / "qv.svg");
  CHECK(svg.find("class=\"marker\"") != std::string::npos);
  CHECK(svg.find("argmax 20") != std::string::npos);
}

TEST_CASE("malformed input reports the line number") {
  const auto dir = npo::testing::scratch_dir("plot_bad");
  {
    std::ofstream f(dir / "m.jsonl");
    MetricsRecord r;
    f << format_record(r) << "\n" << format_record(r) << "\n" << "garbage\n";
  }
  try {
    cmd_plot({dir / "m.jsonl"}, dir / "m.svg");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }
  {
    std::ofstream f(dir / "q.tsv");
    f << "delta\tq\tq_se\tfailed\tkl\tkl_se\tv\ts\n0\t1\n";
  }
  try {
    cmd_plot({dir / "q.tsv"}, dir / "q.svg");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
}
