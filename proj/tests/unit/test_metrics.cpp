#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sstream>

#include "npo/error.hpp"
#include "npo/metrics.hpp"
#include "support.hpp"

using namespace npo;

TEST_CASE("records round trip bit-exactly") {
  MetricsRecord r{7, 6, 0.1 + 0.2, 1.0 / 3.0, 2.718281828459045, 3, 1e-300, 42, -0.123456789012345678};
  std::stringstream ss(format_record(r) + "\n");
  const auto lines = read_metrics(ss);
  REQUIRE(lines.size() == 1);
  REQUIRE(lines[0].record);
  CHECK(*lines[0].record == r);
}

TEST_CASE("events round trip with their payloads") {
  ControllerEvent c;
  c.kind = EventKind::Confirm;
  c.step = 30;
  c.p_hat = 0.625;
  c.q_table = {{5, 0.5}, {25, 1.0 / 3.0}};
  c.v_table = {{5, 1.01}, {25, 1.2}};
  ControllerEvent rb;
  rb.kind = EventKind::Rollback;
  rb.step = 30;
  rb.delta = 25;
  rb.target_step = 5;
  rb.note = "quote \" and newline \n";
  std::stringstream ss(format_event(31, c) + "\n\n" + format_event(31, rb) + "\n");
  const auto lines = read_metrics(ss);
  REQUIRE(lines.size() == 2);
  CHECK(*lines[0].event == c);
  CHECK(*lines[1].event == rb);
  CHECK(lines[1].event_stamp == 31);
}

TEST_CASE("parse errors carry the line number") {
  MetricsRecord r;
  std::stringstream ss(format_record(r) + "\n{\"step\": 1\n");
  try {
    read_metrics(ss);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
  std::stringstream unknown("{\"step\":1,\"t\":1,\"event\":\"explode\"}\n");
  CHECK_THROWS_AS(read_metrics(unknown), ParseError);
}

TEST_CASE("writer enforces increasing steps and appends") {
  const auto dir = npo::testing::scratch_dir("metrics_writer");
  const auto path = dir / "m.jsonl";
  {
    MetricsWriter w(path);
    w.write(MetricsRecord{0});
    w.write(MetricsRecord{1});
    CHECK_THROWS_AS(w.write(MetricsRecord{1}), ContractError);
    ControllerEvent e;
    w.write(1, e);
  }
  {
    MetricsWriter w(path, true);
    w.write(MetricsRecord{2});
  }
  const auto lines = read_metrics_file(path);
  CHECK(lines.size() == 4);
  CHECK(lines[3].record->step == 2);
  CHECK_THROWS_AS(read_metrics_file(dir / "none.jsonl"), NotFoundError);
}
