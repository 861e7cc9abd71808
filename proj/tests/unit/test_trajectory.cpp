#include <doctest.h>

#include <cmath>
#include <limits>
#include <sstream>

#include "distill/trajectory.hpp"

using namespace distill;

TEST_CASE("record invariants") {
  CHECK_THROWS_AS(TrajectoryRecord({"kl", "step"}), std::invalid_argument);
  TrajectoryRecord r({"step", "kl"});
  r.append({0, 1.5});
  CHECK_THROWS_AS(r.append({1}), std::invalid_argument);
  CHECK_THROWS_AS(r.append({0, 2.0}), std::invalid_argument);
  r.append({5, 0.25});
  CHECK(r.column("kl") == std::vector<double>{1.5, 0.25});
  CHECK(r.value(1, "step") == 5);
  try {
    r.column("loss");
    FAIL("expected a missing column error");
  } catch (const std::out_of_range& e) {
    CHECK(std::string(e.what()).find("loss") != std::string::npos);
  }
}

TEST_CASE("number formatting round-trips exactly") {
  for (double v : {0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, 0.0, 1e-16, 123456789.0}) {
    const std::string s = format_number(v);
    CHECK(std::stod(s) == v);
  }
  CHECK(format_number(3.0) == "3");
  CHECK(format_number(std::numeric_limits<double>::infinity()) == "inf");
}

TEST_CASE("CSV round trip with a schema comment line") {
  TrajectoryRecord r({"step", "kl", "x_0"});
  r.append({0, 1.0 / 7.0, -3.25});
  r.append({10, std::nan(""), 1e-300});
  r.append({20, std::numeric_limits<double>::infinity(), 0.0});
  const std::string csv = to_csv(r, "demo-trajectory/1", 42);
  CHECK(csv.rfind("# schema=demo-trajectory/1 seed=42\n", 0) == 0);
  CHECK(csv.find("step,kl,x_0\n") != std::string::npos);

  std::istringstream in(csv);
  const TrajectoryRecord back = read_csv(in);
  CHECK(back.columns() == r.columns());
  REQUIRE(back.rows().size() == 3);
  CHECK(back.value(0, "kl") == r.value(0, "kl"));
  CHECK(std::isnan(back.value(1, "kl")));
  CHECK(back.value(1, "x_0") == 1e-300);
  CHECK(std::isinf(back.value(2, "kl")));
  CHECK(to_csv(back, "demo-trajectory/1", 42) == csv);
}

TEST_CASE("header-only CSV and malformed input") {
  const TrajectoryRecord empty({"step", "kl"});
  const std::string csv = to_csv(empty, "s/1", 0);
  std::istringstream in(csv);
  const TrajectoryRecord back = read_csv(in);
  CHECK(back.empty());
  CHECK(back.columns() == empty.columns());

  std::istringstream none("# schema=s/1 seed=0\n");
  CHECK_THROWS_AS(read_csv(none), std::invalid_argument);
  std::istringstream bad("step,kl\n0,abc\n");
  CHECK_THROWS_AS(read_csv(bad), std::invalid_argument);
}
