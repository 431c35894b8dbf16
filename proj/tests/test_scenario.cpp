#include <doctest.h>

#include "ambox/error.hpp"
#include "ambox/harness.hpp"
#include "ambox/scenario.hpp"
#include "test_util.hpp"

using namespace ambox;
using nlohmann::json;

namespace {

json mini() {
  return json::parse(R"({
    "name": "mini",
    "span": "40m",
    "drain": "10m",
    "time_scale": 0,
    "topology": {"node": {"id": "node-1"}, "motes": [{"id": "mote-1"}]},
    "job": {"prod_id": "p", "batch_no": "b", "sample_interval": "1m", "interval": "5m"},
    "fault_schedule": [
      {"link": "wifi", "mode": "down", "start": "8m", "end": "19m"},
      {"link": "ble:mote-1", "mode": "down", "start": "21m", "end": "26m"}
    ],
    "assertions": ["zero_loss", "no_duplicates", "order", "exactly_once", "mote_multiset", "mote_signatures",
                   "chain_intact", "world_state_replay", "drained"]
  })");
}

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no error thrown");
  return ErrorCode::IoFailure;
}

}  // namespace

TEST_CASE("every shipped scenario parses and round-trips") {
  int seen = 0;
  for (auto& entry : std::filesystem::directory_iterator(AMBOX_SCENARIO_DIR)) {
    if (entry.path().extension() != ".json") continue;
    CAPTURE(entry.path().string());
    auto s = Scenario::load(entry.path());
    CHECK(s.name == entry.path().stem().string());
    auto again = Scenario::from_json(s.to_json());
    CHECK(again.to_json() == s.to_json());
    ++seen;
  }
  CHECK(seen >= 9);
}

TEST_CASE("scenario validation") {
  auto bad = [](const std::function<void(json&)>& edit) {
    auto j = mini();
    edit(j);
    return code_of([&] { Scenario::from_json(j); });
  };
  CHECK(bad([](json& j) { j.erase("name"); }) == ErrorCode::ScenarioInvalid);
  CHECK(bad([](json& j) { j["span"] = "soon"; }) == ErrorCode::ScenarioInvalid);
  CHECK(bad([](json& j) { j["span"] = "0s"; }) == ErrorCode::ScenarioInvalid);
  CHECK(bad([](json& j) { j["assertions"].push_back("everything_fine"); }) == ErrorCode::ScenarioInvalid);
  CHECK(bad([](json& j) { j["mode"] = "party"; }) == ErrorCode::ScenarioInvalid);
  CHECK(bad([](json& j) { j.erase("job"); }) == ErrorCode::ScenarioInvalid);
  CHECK(bad([](json& j) { j["job"]["sample_interval"] = "10m"; }) == ErrorCode::ScenarioInvalid);
  CHECK(bad([](json& j) { j["fault_schedule"].push_back({{"link", "wifi"}, {"mode", "down"}, {"start", "9m"}, {"end", "10m"}}); }) ==
        ErrorCode::ScenarioInvalid);
  CHECK(bad([](json& j) { j["rtt"] = json::array({{{"probe", "x"}, {"link", "wifi"}, {"n", 0}}}); }) ==
        ErrorCode::ScenarioInvalid);
  CHECK(bad([](json& j) { j["crash"] = {{"kill_points", 3}, {"points", {"explode"}}}; }) == ErrorCode::ScenarioInvalid);
  CHECK_NOTHROW(Scenario::from_json(mini()));
  CHECK(code_of([] { Scenario::load("/nonexistent/scenario.json"); }) == ErrorCode::ScenarioInvalid);
}

TEST_CASE("a small two-device run passes and is reproducible") {
  auto s = Scenario::from_json(mini());
  RunOptions o;
  o.seed = 3;
  auto a = run_scenario(s, o);
  for (const auto& r : a.assertions) {
    CAPTURE(r.detail);
    CHECK_MESSAGE(r.pass, r.name);
  }
  CHECK(a.counts.committed > 0);
  CHECK(a.counts.duplicated == 0);
  auto b = run_scenario(s, o);
  CHECK(a.to_canonical_json() == b.to_canonical_json());
  o.seed = 4;
  auto c = run_scenario(s, o);
  CHECK(c.passed());
  CHECK(c.to_canonical_json() != a.to_canonical_json());
  CHECK(a.summary().find("mini") != std::string::npos);
}

TEST_CASE("latency table layout") {
  std::vector<LatencyStats> stats = {{"Node to ledger", 40, 40, 148.0, 148, 148, false},
                                     {"Mote to Node", 40, 12, 46.0, 46, 46, true}};
  auto t = latency_table(stats);
  CHECK(t.find("Average") != std::string::npos);
  CHECK(t.find("148.00") != std::string::npos);
  CHECK(t.find("Mote to Node") != std::string::npos);
  auto j = to_json_value(stats[1]);
  CHECK(j["aborted"] == true);
  CHECK(j["completed"] == 12);
}

TEST_CASE("rtt probes in their own world") {
  auto s = run_rtt_probe({"p", "wifi", 40, Duration{148}, false}, 1, false, 0.0);
  CHECK(s.completed == 40);
  CHECK(s.avg_ms == 148.0);
  auto down = run_rtt_probe({"p", "wifi", 40, Duration{148}, true}, 1, false, 0.0);
  CHECK(down.aborted);
}
