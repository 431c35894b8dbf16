#include <doctest.h>

#include <random>
#include <thread>

#include "ambox/error.hpp"
#include "ambox/harness.hpp"
#include "ambox/http_api.hpp"
#include "ambox/ledger.hpp"
#include "ambox/net_tcp.hpp"
#include "ambox/node_agent.hpp"
#include "ambox/operator.hpp"
#include "ambox/sim_network.hpp"
#include "test_util.hpp"

using namespace ambox;
using nlohmann::json;

namespace {

HeartbeatMessage hb(const std::string& dev, std::uint64_t seq, NodeState st = NodeState::Heartbeat) {
  return HeartbeatMessage{dev, st, test::t0(), seq, true, false, Duration{30'000}};
}

Timestamp now_wall() { return std::chrono::time_point_cast<Duration>(std::chrono::system_clock::now()); }

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

TEST_CASE("fleet view: staleness, gaps and deadlines") {
  FleetView f;
  CHECK(f.ingest(hb("node-1", 1), test::t0()));
  CHECK(f.ingest(hb("node-1", 2), test::t0() + Duration{10'000}));
  CHECK_FALSE(f.ingest(hb("node-1", 2), test::t0() + Duration{11'000}));  // replayed
  CHECK_FALSE(f.ingest(hb("node-1", 1), test::t0() + Duration{12'000}));
  CHECK(f.ingest(hb("node-1", 5, NodeState::Monitoring), test::t0() + Duration{45'000}));
  auto e = f.entry("node-1", test::t0() + Duration{45'000});
  REQUIRE(e.has_value());
  CHECK(e->heartbeats == 3);
  CHECK(e->last_sequence == 5);
  CHECK(e->reported_state == NodeState::Monitoring);
  CHECK(e->max_gap == Duration{35'000});
  CHECK(e->late_arrivals == 1);
  CHECK_FALSE(e->missed_deadline);
  CHECK_FALSE(f.entry("node-1", test::t0() + Duration{75'000})->missed_deadline);
  CHECK(f.entry("node-1", test::t0() + Duration{75'001})->missed_deadline);
  CHECK_FALSE(f.entry("node-2", test::t0()).has_value());

  CHECK_THROWS_AS(f.ingest_json("{", test::t0()), Error);
  CHECK_THROWS_AS(f.ingest_json(json(hb("", 9)).dump(), test::t0()), Error);
  CHECK(f.ingest_json(json(hb("node-2", 1)).dump(), test::t0()));
  CHECK(to_json_value(*f.entry("node-2", test::t0()))["device_id"] == "node-2");
}

// The view is a pure function of the ingested log: replaying the log gives
// the same answer at any query time, and the gap statistics match a direct
// recomputation.
TEST_CASE("property: rebuilding from the log reproduces the view") {
  std::mt19937_64 rng(12);
  for (int round = 0; round < 100; ++round) {
    FleetView live;
    std::map<std::string, std::uint64_t> seq;
    Timestamp t = test::t0();
    for (int i = 0; i < 200; ++i) {
      auto dev = "node-" + std::to_string(rng() % 4);
      t += Duration{static_cast<std::int64_t>(rng() % 40'000)};
      std::uint64_t s = rng() % 5 == 0 ? seq[dev] : ++seq[dev];  // some duplicates
      live.ingest(hb(dev, s), t);
    }
    auto rebuilt = FleetView::rebuild(live.log());
    for (int q = 0; q < 5; ++q) {
      auto now = t + Duration{static_cast<std::int64_t>(rng() % 100'000)};
      CHECK(rebuilt.view(now) == live.view(now));
    }
    std::map<std::string, std::pair<Timestamp, Duration>> oracle;
    for (const auto& item : live.log()) {
      auto [it, fresh] = oracle.try_emplace(item.message.device_id, item.received_at, Duration{0});
      if (!fresh) {
        it->second.second = std::max(it->second.second, item.received_at - it->second.first);
        it->second.first = item.received_at;
      }
    }
    for (const auto& e : live.view(t)) CHECK(e.max_gap == oracle.at(e.device_id).second);
  }
}

namespace {

struct SimWorld {
  test::TempDir dir{"op"};
  std::unique_ptr<EventLoop> loop = EventLoop::make_virtual(test::t0());
  SimNetwork net{*loop, test::t0(), FaultSchedule{}};
  Ledger ledger{{}, [this] { return loop->now(); }};
  KeyPair key = KeyPair::derive("node-1", "op-test");
  std::unique_ptr<NodeAgent> node;
  bool ledger_up = true;

  SimWorld() {
    net.serve({"ledger.sim", 1, ""}, "wifi", [this](const std::string& b) { return handle_ledger_request(ledger, b); });
    net.serve({"op.sim", 2, ""}, "wifi", [](const std::string&) { return std::string("{}"); });
    std::vector<std::unique_ptr<SensorDriver>> sensors;
    auto trace = std::make_shared<const EnvironmentTrace>(EnvironmentTrace::synthetic(Duration{86'400'000}, Duration{60'000}, 1));
    sensors.push_back(std::make_unique<SimulatedSensor>(SensorSpec::node_temperature(), trace, test::t0(), 1));
    NodeOptions o;
    o.device_id = "node-1";
    o.data_dir = dir.path;
    o.sync = false;
    node = std::make_unique<NodeAgent>(o, *loop, net, &net, key, std::move(sensors));
  }

  LedgerAdmin admin() {
    return LedgerAdmin([this](const std::string& req) {
      if (!ledger_up) throw Error(ErrorCode::LedgerUnreachable, "down");
      return handle_ledger_request(ledger, req);
    });
  }
  CommissionPlan plan() {
    CommissionPlan p;
    p.heartbeat_ip = "op.sim";
    p.heartbeat_port = 2;
    p.ledger_ip = "ledger.sim";
    p.ledger_port = 1;
    return p;
  }
};

}  // namespace

TEST_CASE("commission registers first, then configures and powers on") {
  SimWorld w;
  DirectDeviceControl dev([&]() -> NodeAgent& { return *w.node; });

  w.ledger_up = false;
  auto admin = w.admin();
  CHECK(code_of([&] { commission(dev, admin, w.plan()); }) == ErrorCode::LedgerUnreachable);
  CHECK(w.node->state() == NodeState::Idle);
  CHECK_FALSE(w.node->config().heartbeat.has_value());

  w.ledger_up = true;
  auto out = commission(dev, admin, w.plan());
  CHECK(out.device_id == "node-1");
  CHECK(out.newly_registered);
  CHECK(out.initialized);
  CHECK(out.final_state == NodeState::Heartbeat);
  CHECK(w.ledger.registered_key("node-1") == w.key.public_key().pem());

  // again: idempotent
  auto again = commission(dev, admin, w.plan());
  CHECK_FALSE(again.newly_registered);
  CHECK_FALSE(again.initialized);

  dev.start_monitoring(MonitoringJob{"p", "b", Duration{60'000}, Duration{300'000}, {}});
  CHECK(code_of([&] { commission(dev, admin, w.plan()); }) == ErrorCode::DeviceIllegalState);
  CHECK(code_of([&] { dev.init(); }) == ErrorCode::DeviceIllegalState);

  // a different key under the same id is refused
  auto imposter = KeyPair::derive("node-1", "someone-else");
  CHECK(code_of([&] { admin.register_device(imposter.identity(DeviceKind::Node)); }) == ErrorCode::AlreadyRegistered);
}

TEST_CASE("decommission stops, waits for the drain and finds the last report") {
  SimWorld w;
  DirectDeviceControl dev([&]() -> NodeAgent& { return *w.node; });
  auto admin = w.admin();
  commission(dev, admin, w.plan());
  dev.start_monitoring(MonitoringJob{"p", "b", Duration{60'000}, Duration{300'000}, {}});
  w.loop->run_for(Duration{17 * 60'000});
  auto sleep = [&](Duration d) { w.loop->run_for(d); };
  auto out = decommission(dev, admin, Duration{60'000}, sleep);
  CHECK(out.stopped_monitoring);
  CHECK(out.drained);
  REQUIRE(out.latest_report_id.has_value());
  CHECK(*out.latest_report_id == w.ledger.get_recent({"node-1", std::nullopt}, 1).at(0).report_id);
  dev.turn_off();
  CHECK(w.node->state() == NodeState::Idle);
  CHECK(code_of([&] { decommission(dev, admin, Duration{1'000}, sleep); }) == ErrorCode::DeviceIllegalState);
}

TEST_CASE("wire form of a monitoring job") {
  auto j = monitoring_job_from_wire(json{{"prod_id", "p"}, {"batch_no", "b"}, {"interval", "5m"}});
  CHECK(j.report_interval == Duration{300'000});
  CHECK(j.sample_interval == Duration{60'000});
  auto k = monitoring_job_from_wire(json{{"prod_id", "p"}, {"batch_no", "b"}, {"interval", 20'000}});
  CHECK(k.sample_interval == Duration{20'000});
  MonitoringJob full{"p", "b", Duration{30'000}, Duration{120'000}, {{"humidity", {true, 20.0, std::nullopt}}}};
  CHECK(monitoring_job_from_wire(monitoring_job_to_wire(full)) == full);
  CHECK_THROWS_AS(monitoring_job_from_wire(json{{"prod_id", "p"}}), Error);
  CHECK_THROWS_AS(
      monitoring_job_from_wire(json{{"prod_id", "p"}, {"batch_no", "b"}, {"interval", 1000}, {"sample_interval", 5000}}),
      Error);
}

TEST_CASE("over real sockets: commission, monitor, watch the fleet, decommission") {
  test::TempDir dir("live");
  Ledger ledger({}, [] { return now_wall(); });
  TcpFramedServer ledger_srv("127.0.0.1", 0, [&](const std::string& b) { return handle_ledger_request(ledger, b); });
  FleetView fleet;
  OperatorServer op(fleet, [] { return now_wall(); }, "127.0.0.1", 0);

  auto loop = EventLoop::make_wall();
  RealChannelFactory channels(*loop);
  auto trace = std::make_shared<const EnvironmentTrace>(
      EnvironmentTrace::synthetic(Duration{86'400'000}, Duration{60'000}, 1));
  std::vector<std::unique_ptr<SensorDriver>> sensors;
  sensors.push_back(std::make_unique<SimulatedSensor>(SensorSpec::node_temperature(), trace, now_wall(), 1));
  NodeOptions o;
  o.device_id = "node-live";
  o.data_dir = dir.path;
  o.sync = false;
  o.retry_interval = Duration{200};
  auto key = KeyPair::derive("node-live", "op-test");
  NodeAgent node(o, *loop, channels, nullptr, key, std::move(sensors));
  NodeControlServer control(node, *loop, "127.0.0.1", 0);
  std::thread runner([&] { loop->run(); });

  HttpDeviceControl dev({"127.0.0.1", control.port(), ""});
  LedgerAdmin admin([&](const std::string& req) {
    return framed_call({"127.0.0.1", ledger_srv.port(), ""}, req, Duration{5'000});
  });
  CommissionPlan plan;
  plan.heartbeat_ip = "127.0.0.1";
  plan.heartbeat_port = op.port();
  plan.heartbeat_timeout = Duration{3'000};
  plan.ledger_ip = "127.0.0.1";
  plan.ledger_port = ledger_srv.port();
  auto out = commission(dev, admin, plan);
  CHECK(out.final_state == NodeState::Heartbeat);
  CHECK(code_of([&] { dev.stop_monitoring(); }) == ErrorCode::DeviceIllegalState);

  dev.start_monitoring(MonitoringJob{"p", "b", Duration{200}, Duration{1'000}, {}});
  CHECK(dev.status()["state"] == "Monitoring");
  std::this_thread::sleep_for(std::chrono::milliseconds(3'500));
  auto e = fleet.entry("node-live", now_wall());
  REQUIRE(e.has_value());
  CHECK(e->heartbeats >= 3);
  CHECK_FALSE(e->missed_deadline);
  CHECK(e->reported_state == NodeState::Monitoring);

  auto done = decommission(dev, admin, Duration{10'000},
                           [](Duration d) { std::this_thread::sleep_for(std::chrono::milliseconds(d.count())); },
                           Duration{100});
  CHECK(done.drained);
  CHECK(ledger.event_count() >= 2);
  dev.turn_off();
  CHECK(dev.status()["state"] == "Idle");
  CHECK_FALSE(ledger.verify_chain().has_value());

  loop->post([&] { loop->stop(); });
  runner.join();
  control.stop();

  HttpDeviceControl nobody({"127.0.0.1", control.port(), ""}, Duration{500});
  CHECK(code_of([&] { nobody.status(); }) == ErrorCode::DeviceUnreachable);
}
