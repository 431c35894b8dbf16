#include <doctest.h>

#include "ambox/error.hpp"
#include "ambox/mote_agent.hpp"
#include "ambox/node_agent.hpp"
#include "ambox/sim_network.hpp"
#include "test_util.hpp"

using namespace ambox;
using nlohmann::json;

namespace {

struct Rig {
  test::TempDir dir{"mote"};
  std::unique_ptr<EventLoop> loop = EventLoop::make_virtual(test::t0());
  std::shared_ptr<const EnvironmentTrace> trace =
      std::make_shared<const EnvironmentTrace>(EnvironmentTrace::synthetic(Duration{86'400'000}, Duration{60'000}, 8));
  KeyPair key = KeyPair::derive("mote-1", "mote-test");
  std::unique_ptr<SimNetwork> net;
  std::unique_ptr<MoteAgent> mote;
  std::vector<SensorReading> sampled;

  explicit Rig(std::vector<FaultWindow> faults = {}) {
    net = std::make_unique<SimNetwork>(*loop, test::t0(), FaultSchedule(std::move(faults)));
    boot();
  }

  void boot() {
    std::vector<std::unique_ptr<SensorDriver>> sensors;
    for (auto spec : {SensorSpec::mote_temperature(), SensorSpec::mote_humidity()})
      sensors.push_back(std::make_unique<SimulatedSensor>(spec, trace, test::t0(), 9));
    MoteOptions o;
    o.device_id = "mote-1";
    o.address = "sim:mote-1";
    o.paired_node = "node-1";
    o.data_dir = dir.path;
    o.sync = false;
    mote = std::make_unique<MoteAgent>(o, *loop, *net, key, std::move(sensors));
    mote->on_sample([this](const SensorReading& r) { sampled.push_back(r); });
  }

  MoteConfig monitoring(Duration interval = Duration{60'000}) {
    MoteConfig c;
    c.monitoring = true;
    c.since = loop->now();
    c.sample_interval = interval;
    return c;
  }
};

}  // namespace

TEST_CASE("mote config JSON") {
  MoteConfig c;
  c.monitoring = true;
  c.since = test::at_min(3);
  c.sample_interval = Duration{30'000};
  c.sensor_params["humidity"] = {false, std::nullopt, std::nullopt};
  CHECK(mote_config_from_json(mote_config_to_json(c)) == c);
  CHECK(mote_config_from_json(json{{"monitoring", false}}) == MoteConfig{});
  CHECK_THROWS_AS(mote_config_from_json(json{{"monitoring", true}}), Error);
  CHECK_THROWS_AS(
      mote_config_from_json(json{{"monitoring", true}, {"since_ms", 0}, {"sample_interval_ms", 0}}), Error);
  CHECK_THROWS_AS(mote_config_from_json(json::object()), Error);
}

TEST_CASE("idle mote samples nothing; monitoring mote signs and buffers every reading") {
  Rig rig;
  rig.loop->run_for(Duration{10 * 60'000});
  CHECK(rig.mote->backlog() == 0);
  rig.mote->apply_config(rig.monitoring());
  rig.loop->run_for(Duration{10 * 60'000});
  CHECK(rig.sampled.size() == 2 * 11);
  CHECK(rig.mote->backlog() == rig.sampled.size());
  for (const auto& e : rig.mote->buffer().peek_batch(rig.mote->backlog())) {
    CHECK(e.envelope.signer == "mote-1");
    CHECK(verify_attestation(rig.key.public_key(), attested_reading(e.envelope)));
  }
  auto c = rig.monitoring();
  c.sensor_params["humidity"] = {false, std::nullopt, std::nullopt};
  rig.mote->apply_config(c);
  auto before = rig.sampled.size();
  rig.loop->run_for(Duration{5 * 60'000});
  CHECK(rig.sampled.size() == before + 5);  // temperature only
}

TEST_CASE("readings leave the mote only when acknowledged") {
  Rig rig;
  rig.mote->apply_config(rig.monitoring());
  rig.loop->run_for(Duration{5 * 60'000});
  REQUIRE(rig.mote->backlog() == 12);

  Central central("node-1", {rig.mote->identity()}, *rig.net);
  auto session = central.connect(rig.mote->identity());
  std::vector<Notification> got;
  session->subscribe(kReadingsCharacteristic, [&](const StreamItem& it) {
    if (!it.disconnected) got.push_back(it.notification);
  });
  rig.loop->run_for(Duration{1'000});
  CHECK(got.size() == 12);
  CHECK(rig.mote->backlog() == 12);  // streamed, not yet acknowledged

  session->write(kAckCharacteristic, json{{"sequence", got[4].sequence}}.dump());
  rig.loop->run_for(Duration{1'000});
  CHECK(rig.mote->backlog() == 7);
  session->write(kAckCharacteristic, "not json");
  rig.loop->run_for(Duration{1'000});
  CHECK(rig.mote->backlog() == 7);

  // drop the session: unacknowledged entries are streamed again next time
  session->close();
  rig.loop->run_for(Duration{1'000});
  auto again = central.connect(rig.mote->identity());
  std::vector<Notification> second;
  again->subscribe(kReadingsCharacteristic, [&](const StreamItem& it) {
    if (!it.disconnected) second.push_back(it.notification);
  });
  rig.loop->run_for(Duration{1'000});
  CHECK(second.size() == 7);
  CHECK(second.front().payload == got[5].payload);
  again->write(kAckCharacteristic, json{{"sequence", second.back().sequence}}.dump());
  rig.loop->run_for(Duration{1'000});
  CHECK(rig.mote->backlog() == 0);
  CHECK(rig.mote->counters().acked == 12);
}

TEST_CASE("pairing: only the paired node may connect") {
  Rig rig;
  Central stranger("node-2", {rig.mote->identity()}, *rig.net);
  try {
    stranger.connect(rig.mote->identity());
    FAIL("stranger connected");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Unauthorized);
  }
  Central node("node-1", {rig.mote->identity()}, *rig.net);
  CHECK(node.connect(rig.mote->identity())->open());
}

TEST_CASE("config arrives over the link and survives restart") {
  Rig rig;
  Central central("node-1", {rig.mote->identity()}, *rig.net);
  auto s = central.connect(rig.mote->identity());
  s->write(kConfigCharacteristic, "{broken");
  rig.loop->run_for(Duration{1'000});
  CHECK(rig.mote->counters().config_rejected == 1);
  CHECK_FALSE(rig.mote->config().monitoring);
  auto c = rig.monitoring(Duration{30'000});
  s->write(kConfigCharacteristic, mote_config_to_json(c).dump());
  rig.loop->run_for(Duration{1'000});
  CHECK(rig.mote->config() == c);

  rig.loop->run_for(Duration{5 * 60'000});
  auto backlog = rig.mote->backlog();
  rig.mote.reset();
  rig.loop->run_for(Duration{60'000});
  rig.boot();
  CHECK(rig.mote->config() == c);
  CHECK(rig.mote->backlog() == backlog);
  auto before = rig.sampled.size();
  rig.loop->run_for(Duration{60'000});
  CHECK(rig.sampled.size() > before);
  // no reading is ever sampled twice for the same instant
  std::set<std::string> keys;
  for (const auto& r : rig.sampled) CHECK(keys.insert(reading_key(r)).second);
}

TEST_CASE("node relays mote readings end to end through an outage") {
  Rig rig({{"ble:mote-1", Duration{10 * 60'000}, Duration{25 * 60'000}, FaultMode::Down, Duration{0}}});
  test::TempDir node_dir("relay-node");
  Ledger ledger({}, [&] { return rig.loop->now(); });
  auto node_key = KeyPair::derive("node-1", "mote-test");
  ledger.register_device(node_key.identity(DeviceKind::Node));
  rig.net->serve({"ledger.sim", 1, ""}, "wifi", [&](const std::string& b) { return handle_ledger_request(ledger, b); });
  rig.net->serve({"op.sim", 2, ""}, "wifi", [](const std::string&) { return std::string("{}"); });

  NodeOptions o;
  o.device_id = "node-1";
  o.data_dir = node_dir.path;
  o.sync = false;
  o.motes = {rig.mote->identity()};
  NodeAgent node(o, *rig.loop, *rig.net, rig.net.get(), node_key, {});
  node.config_heartbeat("op.sim", 2, Duration{30'000});
  node.config_blockchain("ledger.sim", 1, "ambox", "events");
  node.init();
  node.start_monitoring(MonitoringJob{"p", "b", Duration{60'000}, Duration{300'000}, {}});
  rig.loop->run_until(test::at_min(60) + Duration{1});
  node.stop_monitoring();
  rig.loop->run_for(Duration{10 * 60'000});

  std::multiset<std::string> committed;
  for (const auto& id : ledger.commit_order())
    for (const auto& r : ledger.get_event(id).report.readings) {
      CHECK(r.source_device == "mote-1");
      REQUIRE(r.attestation.has_value());
      CHECK(verify_attestation(rig.key.public_key(), r));
      committed.insert(reading_key(r));
    }
  std::multiset<std::string> sampled;
  for (const auto& r : rig.sampled) sampled.insert(reading_key(r));
  CHECK(committed == sampled);
  CHECK(rig.mote->backlog() == 0);
  CHECK(node.mote_sessions().at("mote-1") >= 2);
}
