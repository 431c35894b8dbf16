#include <doctest.h>

#include <random>

#include "ambox/error.hpp"
#include "ambox/event_loop.hpp"
#include "ambox/sim_network.hpp"
#include "test_util.hpp"

using namespace ambox;

namespace {

struct Net {
  std::unique_ptr<EventLoop> loop = EventLoop::make_virtual(test::t0());
  SimNetwork net;
  explicit Net(std::vector<FaultWindow> w = {}) : net(*loop, test::t0(), FaultSchedule(std::move(w))) {}
};

Response call(Net& n, RequestChannel& ch, const std::string& body, Duration timeout = Duration{10'000}) {
  std::optional<Response> got;
  ch.request(body, timeout, [&](Response r) { got = std::move(r); });
  while (!got && n.loop->step()) {
  }
  REQUIRE(got.has_value());
  return *got;
}

FaultWindow down(std::string link, std::int64_t from_ms, std::int64_t to_ms) {
  return {std::move(link), Duration{from_ms}, Duration{to_ms}, FaultMode::Down, Duration{0}};
}

}  // namespace

TEST_CASE("request/response over an up link") {
  Net n;
  n.net.serve({"ledger.sim", 7051, ""}, "wifi", [](const std::string& b) { return "echo:" + b; });
  auto ch = n.net.framed({"ledger.sim", 7051, ""});
  auto r = call(n, *ch, "hi");
  CHECK(r.ok());
  CHECK(r.body == "echo:hi");
  CHECK(n.loop->now() == test::t0());  // no latency configured

  auto nobody = n.net.framed({"nowhere.sim", 1, ""});
  CHECK(call(n, *nobody, "x").error == ErrorCode::ConnectionRefused);
}

TEST_CASE("property: round trip takes exactly the injected latency") {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 100; ++i) {
    auto lat = static_cast<std::int64_t>(rng() % 2000);
    Net n({{"wifi", Duration{0}, Duration{3'600'000}, FaultMode::AddedLatency, Duration{lat}}});
    n.net.serve({"l", 1, ""}, "wifi", [](const std::string& b) { return b; });
    auto ch = n.net.framed({"l", 1, ""});
    auto sent = n.loop->now();
    auto r = call(n, *ch, "ping");
    CHECK(r.ok());
    CHECK((n.loop->now() - sent).count() == lat);
  }
}

TEST_CASE("down links fail fast; an outage mid-flight drops the reply") {
  Net n({down("wifi", 100, 200), {"wifi", Duration{0}, Duration{100}, FaultMode::AddedLatency, Duration{150}}});
  int handled = 0;
  n.net.serve({"l", 1, ""}, "wifi", [&](const std::string& b) {
    ++handled;
    return b;
  });
  auto ch = n.net.framed({"l", 1, ""});
  // sent at 0: request arrives at 75, reply would arrive at 150 inside the outage
  auto r = call(n, *ch, "a");
  CHECK(r.error == ErrorCode::LinkDown);
  CHECK(handled == 1);

  n.loop->run_until(test::t0() + Duration{120});
  CHECK(call(n, *ch, "b").error == ErrorCode::LinkDown);
  CHECK(handled == 1);

  n.loop->run_until(test::t0() + Duration{200});
  CHECK(call(n, *ch, "c").ok());
  CHECK(handled == 2);
}

TEST_CASE("slow replies time out exactly once") {
  Net n({{"wifi", Duration{0}, Duration{100'000}, FaultMode::AddedLatency, Duration{5'000}}});
  n.net.serve({"l", 1, ""}, "wifi", [](const std::string& b) { return b; });
  auto ch = n.net.framed({"l", 1, ""});
  int callbacks = 0;
  std::optional<ErrorCode> err;
  ch->request("x", Duration{1'000}, [&](Response r) {
    ++callbacks;
    err = r.error;
  });
  n.loop->run_for(Duration{20'000});
  CHECK(callbacks == 1);
  CHECK(err == ErrorCode::Timeout);
}

TEST_CASE("rtt_benchmark in virtual time reports the injected latency") {
  for (std::int64_t lat : {148, 46, 628, 1}) {
    Net n({{"wifi", Duration{0}, Duration{3'600'000}, FaultMode::AddedLatency, Duration{lat}}});
    auto ch = n.net.channel_on("wifi", [](const std::string& b) { return b; });
    auto s = rtt_benchmark(*n.loop, *ch, 40, Duration{5'000}, "p");
    CHECK(s.completed == 40);
    CHECK(s.avg_ms == static_cast<double>(lat));
    CHECK(s.min_ms == lat);
    CHECK(s.max_ms == lat);
    CHECK_FALSE(s.aborted);
  }
  Net dead({down("wifi", 0, 3'600'000)});
  auto ch = dead.net.channel_on("wifi", [](const std::string& b) { return b; });
  auto s = rtt_benchmark(*dead.loop, *ch, 40, Duration{5'000}, "p");
  CHECK(s.aborted);
  CHECK(s.completed == 0);
}

TEST_CASE("short range: allow-list, subscribe, ordered notifications") {
  Net n({{"ble:mote-1", Duration{0}, Duration{3'600'000}, FaultMode::AddedLatency, Duration{46}}});
  PeripheralIdentity mote{"mote-1", "sim:mote-1", ""};
  std::vector<std::string> subscribed;
  std::vector<std::string> written;
  auto port = n.net.advertise(mote, {[](const std::string& c) { return c == "node-1"; },
                                     [&](const std::string& ch) { subscribed.push_back(ch); },
                                     [&](const std::string& ch, const std::string& p) { written.push_back(ch + "=" + p); },
                                     [] {}});
  Central stranger("node-9", {mote}, n.net);
  CHECK_THROWS_AS(stranger.connect(mote), Error);  // peripheral refuses the pairing

  Central outsider("node-1", {}, n.net);
  CHECK_THROWS_AS(outsider.connect(mote), Error);  // not in our allow-list

  Central central("node-1", {mote}, n.net);
  auto session = central.connect(mote);
  REQUIRE(session);
  std::vector<std::uint64_t> seqs;
  std::vector<std::string> payloads;
  session->subscribe("readings", [&](const StreamItem& it) {
    if (it.disconnected) return;
    seqs.push_back(it.notification.sequence);
    payloads.push_back(it.notification.payload);
  });
  n.loop->run_for(Duration{100});
  CHECK(subscribed == std::vector<std::string>{"readings"});
  CHECK(port->connected());
  for (int i = 0; i < 5; ++i) CHECK(port->notify("readings", std::to_string(i)).has_value());
  session->write("config", "{}");
  n.loop->run_for(Duration{100});
  CHECK(payloads == std::vector<std::string>{"0", "1", "2", "3", "4"});
  CHECK(std::is_sorted(seqs.begin(), seqs.end()));
  CHECK(written == std::vector<std::string>{"config={}"});
}

TEST_CASE("short range: an outage closes the session and the reconnector restores it") {
  Net n({down("ble:mote-1", 10'000, 40'000)});
  PeripheralIdentity mote{"mote-1", "sim:mote-1", ""};
  auto port = n.net.advertise(mote, {[](const std::string&) { return true; }, {}, {}, {}});
  Central central("node-1", {mote}, n.net);
  int sessions = 0, closes = 0;
  auto rc = auto_reconnect(*n.loop, central, mote, ReconnectPolicy{Duration{2'000}}, [&](std::shared_ptr<Session> s) {
    ++sessions;
    s->on_close([&] { ++closes; });
  });
  n.loop->run_until(test::t0() + Duration{5'000});
  CHECK(sessions == 1);
  n.loop->run_until(test::t0() + Duration{20'000});
  CHECK(closes == 1);
  CHECK_FALSE(port->connected());
  n.loop->run_until(test::t0() + Duration{45'000});
  CHECK(sessions == 2);
  CHECK(rc->retries() > 0);
  rc->cancel();
}

TEST_CASE("message-log digest is reproducible") {
  auto run = [] {
    Net n({down("wifi", 50, 80)});
    n.net.serve({"l", 1, ""}, "wifi", [](const std::string& b) { return b + "!"; });
    auto ch = n.net.framed({"l", 1, ""});
    for (int i = 0; i < 10; ++i) {
      call(n, *ch, "m" + std::to_string(i));
      n.loop->run_for(Duration{10});
    }
    return std::make_pair(n.net.message_log_digest(), n.net.messages_logged());
  };
  auto a = run();
  auto b = run();
  CHECK(a == b);
  CHECK(a.second > 10);
}
