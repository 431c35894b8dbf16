#include <doctest.h>

#include <algorithm>
#include <random>
#include <set>
#include <thread>

#include "ambox/error.hpp"
#include "ambox/event_loop.hpp"
#include "ambox/transport.hpp"
#include "test_util.hpp"

using namespace ambox;
using nlohmann::json;

TEST_CASE("virtual loop runs timers in time order, FIFO on ties") {
  auto loop = EventLoop::make_virtual(test::t0());
  std::vector<int> order;
  loop->schedule_after(Duration{20}, [&] { order.push_back(3); });
  loop->schedule_after(Duration{10}, [&] { order.push_back(1); });
  loop->schedule_after(Duration{10}, [&] { order.push_back(2); });
  loop->run_until(test::t0() + Duration{100});
  CHECK(order == std::vector<int>{1, 2, 3});
  CHECK(loop->now() == test::t0() + Duration{100});
}

TEST_CASE("now() inside a callback is the due time") {
  auto loop = EventLoop::make_virtual(test::t0());
  Timestamp seen{};
  loop->schedule_at(test::at_min(7), [&] { seen = loop->now(); });
  loop->run_until(test::at_min(60));
  CHECK(seen == test::at_min(7));
}

TEST_CASE("cancel and timers scheduled from callbacks") {
  auto loop = EventLoop::make_virtual(test::t0());
  int fired = 0;
  auto id = loop->schedule_after(Duration{5}, [&] { ++fired; });
  loop->cancel(id);
  loop->schedule_after(Duration{5}, [&] {
    ++fired;
    loop->schedule_after(Duration{0}, [&] { fired += 10; });
  });
  loop->run_for(Duration{10});
  CHECK(fired == 11);
  CHECK(loop->pending_timers() == 0);
}

TEST_CASE("a throwing callback propagates and is not retried") {
  auto loop = EventLoop::make_virtual(test::t0());
  int after = 0;
  loop->schedule_after(Duration{1}, [] { throw std::runtime_error("boom"); });
  loop->schedule_after(Duration{2}, [&] { ++after; });
  CHECK_THROWS_AS(loop->run_until(test::t0() + Duration{10}), std::runtime_error);
  loop->run_until(test::t0() + Duration{10});
  CHECK(after == 1);
}

TEST_CASE("posted callbacks survive an exception in an earlier one") {
  auto loop = EventLoop::make_virtual(test::t0());
  int ran = 0;
  loop->post([] { throw std::runtime_error("first"); });
  loop->post([&] { ++ran; });
  CHECK_THROWS(loop->run_for(Duration{1}));
  loop->run_for(Duration{1});
  CHECK(ran == 1);
}

// Oracle: a stable sort of (due time, insertion order).
TEST_CASE("property: execution order equals stable sort by due time") {
  std::mt19937_64 rng(77);
  for (int round = 0; round < 100; ++round) {
    auto loop = EventLoop::make_virtual(test::t0());
    std::vector<std::pair<std::int64_t, int>> plan;
    std::vector<int> ran;
    std::set<int> cancelled;
    std::vector<TimerId> ids;
    int n = 1 + static_cast<int>(rng() % 60);
    for (int i = 0; i < n; ++i) {
      auto due = static_cast<std::int64_t>(rng() % 20);
      plan.push_back({due, i});
      ids.push_back(loop->schedule_at(test::t0() + Duration{due}, [&ran, i] { ran.push_back(i); }));
    }
    for (int i = 0; i < n; ++i)
      if (rng() % 5 == 0) {
        loop->cancel(ids[static_cast<std::size_t>(i)]);
        cancelled.insert(i);
      }
    loop->run_until(test::t0() + Duration{100});
    std::stable_sort(plan.begin(), plan.end(), [](auto& a, auto& b) { return a.first < b.first; });
    std::vector<int> expected;
    for (auto& [due, i] : plan)
      if (!cancelled.count(i)) expected.push_back(i);
    CHECK(ran == expected);
  }
}

TEST_CASE("paced virtual time sleeps in proportion") {
  auto loop = EventLoop::make_virtual(test::t0(), 0.001);  // 1 ms per virtual second
  auto start = std::chrono::steady_clock::now();
  loop->run_for(Duration{200'000});
  auto real = std::chrono::steady_clock::now() - start;
  CHECK(real >= std::chrono::milliseconds(150));
  CHECK(real < std::chrono::milliseconds(3000));
}

TEST_CASE("wall loop: run() returns after stop() from another thread") {
  auto loop = EventLoop::make_wall();
  int ticks = 0;
  std::function<void()> tick = [&] {
    ++ticks;
    loop->schedule_after(Duration{5}, tick);
  };
  loop->schedule_after(Duration{5}, tick);
  std::thread stopper([&] {
    std::this_thread::sleep_for(std::chrono::milliseconds(120));
    loop->post([&] { loop->stop(); });
  });
  loop->run();
  stopper.join();
  CHECK(ticks > 3);
}

TEST_CASE("Lifetime tokens") {
  std::weak_ptr<bool> t;
  {
    Lifetime l;
    t = l.token();
    CHECK(Lifetime::alive(t));
  }
  CHECK_FALSE(Lifetime::alive(t));
}

TEST_CASE("fault schedule windows are half-open and must not overlap") {
  FaultSchedule s({{"wifi", Duration{10}, Duration{20}, FaultMode::Down, Duration{0}},
                   {"wifi", Duration{20}, Duration{30}, FaultMode::AddedLatency, Duration{148}},
                   {"ble:m", Duration{0}, Duration{5}, FaultMode::Down, Duration{0}}});
  CHECK_FALSE(s.is_down("wifi", Duration{9}));
  CHECK(s.is_down("wifi", Duration{10}));
  CHECK(s.is_down("wifi", Duration{19}));
  CHECK_FALSE(s.is_down("wifi", Duration{20}));
  CHECK(s.latency("wifi", Duration{25}) == Duration{148});
  CHECK(s.latency("wifi", Duration{30}) == Duration{0});
  CHECK(s.windows_for("wifi").size() == 2);
  CHECK(FaultSchedule::from_json(s.to_json()).windows() == s.windows());

  CHECK_THROWS_AS(FaultSchedule({{"wifi", Duration{0}, Duration{10}, FaultMode::Down, Duration{0}},
                                 {"wifi", Duration{5}, Duration{15}, FaultMode::Down, Duration{0}}}),
                  Error);
  CHECK_THROWS_AS(FaultSchedule({{"wifi", Duration{5}, Duration{5}, FaultMode::Down, Duration{0}}}), Error);
  CHECK_THROWS_AS(FaultSchedule::from_json(json::parse(R"([{"link":"x","start_ms":0,"end_ms":1,"mode":"flaky"}])")),
                  Error);
}

TEST_CASE("property: frames reassemble from arbitrary chunking") {
  std::mt19937_64 rng(8);
  for (int round = 0; round < 200; ++round) {
    std::vector<std::string> bodies;
    std::string wire;
    for (std::size_t i = rng() % 6; i > 0; --i) {
      std::string b(rng() % 300, '\0');
      for (auto& c : b) c = static_cast<char>(rng());
      bodies.push_back(b);
      wire += encode_frame(b);
    }
    std::string buffer;
    std::vector<std::string> got;
    std::size_t pos = 0;
    while (pos < wire.size()) {
      auto chunk = std::min<std::size_t>(wire.size() - pos, 1 + rng() % 64);
      buffer.append(wire, pos, chunk);
      pos += chunk;
      while (auto f = take_frame(buffer)) got.push_back(*f);
    }
    CHECK(got == bodies);
    CHECK(buffer.empty());
  }
  std::string huge = encode_frame(std::string(100, 'x'));
  CHECK_THROWS_AS(take_frame(huge, 10), Error);
}

TEST_CASE("endpoints") {
  auto ep = parse_endpoint("127.0.0.1:8080");
  CHECK(ep.host == "127.0.0.1");
  CHECK(ep.port == 8080);
  CHECK(ep.key() == "127.0.0.1:8080");
  CHECK_THROWS_AS(parse_endpoint("nohost"), Error);
  CHECK_THROWS_AS(parse_endpoint("h:99999"), Error);
  CHECK_THROWS_AS(parse_endpoint("h:abc"), Error);
}
