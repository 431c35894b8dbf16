// Runs the ten acceptance criteria and prints one PASS/FAIL line each.

#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "ambox/crypto.hpp"
#include "ambox/harness.hpp"
#include "ambox/ledger.hpp"
#include "ambox/scenario.hpp"

using namespace ambox;

namespace {

const std::filesystem::path kScenarioDir = AMBOX_SCENARIO_DIR;
constexpr std::uint64_t kSeed = 20240611;

struct Run {
  ScenarioReport report;
  double seconds = 0;
};

Run run(const std::string& name, std::uint64_t seed = kSeed) {
  auto sc = Scenario::load(kScenarioDir / (name + ".json"));
  RunOptions opt;
  opt.seed = seed;
  auto t = std::chrono::steady_clock::now();
  Run r;
  r.report = run_scenario(sc, opt);
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count();
  return r;
}

const AssertionResult* find(const ScenarioReport& r, const std::string& name) {
  for (const auto& a : r.assertions)
    if (a.name == name) return &a;
  return nullptr;
}

// Every named assertion must be present and pass; collects their details.
bool require(const ScenarioReport& r, const std::vector<std::string>& names, std::ostringstream& d) {
  bool ok = true;
  for (const auto& n : names) {
    const auto* a = find(r, n);
    if (!a) {
      d << "[" << n << ": not evaluated] ";
      ok = false;
      continue;
    }
    if (!a->pass) d << "[" << n << " FAILED: " << a->detail << "] ";
    ok = ok && a->pass;
  }
  return ok;
}

int failures = 0;

void verdict(int n, bool pass, const std::string& what, const std::string& detail) {
  if (!pass) ++failures;
  std::cout << "criterion " << n << ": " << (pass ? "PASS" : "FAIL") << " - " << what << " (" << detail << ")"
            << std::endl;
}

std::string secs(double s) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f s", s);
  return buf;
}

EventReport sample_report(const std::string& device, std::mt19937_64& rng, std::uint64_t counter) {
  std::uniform_int_distribution<int> nreadings(1, 4);
  std::uniform_real_distribution<double> temp(-5.0, 12.0);
  EventReport r;
  r.device_id = device;
  r.product_id = "lot-" + std::to_string(rng() % 1000);
  r.batch_no = "B-" + std::to_string(rng() % 100);
  r.created_at = from_millis(kDefaultEpochMillis + static_cast<std::int64_t>(counter) * 300'000);
  r.report_id = make_report_id(device, r.created_at, counter);
  int n = nreadings(rng);
  for (int i = 0; i < n; ++i) {
    SensorReading s;
    s.quantity = Quantity::temperature();
    s.value = std::round(temp(rng) * 100) / 100;
    s.sampled_at = r.created_at - Duration{60'000 * (n - i)};
    s.source_device = device;
    r.readings.push_back(s);
  }
  return r;
}

// --- criteria --------------------------------------------------------------------

void criterion_4() {
  std::mt19937_64 rng(kSeed);
  const auto& key = harness_key("node-mut", kSeed);
  std::uint64_t checks = 0, false_accepts = 0, malformed = 0, originals_ok = 0;
  for (std::uint64_t e = 0; e < 20; ++e) {
    auto env = sign(key, sample_report("node-mut", rng, e + 1));
    if (verify(key.public_key(), env)) ++originals_ok;
    for (std::size_t i = 0; i < env.payload.size(); ++i) {
      const char orig = env.payload[i];
      for (int v = 0; v < 256; ++v) {
        if (static_cast<char>(v) == orig) continue;
        env.payload[i] = static_cast<char>(v);
        ++checks;
        try {
          if (verify(key.public_key(), env)) ++false_accepts;
        } catch (const Error& err) {
          if (err.code() != ErrorCode::MalformedEnvelope) ++false_accepts;
          ++malformed;
        }
      }
      env.payload[i] = orig;
    }
  }
  std::ostringstream d;
  d << checks << " mutations of 20 envelopes, " << false_accepts << " false accepts, " << malformed
    << " rejected as malformed, " << originals_ok << "/20 originals verify";
  verdict(4, false_accepts == 0 && originals_ok == 20 && checks > 0, "exhaustive single-byte mutation", d.str());
}

bool chain_flip_check(std::ostringstream& d) {
  std::int64_t tick = kDefaultEpochMillis;
  auto dir = std::filesystem::temp_directory_path() / ("ambox-accept-chain-" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  Ledger ledger(Ledger::Options{dir, false}, [&] { return from_millis(tick += 1000); });
  const auto& key = harness_key("node-chain", kSeed);
  ledger.register_device(key.identity(DeviceKind::Node));
  std::mt19937_64 rng(kSeed + 10);
  std::uint64_t counter = 0;
  while (ledger.height() < 49) ledger.add_events({sign(key, sample_report("node-chain", rng, ++counter))});

  auto lines = ledger.stored_lines();
  bool ok = lines.size() == 50 && !ledger.verify_chain();
  std::uint64_t flips = 0, exact = 0, disk_exact = 0;
  for (std::uint64_t h = 0; h < lines.size(); ++h) {
    const auto len = lines[h].size();
    for (int k = 0; k < 8; ++k) {
      auto offset = static_cast<std::size_t>(rng() % len);
      auto mask = static_cast<unsigned char>(1 + rng() % 255);
      ledger.corrupt_stored_byte(h, offset, mask);
      ++flips;
      auto at = ledger.verify_chain();
      if (at && *at == h) ++exact;
      ledger.corrupt_stored_byte(h, offset, mask);
    }
    // The same on a copy of the block log.
    auto copy = lines;
    auto offset = static_cast<std::size_t>(rng() % len);
    copy[h][offset] = static_cast<char>(copy[h][offset] ^ 0x20);
    auto file = dir / "flipped.log";
    {
      std::ofstream out(file, std::ios::trunc);
      for (const auto& l : copy) out << l << '\n';
    }
    auto at = verify_block_log(file);
    if (at && *at == h) ++disk_exact;
  }
  ok = ok && !ledger.verify_chain() && exact == flips && disk_exact == lines.size();
  d << lines.size() << "-block ledger: " << exact << "/" << flips << " in-memory flips and " << disk_exact << "/"
    << lines.size() << " block-log flips located at the flipped height";
  std::filesystem::remove_all(dir);
  return ok;
}

}  // namespace

int main() {
  std::cout << "acceptance: seed " << kSeed << ", scenarios from " << kScenarioDir.string() << std::endl;
  std::map<std::string, Run> runs;
  try {
    for (const char* name : {"setup1", "setup2", "tamper", "crash", "restart", "rtt", "heartbeat"})
      runs[name] = run(name);
  } catch (const std::exception& e) {
    std::cout << "scenario run aborted: " << e.what() << std::endl;
    return 1;
  }

  {
    const auto& r = runs["setup1"];
    std::ostringstream d;
    bool ok = require(r.report, {"zero_loss", "no_duplicates", "order", "backlog_within:2"}, d) && r.report.passed();
    ok = ok && r.seconds <= 30.0 && r.report.counts.sampled > 0;
    d << r.report.counts.sampled << " readings, " << r.report.counts.committed << " reports committed, "
      << find(r.report, "backlog_within:2")->detail << ", runtime " << secs(r.seconds);
    verdict(1, ok, "partition resilience, outages of 2/15/60 min over 2 h", d.str());
  }
  {
    const auto& r = runs["setup2"];
    std::ostringstream d;
    bool ok = require(r.report, {"mote_multiset", "mote_signatures"}, d) && r.report.passed() && r.seconds <= 30.0;
    d << find(r.report, "mote_multiset")->detail << "; " << find(r.report, "mote_signatures")->detail << ", runtime "
      << secs(r.seconds);
    verdict(2, ok, "Mote recovery over the short-range link", d.str());
  }
  {
    const auto& r = runs["tamper"];
    std::ostringstream d;
    bool ok = require(r.report, {"tamper_rejected"}, d) && r.report.counts.rejected == 100 &&
              r.report.counts.committed == 0;
    d << find(r.report, "tamper_rejected")->detail;
    verdict(3, ok, "tamper completeness", d.str());
  }
  criterion_4();
  {
    const auto& r = runs["crash"];
    std::ostringstream d;
    bool ok = require(r.report, {"kill_points_hit", "exactly_once", "world_state_replay"}, d) && r.report.passed();
    d << find(r.report, "kill_points_hit")->detail << "; " << find(r.report, "exactly_once")->detail << "; "
      << find(r.report, "world_state_replay")->detail;
    verdict(5, ok, "crash safety", d.str());
  }
  {
    const auto& r = runs["restart"];
    std::ostringstream d;
    bool ok = require(r.report, {"resume_monitoring"}, d) && r.report.passed();
    for (const auto& x : r.report.details.at("restarts")) {
      bool same_job = !x.at("job_before").is_null() && x.at("job_before") == x.at("job_after");
      ok = ok && same_job && x.at("state_before") == "Monitoring" && x.at("state_after") == "Monitoring";
      d << "restart at " << x.at("at_ms").get<std::int64_t>() / 60'000 << " min: "
        << x.at("state_before").get<std::string>() << " -> " << x.at("state_after").get<std::string>()
        << (same_job ? ", job identical; " : ", job differs; ");
    }
    verdict(6, ok, "state persistence across a kill and restart", d.str());
  }
  {
    const auto& r = runs["rtt"];
    std::ostringstream d;
    bool ok = require(r.report, {"rtt_exact"}, d);
    std::cout << latency_table(r.report.latency);
    for (auto [link, ms] : std::vector<std::pair<std::string, long>>{{"wifi", 148}, {"ble:mote-1", 46}}) {
      RttProbeSpec p;
      p.probe = link;
      p.link = link;
      p.n = 40;
      p.latency = Duration{ms};
      auto s = run_rtt_probe(p, kSeed, false, 0.0);
      bool exact = s.completed == 40 && s.avg_ms == static_cast<double>(ms) && s.min_ms == ms && s.max_ms == ms;
      ok = ok && exact;
      d << link << " injected " << ms << " ms -> avg " << s.avg_ms << " min " << s.min_ms << " max " << s.max_ms
        << " over " << s.completed << "; ";
    }
    verdict(7, ok, "RTT methodology, n=40", d.str());
  }
  {
    const auto& r = runs["heartbeat"];
    std::ostringstream d;
    bool ok = require(r.report, {"heartbeat_liveness", "heartbeats_min:118", "silent_after_off", "final_idle"}, d);
    d << find(r.report, "heartbeats_min:118")->detail << "; " << find(r.report, "heartbeat_liveness")->detail << "; "
      << find(r.report, "silent_after_off")->detail << "; " << find(r.report, "final_idle")->detail;
    verdict(8, ok, "heartbeat liveness over 1 h", d.str());
  }
  {
    std::ostringstream d;
    bool ok = true;
    for (auto& [name, first] : runs) {
      auto again = run(name);
      bool same = again.report.to_canonical_json() == first.report.to_canonical_json();
      ok = ok && same;
      d << name << (same ? " identical" : " DIFFERS") << "; ";
    }
    verdict(9, ok, "same seed gives byte-identical ScenarioReports", d.str());
  }
  {
    std::ostringstream d;
    bool ok = true;
    for (auto& [name, r] : runs) {
      const auto* a = find(r.report, "chain_intact");
      ok = ok && a && a->pass;
      d << name << ": " << (a ? a->detail : "not evaluated") << "; ";
    }
    ok = chain_flip_check(d) && ok;
    verdict(10, ok, "chain integrity", d.str());
  }

  std::cout << (failures == 0 ? "acceptance: all 10 criteria PASS" : "acceptance: FAILURES") << std::endl;
  return failures == 0 ? 0 : 1;
}
