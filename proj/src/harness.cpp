#include "ambox/harness.hpp"

#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <mutex>
#include <random>
#include <set>
#include <sstream>

#include "ambox/config_store.hpp"
#include "ambox/error.hpp"
#include "ambox/fs_util.hpp"
#include "ambox/ledger.hpp"
#include "ambox/mote_agent.hpp"
#include "ambox/node_agent.hpp"
#include "ambox/sim_network.hpp"

namespace ambox {

using json = nlohmann::json;

const KeyPair& harness_key(const std::string& device_id, std::uint64_t seed) {
  static std::mutex mu;
  static std::map<std::pair<std::string, std::uint64_t>, KeyPair> cache;
  std::lock_guard lock(mu);
  auto key = std::make_pair(device_id, seed);
  auto it = cache.find(key);
  if (it == cache.end()) it = cache.emplace(key, KeyPair::derive(device_id, "harness-" + std::to_string(seed))).first;
  return it->second;
}

// --- DirectDeviceControl -------------------------------------------------------------------

template <class F>
auto DirectDeviceControl::guarded(F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const Error& e) {
    if (e.code() == ErrorCode::IllegalState) throw Error(ErrorCode::DeviceIllegalState, e.what());
    throw;
  }
}

json DirectDeviceControl::status() {
  return guarded([&] { return node_().status(); });
}
void DirectDeviceControl::init() {
  guarded([&] { node_().init(); });
}
void DirectDeviceControl::config_heartbeat(const std::string& ipaddr, std::uint16_t port, Duration timeout) {
  guarded([&] { node_().config_heartbeat(ipaddr, port, timeout); });
}
void DirectDeviceControl::config_blockchain(const std::string& ipaddr, std::uint16_t port, const std::string& channel,
                                            const std::string& chaincode) {
  guarded([&] { node_().config_blockchain(ipaddr, port, channel, chaincode); });
}
void DirectDeviceControl::start_monitoring(const MonitoringJob& job) {
  guarded([&] { node_().start_monitoring(job); });
}
void DirectDeviceControl::stop_monitoring() {
  guarded([&] { node_().stop_monitoring(); });
}
void DirectDeviceControl::turn_off() {
  guarded([&] { node_().turn_off(); });
}

// --- tamper ----------------------------------------------------------------------------------

std::string mutate_report_payload(std::string& payload, std::uint64_t rng_seed) {
  std::mt19937_64 rng(rng_seed);
  auto report = parse_report(payload);
  static const char* fields[] = {"value", "product_id", "batch_no", "created_at", "device_id", "report_id"};
  std::string field = fields[rng() % std::size(fields)];
  if (field == "value") {
    auto& r = report.readings[rng() % report.readings.size()];
    double delta = 0.01 * static_cast<double>(1 + rng() % 500);
    r.value += (rng() % 2 == 0) ? delta : -delta;
  } else if (field == "product_id") {
    report.product_id += static_cast<char>('a' + rng() % 26);
  } else if (field == "batch_no") {
    report.batch_no += static_cast<char>('0' + rng() % 10);
  } else if (field == "created_at") {
    report.created_at += Duration{1 + static_cast<std::int64_t>(rng() % 1000)};
  } else if (field == "device_id") {
    report.device_id += "x";
  } else {
    report.report_id += "x";
  }
  payload = canonicalize(report);
  return field;
}

namespace {

std::uint64_t mix_seed(std::uint64_t seed, const std::string& tag) {
  auto raw = sha256_raw(std::to_string(seed) + "|" + tag);
  std::uint64_t out = 0;
  for (int i = 0; i < 8; ++i) out = (out << 8) | static_cast<unsigned char>(raw[static_cast<std::size_t>(i)]);
  return out;
}

SensorSpec node_spec(const std::string& quantity) {
  if (quantity == "temperature") return SensorSpec::node_temperature();
  if (quantity == "humidity") return SensorSpec::node_humidity();
  if (quantity == "pressure") return SensorSpec::node_pressure();
  throw Error(ErrorCode::ScenarioInvalid, "node has no '" + quantity + "' sensor");
}

SensorSpec mote_spec(const std::string& quantity) {
  if (quantity == "temperature") return SensorSpec::mote_temperature();
  if (quantity == "humidity") return SensorSpec::mote_humidity();
  throw Error(ErrorCode::ScenarioInvalid, "mote has no '" + quantity + "' sensor");
}

std::filesystem::path fresh_work_dir(const std::string& name, std::uint64_t seed) {
  static std::atomic<std::uint64_t> counter{0};
  auto dir = std::filesystem::temp_directory_path() /
             ("ambox-" + name + "-" + std::to_string(seed) + "-" + std::to_string(::getpid()) + "-" +
              std::to_string(counter++));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

struct KillPoint {
  std::string point;
  std::uint32_t countdown = 1;
};

struct CommitInfo {
  EventReport report;
  std::uint64_t height = 0;
  Timestamp committed_at{};
  bool relayed_attestations_ok = true;
};

class World {
 public:
  World(const Scenario& sc, const RunOptions& opt) : sc_(sc), opt_(opt), log_(opt.log ? *opt.log : Logger::null()) {
    double scale = opt.time_scale.value_or(sc.time_scale);
    loop_ = std::make_unique<EventLoop>(opt.real_time ? EventLoop::Mode::Wall : EventLoop::Mode::Virtual, sc.start,
                                        scale);
    if (opt.log) opt.log->set_clock(opt.real_time ? "wall" : "virtual", [l = loop_.get()] { return l->now(); });
    keep_dir_ = opt.work_dir.has_value();
    dir_ = keep_dir_ ? *opt.work_dir : fresh_work_dir(sc.name, opt.seed);
    std::filesystem::create_directories(dir_);

    end_ = sc.start + sc.monitoring_start + sc.span + sc.drain + sc.after_off + Duration{3'600'000};
    if (sc.trace.csv) {
      trace_ = std::make_shared<EnvironmentTrace>(EnvironmentTrace::load(*sc.trace.csv));
    } else {
      trace_ = std::make_shared<EnvironmentTrace>(EnvironmentTrace::synthetic(
          end_ - sc.start, sc.trace.step, mix_seed(opt.seed, "trace"), sc.trace.base_temperature));
    }

    net_ = std::make_unique<SimNetwork>(*loop_, sc.start, sc.faults);
    ledger_ = std::make_unique<Ledger>(Ledger::Options{dir_ / "ledger", false}, [l = loop_.get()] { return l->now(); });
    net_->serve(ledger_ep_, sc.wide_area_link, [this](const std::string& body) {
      return handle_ledger_request(*ledger_, body);
    });
    net_->serve(operator_ep_, sc.wide_area_link, [this](const std::string& body) {
      try {
        bool fresh = fleet_.ingest_json(body, loop_->now());
        if (fresh && node_off_) ++heartbeats_after_off_;
        return canonical_json(json{{"status", "ok"}, {"accepted", fresh}});
      } catch (const Error& e) {
        return canonical_json(json{{"status", "error"}, {"error", std::string(to_string(e.code()))}});
      }
    });

    for (const auto& m : sc.motes) build_mote(m);

    node_opts_.device_id = sc.node.id;
    node_opts_.data_dir = dir_ / "node";
    node_opts_.sync = false;
    for (const auto& m : motes_) node_opts_.motes.push_back(m->identity());
    if (sc.crash) plan_kills();
    build_node();
  }

  ~World() {
    node_.reset();
    motes_.clear();
    ledger_.reset();
    net_.reset();
    if (!keep_dir_) {
      std::error_code ec;
      std::filesystem::remove_all(dir_, ec);
    }
  }

  ScenarioReport run();

 private:
  // --- construction ---------------------------------------------------------------------------

  void build_mote(const DeviceSpec& spec) {
    std::vector<std::unique_ptr<SensorDriver>> sensors;
    for (const auto& q : spec.sensors) {
      auto s = std::make_unique<SimulatedSensor>(mote_spec(q), trace_, sc_.start, mix_seed(opt_.seed, spec.id + "|" + q));
      for (const auto& f : spec.faults)
        if (f.quantity == q) s->add_fault(f.fault);
      sensors.push_back(std::move(s));
    }
    MoteOptions mo;
    mo.device_id = spec.id;
    mo.address = "sim:" + spec.id;
    mo.paired_node = sc_.node.id;
    mo.data_dir = dir_ / spec.id;
    mo.sync = false;
    auto mote = std::make_unique<MoteAgent>(mo, *loop_, *net_, harness_key(spec.id, opt_.seed), std::move(sensors), log_);
    auto id = spec.id;
    mote->on_sample([this, id](const SensorReading& r) { mote_sampled_[id].push_back(r); });
    motes_.push_back(std::move(mote));
  }

  void build_node() {
    std::vector<std::unique_ptr<SensorDriver>> sensors;
    for (const auto& q : sc_.node.sensors) {
      auto spec = node_spec(q);
      if (q == "temperature") spec.bias = sc_.node.bias;
      auto activity = [this] { return node_ && node_->state() == NodeState::Monitoring ? 1.0 : 0.0; };
      auto s = std::make_unique<SimulatedSensor>(spec, trace_, sc_.start, mix_seed(opt_.seed, sc_.node.id + "|" + q),
                                                 activity);
      for (const auto& f : sc_.node.faults)
        if (f.quantity == q) s->add_fault(f.fault);
      sensors.push_back(std::move(s));
    }
    CrashHook hook;
    if (sc_.crash) hook = [this](const char* point) { maybe_crash(point); };
    node_ = std::make_unique<NodeAgent>(node_opts_, *loop_, *net_, net_.get(), harness_key(sc_.node.id, opt_.seed),
                                        std::move(sensors), log_, hook);
    node_->on_reading([this](const SensorReading& r) {
      if (r.source_device == sc_.node.id) node_sampled_.push_back(r);
    });
  }

  void retire_node() {
    if (!node_) return;
    const auto& c = node_->counters();
    retired_.sampled += c.sampled;
    retired_.reports += c.reports;
    retired_.relayed += c.relayed;
    retired_.relay_duplicates += c.relay_duplicates;
    retired_.relay_rejected += c.relay_rejected;
    retired_.committed += c.committed;
    retired_.replayed += c.replayed;
    retired_.rejected += c.rejected;
    retired_.submit_failures += c.submit_failures;
    retired_.heartbeats_sent += c.heartbeats_sent;
    retired_.heartbeat_failures += c.heartbeat_failures;
    retired_.sensor_failures += c.sensor_failures;
    retired_.out_of_range += c.out_of_range;
    retired_.batches += c.batches;
    retired_.storage_full += c.storage_full;
    retired_.threshold_exceeded += c.threshold_exceeded;
    node_.reset();
  }

  NodeCounters total_counters() const {
    auto t = retired_;
    if (node_) {
      const auto& c = node_->counters();
      t.sampled += c.sampled;
      t.reports += c.reports;
      t.relayed += c.relayed;
      t.relay_duplicates += c.relay_duplicates;
      t.relay_rejected += c.relay_rejected;
      t.committed += c.committed;
      t.replayed += c.replayed;
      t.rejected += c.rejected;
      t.submit_failures += c.submit_failures;
      t.heartbeats_sent += c.heartbeats_sent;
      t.heartbeat_failures += c.heartbeat_failures;
      t.sensor_failures += c.sensor_failures;
      t.out_of_range += c.out_of_range;
      t.batches += c.batches;
      t.storage_full += c.storage_full;
      t.threshold_exceeded += c.threshold_exceeded;
    }
    return t;
  }

  // --- crash injection --------------------------------------------------------------------------

  void plan_kills() {
    std::mt19937_64 rng(mix_seed(opt_.seed, "kills"));
    const auto& c = *sc_.crash;
    for (std::size_t i = 0; i < c.kill_points; ++i) {
      KillPoint k;
      k.point = c.points[rng() % c.points.size()];
      k.countdown = 1 + static_cast<std::uint32_t>(rng() % c.max_countdown);
      kills_.push_back(k);
    }
  }

  void maybe_crash(const char* point) {
    if (!armed_ || next_kill_ >= kills_.size()) return;
    auto& k = kills_[next_kill_];
    if (k.point != point) return;
    if (--k.countdown > 0) return;
    ++next_kill_;
    throw SimulatedCrash{point};
  }

  void on_crash(const SimulatedCrash& c) {
    ++crashes_by_point_[c.point];
    // The enqueue point fires after the report reached the buffer but
    // before the node counted it.
    if (c.point == "enqueue") ++reports_lost_to_crash_;
    retire_node();
    build_node();
  }

  void advance_to(Timestamp t) {
    for (;;) {
      try {
        loop_->run_until(t);
        return;
      } catch (const SimulatedCrash& c) {
        on_crash(c);
      }
    }
  }

  // --- scripted actions -------------------------------------------------------------------------

  void restart_node() {
    auto before = node_->config().device;
    retire_node();
    build_node();
    auto after = node_->config().device;
    restarts_.push_back({{"at_ms", (loop_->now() - sc_.start).count()},
                         {"state_before", to_string(before.state)},
                         {"state_after", to_string(after.state)},
                         {"job_before", before.job ? json(*before.job) : json()},
                         {"job_after", after.job ? json(*after.job) : json()},
                         {"identical", before == after}});
  }

  void tamper(const TamperSpec& t) {
    retire_node();
    std::vector<EntryId> targets;
    {
      DurableBuffer probe({node_opts_.data_dir, "buffer", node_opts_.buffer_capacity, false});
      if (t.count > 0 && !probe.empty())
        for (const auto& e : probe.peek_batch(t.count)) targets.push_back(e.id);
    }
    std::set<EntryId> wanted(targets.begin(), targets.end());
    auto path = node_opts_.data_dir / "buffer.journal";
    std::istringstream in(read_file(path));
    std::string line, out;
    bool header = true;
    std::map<std::string, int> fields;
    while (std::getline(in, line)) {
      if (!header) {
        auto j = json::parse(line);
        auto id = j.at("id").get<EntryId>();
        if (wanted.count(id)) {
          auto env = j.at("record").get<SignedEnvelope>();
          tampered_ids_.insert(parse_report(env.payload).report_id);
          ++fields[mutate_report_payload(env.payload, mix_seed(opt_.seed, "tamper|" + std::to_string(id)))];
          j["record"] = env;
          line = j.dump();
          ++tampered_;
        }
      }
      header = false;
      out += line + "\n";
    }
    write_file_atomic(path, out, false);
    tamper_fields_ = fields;
    build_node();
  }

  void device_start() { node_->start_monitoring(sc_.job); }

  void check_liveness() {
    if (!commissioned_ || node_off_) return;
    auto e = fleet_.entry(sc_.node.id, loop_->now());
    ++liveness_checks_;
    if (e && e->missed_deadline) ++missed_checks_;
    liveness_timer_ = loop_->schedule_after(Duration{1'000}, [this] { check_liveness(); });
  }

  // --- evaluation -------------------------------------------------------------------------------

  std::map<std::string, CommitInfo> commits() const;
  std::vector<AssertionResult> evaluate(ScenarioReport& report);

  const Scenario& sc_;
  RunOptions opt_;
  Logger& log_;
  std::unique_ptr<EventLoop> loop_;
  std::filesystem::path dir_;
  bool keep_dir_ = false;
  Timestamp end_{};
  std::shared_ptr<EnvironmentTrace> trace_;
  std::unique_ptr<SimNetwork> net_;
  std::unique_ptr<Ledger> ledger_;
  FleetView fleet_;
  Endpoint ledger_ep_{"ledger.sim", 7051, {}};
  Endpoint operator_ep_{"operator.sim", 8080, "/heartbeat"};

  NodeOptions node_opts_;
  std::unique_ptr<NodeAgent> node_;
  std::vector<std::unique_ptr<MoteAgent>> motes_;
  NodeCounters retired_;

  std::vector<SensorReading> node_sampled_;
  std::map<std::string, std::vector<SensorReading>> mote_sampled_;

  std::vector<KillPoint> kills_;
  std::size_t next_kill_ = 0;
  bool armed_ = false;
  std::map<std::string, std::uint64_t> crashes_by_point_;
  std::uint64_t reports_lost_to_crash_ = 0;

  json restarts_ = json::array();
  std::set<std::string> tampered_ids_;
  std::size_t tampered_ = 0;
  std::map<std::string, int> tamper_fields_;

  bool commissioned_ = false;
  bool node_off_ = false;
  std::uint64_t heartbeats_after_off_ = 0;
  std::uint64_t heartbeats_at_off_ = 0;
  std::uint64_t sent_at_off_ = 0;
  std::uint64_t liveness_checks_ = 0;
  std::uint64_t missed_checks_ = 0;
  std::optional<TimerId> liveness_timer_;
  json lifecycle_ = json::object();
  bool drained_ = false;
};

std::map<std::string, CommitInfo> World::commits() const {
  std::map<std::string, CommitInfo> out;
  for (const auto& b : ledger_->blocks(0, std::numeric_limits<std::size_t>::max())) {
    for (const auto& tx : b.transactions) {
      CommitInfo c;
      c.report = parse_report(tx.payload);
      c.height = b.height;
      c.committed_at = b.committed_at;
      out[c.report.report_id] = c;
    }
  }
  return out;
}

ScenarioReport World::run() {
  const auto t0 = sc_.start;
  DirectDeviceControl device([this]() -> NodeAgent& { return *node_; });
  LedgerAdmin admin([this](const std::string& req) { return handle_ledger_request(*ledger_, req); });

  CommissionPlan plan;
  plan.heartbeat_ip = operator_ep_.host;
  plan.heartbeat_port = operator_ep_.port;
  plan.heartbeat_timeout = sc_.heartbeat_timeout;
  plan.ledger_ip = ledger_ep_.host;
  plan.ledger_port = ledger_ep_.port;
  auto outcome = commission(device, admin, plan);
  commissioned_ = true;
  lifecycle_["commission"] = {{"newly_registered", outcome.newly_registered},
                              {"initialized", outcome.initialized},
                              {"state", to_string(outcome.final_state)}};
  check_liveness();

  // Scripted actions are scheduled before any agent timer for the same
  // instant, so they run first.
  auto stop_at = t0 + sc_.monitoring_start + sc_.span;
  if (sc_.mode == Scenario::Mode::Monitoring) {
    loop_->schedule_at(t0 + sc_.monitoring_start, [this] {
      device_start();
      armed_ = sc_.crash.has_value();
    });
    for (auto r : sc_.restarts) loop_->schedule_at(t0 + r, [this] { restart_node(); });
    if (sc_.tamper) loop_->schedule_at(t0 + sc_.tamper->at, [this] { tamper(*sc_.tamper); });
    loop_->schedule_at(stop_at, [this] {
      armed_ = false;
      node_->stop_monitoring();
    });
  }
  advance_to(stop_at);

  if (sc_.mode == Scenario::Mode::Monitoring) {
    auto out = decommission(device, admin, sc_.drain, [this](Duration d) { advance_to(loop_->now() + d); },
                            Duration{60'000});
    drained_ = out.drained;
    lifecycle_["decommission"] = {{"drained", out.drained},
                                  {"stopped_monitoring", out.stopped_monitoring},
                                  {"latest_report_id", out.latest_report_id ? json(*out.latest_report_id) : json()},
                                  {"waited_ms", out.waited.count()}};
  }

  auto fe = fleet_.entry(sc_.node.id, loop_->now());
  heartbeats_at_off_ = fe ? fe->heartbeats : 0;
  if (sc_.turn_off) {
    try {
      device.turn_off();
      node_off_ = true;
      sent_at_off_ = total_counters().heartbeats_sent;
      lifecycle_["turn_off"] = "ok";
    } catch (const Error& e) {
      lifecycle_["turn_off"] = std::string(to_string(e.code()));
    }
  }
  if (liveness_timer_) loop_->cancel(*liveness_timer_);
  advance_to(loop_->now() + sc_.after_off);

  ScenarioReport report;
  report.scenario = sc_.name;
  report.seed = opt_.seed;
  report.message_log_digest = net_->message_log_digest();
  report.messages = net_->messages_logged();
  for (const auto& p : sc_.rtt)
    report.latency.push_back(run_rtt_probe(p, opt_.seed, opt_.real_time, opt_.time_scale.value_or(sc_.time_scale)));
  report.assertions = evaluate(report);
  return report;
}

std::vector<AssertionResult> World::evaluate(ScenarioReport& report) {
  const auto t0 = sc_.start;
  const auto& node_id = sc_.node.id;
  auto all = commits();
  auto order = ledger_->commit_order();

  std::map<std::string, int> tx_per_report;
  for (const auto& b : ledger_->blocks(0, std::numeric_limits<std::size_t>::max()))
    for (const auto& tx : b.transactions) ++tx_per_report[parse_report(tx.payload).report_id];

  std::map<std::string, int> ledger_readings;  // canonical reading -> count
  std::map<std::string, int> ledger_keys;
  std::vector<SensorReading> on_ledger;
  std::uint64_t node_events = 0;
  for (const auto& id : order) {
    const auto& c = all.at(id);
    if (c.report.device_id == node_id) ++node_events;
    for (const auto& r : c.report.readings) {
      ++ledger_readings[canonicalize_reading(r)];
      ++ledger_keys[reading_key(r)];
      on_ledger.push_back(r);
    }
  }

  auto& counts = report.counts;
  counts.sampled = node_sampled_.size();
  for (const auto& [id, v] : mote_sampled_) counts.sampled += v.size();
  auto totals = total_counters();
  counts.reports = totals.reports + reports_lost_to_crash_;
  counts.buffered = node_->buffer_depth();
  counts.committed = node_events;
  counts.rejected = node_->rejected_journal().size();
  for (const auto& [k, n] : ledger_keys)
    if (n > 1) counts.duplicated += static_cast<std::uint64_t>(n - 1);

  std::vector<JournalRecord> rejected_records;
  if (!node_->rejected_journal().empty())
    rejected_records = node_->rejected_journal().peek_batch(node_->rejected_journal().size());
  std::uint64_t signature_invalid = 0;
  for (const auto& r : rejected_records)
    if (r.record.value("reason", std::string()) == "signature-invalid") ++signature_invalid;

  auto fe = fleet_.entry(node_id, loop_->now());
  auto ledger_dir = dir_ / "ledger";

  std::vector<AssertionResult> results;
  for (const auto& spec : sc_.assertions) {
    auto colon = spec.find(':');
    std::string name = spec.substr(0, colon);
    std::string arg = colon == std::string::npos ? "" : spec.substr(colon + 1);
    AssertionResult a;
    a.name = spec;
    std::ostringstream d;

    if (name == "zero_loss") {
      auto remaining = ledger_readings;
      std::uint64_t missing = 0;
      auto check = [&](const SensorReading& r) {
        auto it = remaining.find(canonicalize_reading(r));
        if (it == remaining.end() || it->second == 0) ++missing;
        else --it->second;
      };
      for (const auto& r : node_sampled_) check(r);
      for (const auto& [id, v] : mote_sampled_)
        for (const auto& r : v) check(r);
      a.pass = missing == 0 && counts.sampled > 0;
      d << counts.sampled << " sampled, " << missing << " missing from the ledger";
    } else if (name == "no_duplicates") {
      std::uint64_t dup_tx = 0;
      for (const auto& [id, n] : tx_per_report)
        if (n > 1) dup_tx += static_cast<std::uint64_t>(n - 1);
      a.pass = counts.duplicated == 0 && dup_tx == 0;
      d << counts.duplicated << " duplicate readings, " << dup_tx << " duplicate reports";
    } else if (name == "order") {
      std::uint64_t inversions = 0;
      std::map<std::string, Timestamp> last;
      for (const auto& id : order) {
        const auto& r = all.at(id).report;
        auto it = last.find(r.device_id);
        if (it != last.end() && r.created_at < it->second) ++inversions;
        last[r.device_id] = r.created_at;
      }
      a.pass = inversions == 0;
      d << inversions << " created_at inversions in commit order";
    } else if (name == "backlog_within") {
      long k = arg.empty() ? 2 : std::stol(arg);
      auto bound = k * sc_.job.report_interval;
      std::uint64_t late = 0, checked = 0, windows = 0;
      for (const auto& w : sc_.faults.windows_for(sc_.wide_area_link)) {
        if (w.mode != FaultMode::Down) continue;
        auto restored = t0 + w.end;
        if (restored >= loop_->now()) continue;
        ++windows;
        for (const auto& [id, c] : all) {
          if (c.report.device_id != node_id || c.report.created_at >= restored) continue;
          if (c.report.created_at < t0 + w.start) continue;
          ++checked;
          if (c.committed_at > restored + bound) ++late;
        }
        // reports created during the outage that never reached the ledger
        if (node_->buffer_depth() > 0)
          for (const auto& e : node_->buffer().peek_batch(node_->buffer_depth()))
            if (e.enqueued_at < restored) ++late;
      }
      a.pass = late == 0 && windows > 0;
      d << checked << " outage reports over " << windows << " restorations, " << late << " committed later than "
        << bound.count() / 1000 << " s after restoration";
    } else if (name == "conservation") {
      a.pass = counts.reports == counts.committed + counts.rejected + counts.buffered;
      d << counts.reports << " reports = " << counts.committed << " committed + " << counts.rejected << " rejected + "
        << counts.buffered << " buffered";
    } else if (name == "samples_complete") {
      auto since = t0 + sc_.monitoring_start;
      auto stop = since + sc_.span;
      std::vector<Timestamp> expected;
      for (auto t = since; t < stop; t += sc_.job.sample_interval) expected.push_back(t);
      std::uint64_t bad = 0;
      for (const auto& q : sc_.node.sensors) {
        bool faulty = false;
        for (const auto& f : sc_.node.faults) faulty = faulty || f.quantity == q;
        if (faulty) continue;
        std::vector<Timestamp> got;
        for (const auto& r : on_ledger)
          if (r.source_device == node_id && r.quantity.name() == q) got.push_back(r.sampled_at);
        std::sort(got.begin(), got.end());
        if (got != expected) ++bad;
        d << q << "=" << got.size() << " ";
      }
      a.pass = bad == 0;
      d << "expected " << expected.size() << " per sensor";
    } else if (name == "mote_multiset") {
      bool ok = !sc_.motes.empty();
      for (const auto& m : sc_.motes) {
        std::vector<std::string> sampled, relayed;
        for (const auto& r : mote_sampled_[m.id]) sampled.push_back(canonicalize_reading(r));
        for (const auto& r : on_ledger)
          if (r.source_device == m.id) relayed.push_back(canonicalize_reading(r));
        std::sort(sampled.begin(), sampled.end());
        std::sort(relayed.begin(), relayed.end());
        ok = ok && sampled == relayed && !sampled.empty();
        d << m.id << ": " << sampled.size() << " sampled, " << relayed.size() << " on ledger ";
      }
      a.pass = ok;
    } else if (name == "mote_signatures") {
      std::uint64_t total = 0, valid = 0;
      for (const auto& m : sc_.motes) {
        const auto& pk = harness_key(m.id, opt_.seed).public_key();
        for (const auto& r : on_ledger) {
          if (r.source_device != m.id) continue;
          ++total;
          if (r.attestation && verify_attestation(pk, r)) ++valid;
        }
      }
      a.pass = total > 0 && valid == total;
      d << valid << "/" << total << " Mote attestations verify";
    } else if (name == "tamper_rejected") {
      std::uint64_t leaked = 0;
      for (const auto& id : tampered_ids_)
        if (all.count(id)) ++leaked;
      std::size_t wanted = sc_.tamper ? sc_.tamper->count : 0;
      a.pass = tampered_ == wanted && signature_invalid == tampered_ && counts.rejected == tampered_ && leaked == 0 &&
               counts.committed + tampered_ == counts.reports;
      d << tampered_ << " mutated, " << signature_invalid << " rejected signature-invalid, " << leaked
        << " mutated reports committed, " << counts.committed << " committed";
    } else if (name == "exactly_once") {
      std::uint64_t bad = 0;
      for (const auto& [id, n] : tx_per_report)
        if (n != 1) ++bad;
      a.pass = bad == 0 && ledger_->event_count() == tx_per_report.size();
      d << tx_per_report.size() << " distinct report_ids, " << bad << " with more than one entry";
    } else if (name == "world_state_replay") {
      auto live = ledger_->world_state_json();
      bool replay_ok = Ledger::replay_world_state(ledger_->stored_lines()) == live;
      bool reopen_ok = false;
      try {
        Ledger reopened(Ledger::Options{ledger_dir, false}, [this] { return loop_->now(); });
        reopen_ok = reopened.world_state_json() == live;
      } catch (const Error&) {
      }
      a.pass = replay_ok && reopen_ok;
      d << "replay " << (replay_ok ? "identical" : "differs") << ", reopened log "
        << (reopen_ok ? "identical" : "differs");
    } else if (name == "chain_intact") {
      auto live = ledger_->verify_chain();
      auto disk = verify_block_log(ledger_dir / "blocks.log");
      a.pass = !live && !disk;
      d << "height " << ledger_->height();
      if (live) d << ", live chain broken at " << *live;
      if (disk) d << ", block log broken at " << *disk;
    } else if (name == "kill_points_hit") {
      a.pass = !kills_.empty() && next_kill_ == kills_.size();
      d << next_kill_ << "/" << kills_.size() << " kill points fired";
    } else if (name == "resume_monitoring") {
      bool ok = !restarts_.empty();
      for (const auto& r : restarts_)
        ok = ok && r["identical"].get<bool>() && r["state_after"] == "Monitoring";
      a.pass = ok;
      d << restarts_.size() << " restarts";
    } else if (name == "heartbeat_liveness") {
      bool ok = fe && fe->late_arrivals == 0 && fe->max_gap <= sc_.heartbeat_timeout && missed_checks_ == 0;
      a.pass = ok;
      d << missed_checks_ << "/" << liveness_checks_ << " checks saw a missed deadline";
      if (fe) d << ", max gap " << fe->max_gap.count() << " ms";
    } else if (name == "heartbeats_min") {
      std::uint64_t n = arg.empty() ? 1 : std::stoull(arg);
      a.pass = heartbeats_at_off_ >= n;
      d << heartbeats_at_off_ << " heartbeats received";
    } else if (name == "silent_after_off") {
      a.pass = node_off_ && heartbeats_after_off_ == 0 && totals.heartbeats_sent == sent_at_off_;
      d << heartbeats_after_off_ << " heartbeats after turnOff";
    } else if (name == "final_idle") {
      auto persisted = load_config(node_opts_.data_dir / "config.json");
      a.pass = node_->state() == NodeState::Idle && persisted.device.state == NodeState::Idle;
      d << "state " << to_string(node_->state()) << ", persisted " << to_string(persisted.device.state);
    } else if (name == "rtt_exact") {
      bool ok = !report.latency.empty();
      for (std::size_t i = 0; i < report.latency.size() && i < sc_.rtt.size(); ++i) {
        const auto& s = report.latency[i];
        const auto& p = sc_.rtt[i];
        if (p.down) {
          ok = ok && s.aborted && s.completed < s.requested;
          continue;
        }
        auto lat = static_cast<double>(p.latency.count());
        if (opt_.real_time) {
          double tol = std::max(10.0, 0.25 * lat);
          ok = ok && s.completed == p.n && std::abs(s.avg_ms - lat) <= tol;
        } else {
          ok = ok && s.completed == p.n && s.avg_ms == lat && s.min_ms == p.latency.count() &&
               s.max_ms == p.latency.count();
        }
      }
      a.pass = ok;
      d << report.latency.size() << " probes";
    } else if (name == "never_restored") {
      a.pass = counts.committed == 0 && counts.reports > 0 && counts.buffered == counts.reports;
      d << counts.buffered << "/" << counts.reports << " reports still buffered";
    } else if (name == "bias_positive") {
      double sum = 0;
      std::uint64_t n = 0;
      for (const auto& r : on_ledger) {
        if (r.source_device != node_id || r.quantity.kind != QuantityKind::Temperature) continue;
        sum += r.value - trace_->value(Quantity::temperature(), r.sampled_at - t0);
        ++n;
      }
      double mean = n ? sum / static_cast<double>(n) : 0.0;
      a.pass = n > 0 && mean > 0;
      char buf[64];
      std::snprintf(buf, sizeof buf, "%.3f", mean);
      d << "mean(node temperature - truth) = " << buf << " over " << n << " readings";
    } else if (name == "drained") {
      a.pass = drained_;
      d << "buffer " << counts.buffered;
    }
    a.detail = d.str();
    results.push_back(std::move(a));
  }

  json motes = json::object();
  for (const auto& m : motes_) {
    const auto& c = m->counters();
    motes[m->identity().device_id] = {{"sampled", c.sampled},       {"sensor_failures", c.sensor_failures},
                                      {"out_of_range", c.out_of_range}, {"notified", c.notified},
                                      {"acked", c.acked},           {"backlog", m->backlog()}};
  }
  auto lines = ledger_->stored_lines();
  json crashes = json::object();
  for (const auto& [p, n] : crashes_by_point_) crashes[p] = n;
  report.details = {{"node", to_json_value(totals)},
                    {"node_state", to_string(node_->state())},
                    {"mote_sessions", node_->mote_sessions()},
                    {"motes", motes},
                    {"fleet", fe ? to_json_value(*fe) : json()},
                    {"ledger",
                     {{"height", ledger_->height()},
                      {"events", ledger_->event_count()},
                      {"tip_hash", lines.empty() ? "" : json::parse(lines.back()).at("hash").get<std::string>()}}},
                    {"lifecycle", lifecycle_},
                    {"restarts", restarts_},
                    {"crashes", {{"planned", kills_.size()}, {"fired", next_kill_}, {"by_point", crashes}}},
                    {"tamper", {{"mutated", tampered_}, {"fields", tamper_fields_}, {"signature_invalid", signature_invalid}}},
                    {"heartbeats",
                     {{"received_before_off", heartbeats_at_off_},
                      {"received_after_off", heartbeats_after_off_},
                      {"liveness_checks", liveness_checks_},
                      {"missed_checks", missed_checks_}}}};
  return results;
}

}  // namespace

ScenarioReport run_scenario(const Scenario& scenario, const RunOptions& options) {
  World world(scenario, options);
  return world.run();
}

LatencyStats run_rtt_probe(const RttProbeSpec& spec, std::uint64_t seed, bool real_time, double time_scale) {
  (void)seed;  // the probe has no random inputs
  auto start = from_millis(kDefaultEpochMillis);
  EventLoop loop(real_time ? EventLoop::Mode::Wall : EventLoop::Mode::Virtual, start, real_time ? 1.0 : time_scale);
  auto window = static_cast<std::int64_t>(spec.n) * (2 * spec.latency + Duration{10'000}) + Duration{3'600'000};
  std::vector<FaultWindow> windows;
  if (spec.down) windows.push_back({spec.link, Duration{0}, window, FaultMode::Down, Duration{0}});
  else if (spec.latency > Duration::zero())
    windows.push_back({spec.link, Duration{0}, window, FaultMode::AddedLatency, spec.latency});
  SimNetwork net(loop, start, FaultSchedule(windows));
  Ledger ledger(Ledger::Options{std::nullopt, false}, [&loop] { return loop.now(); });
  SimNetwork::Handler handler;
  if (spec.link.rfind("ble:", 0) == 0) handler = [](const std::string& body) { return body; };
  else handler = [&ledger](const std::string& body) { return handle_ledger_request(ledger, body); };
  auto channel = net.channel_on(spec.link, handler);
  return rtt_benchmark(loop, *channel, spec.n, 2 * spec.latency + Duration{5'000}, spec.probe);
}

}  // namespace ambox
