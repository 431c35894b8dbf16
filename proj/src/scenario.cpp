#include "ambox/scenario.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include "ambox/error.hpp"
#include "ambox/fs_util.hpp"
#include "ambox/http_api.hpp"

namespace ambox {

using json = nlohmann::json;

namespace {

Duration dur(const json& v, const std::string& what) {
  if (v.is_string()) return parse_duration(v.get<std::string>());
  if (v.is_number_integer()) return Duration{v.get<std::int64_t>()};
  throw Error(ErrorCode::ScenarioInvalid, what + ": expected a duration");
}

Duration dur_or(const json& j, const char* key, Duration fallback) {
  return j.contains(key) ? dur(j.at(key), key) : fallback;
}

// Accepts {start, end, latency} as durations or the *_ms integer form.
json normalize_window(const json& w) {
  json out = w;
  for (const char* key : {"start", "end", "latency"}) {
    if (!w.contains(key)) continue;
    out[std::string(key) + "_ms"] = dur(w.at(key), key).count();
    out.erase(key);
  }
  return out;
}

SensorFault::Kind fault_kind(const std::string& s) {
  if (s == "stall") return SensorFault::Kind::Stall;
  if (s == "fail") return SensorFault::Kind::Fail;
  if (s == "raw") return SensorFault::Kind::Raw;
  throw Error(ErrorCode::ScenarioInvalid, "unknown sensor fault '" + s + "'");
}

const char* fault_kind_name(SensorFault::Kind k) {
  switch (k) {
    case SensorFault::Kind::Stall: return "stall";
    case SensorFault::Kind::Fail: return "fail";
    case SensorFault::Kind::Raw: return "raw";
  }
  return "stall";
}

DeviceSpec device_from_json(const json& j, std::vector<std::string> default_sensors) {
  DeviceSpec d;
  d.id = j.at("id").get<std::string>();
  d.sensors = j.value("sensors", default_sensors);
  if (j.contains("bias")) {
    d.bias.constant = j.at("bias").value("constant", 0.0);
    d.bias.load_coefficient = j.at("bias").value("load_coefficient", 0.0);
  }
  for (const auto& f : j.value("faults", json::array())) {
    SensorFaultSpec s;
    s.quantity = f.at("quantity").get<std::string>();
    s.fault.kind = fault_kind(f.at("kind").get<std::string>());
    s.fault.start = dur(f.at("start"), "fault start");
    s.fault.end = dur(f.at("end"), "fault end");
    s.fault.raw_value = f.value("raw_value", 0.0);
    d.faults.push_back(s);
  }
  return d;
}

json device_to_json(const DeviceSpec& d) {
  json faults = json::array();
  for (const auto& f : d.faults)
    faults.push_back({{"quantity", f.quantity},
                      {"kind", fault_kind_name(f.fault.kind)},
                      {"start", f.fault.start.count()},
                      {"end", f.fault.end.count()},
                      {"raw_value", f.fault.raw_value}});
  return {{"id", d.id},
          {"sensors", d.sensors},
          {"bias", {{"constant", d.bias.constant}, {"load_coefficient", d.bias.load_coefficient}}},
          {"faults", faults}};
}

std::string base_name(const std::string& assertion) { return assertion.substr(0, assertion.find(':')); }

}  // namespace

const std::vector<std::string>& known_assertions() {
  static const std::vector<std::string> names = {
      "zero_loss",        "no_duplicates",   "order",           "backlog_within",  "conservation",
      "samples_complete", "mote_multiset",   "mote_signatures", "tamper_rejected", "exactly_once",
      "world_state_replay", "chain_intact",  "kill_points_hit", "resume_monitoring", "heartbeat_liveness",
      "heartbeats_min",   "silent_after_off", "final_idle",     "rtt_exact",       "never_restored",
      "bias_positive",    "drained"};
  return names;
}

Scenario Scenario::from_json(const json& j, const std::filesystem::path& base_dir) {
  Scenario s;
  try {
    s.name = j.at("name").get<std::string>();
    s.time_scale = j.value("time_scale", s.time_scale);
    if (j.contains("start")) s.start = parse_rfc3339(j.at("start").get<std::string>());
    auto mode = j.value("mode", std::string("monitoring"));
    if (mode == "monitoring") s.mode = Mode::Monitoring;
    else if (mode == "heartbeat") s.mode = Mode::Heartbeat;
    else throw Error(ErrorCode::ScenarioInvalid, "unknown mode '" + mode + "'");
    s.monitoring_start = dur_or(j, "monitoring_start", s.monitoring_start);
    s.span = dur_or(j, "span", s.span);
    s.drain = dur_or(j, "drain", s.drain);
    s.after_off = dur_or(j, "after_off", s.after_off);
    s.turn_off = j.value("turn_off", true);
    s.wide_area_link = j.value("wide_area_link", s.wide_area_link);
    s.heartbeat_timeout = dur_or(j, "heartbeat_timeout", s.heartbeat_timeout);

    const auto& topo = j.at("topology");
    s.node = device_from_json(topo.at("node"), {"temperature", "humidity", "pressure"});
    for (const auto& m : topo.value("motes", json::array())) s.motes.push_back(device_from_json(m, {"temperature", "humidity"}));

    json windows = json::array();
    for (const auto& w : j.value("fault_schedule", json::array())) windows.push_back(normalize_window(w));
    s.faults = FaultSchedule::from_json(windows);

    if (j.contains("job")) s.job = monitoring_job_from_wire(j.at("job"));
    else if (s.mode == Mode::Monitoring) throw Error(ErrorCode::ScenarioInvalid, "monitoring scenario needs a job");

    if (j.contains("trace")) {
      const auto& t = j.at("trace");
      if (t.contains("csv")) {
        std::filesystem::path p = t.at("csv").get<std::string>();
        s.trace.csv = p.is_absolute() ? p : base_dir / p;
      }
      s.trace.step = dur_or(t, "step", s.trace.step);
      s.trace.base_temperature = t.value("base_temperature", s.trace.base_temperature);
    }

    for (const auto& r : j.value("rtt", json::array())) {
      RttProbeSpec p;
      p.probe = r.at("probe").get<std::string>();
      p.link = r.at("link").get<std::string>();
      p.n = r.value("n", std::size_t{40});
      p.latency = dur_or(r, "latency", Duration{0});
      p.down = r.value("down", false);
      if (p.n == 0) throw Error(ErrorCode::ScenarioInvalid, "rtt probe needs n >= 1");
      s.rtt.push_back(p);
    }
    if (j.contains("tamper")) {
      TamperSpec t;
      t.at = dur(j.at("tamper").at("at"), "tamper.at");
      t.count = j.at("tamper").at("count").get<std::size_t>();
      s.tamper = t;
    }
    if (j.contains("crash")) {
      CrashSpec c;
      c.kill_points = j.at("crash").at("kill_points").get<std::size_t>();
      c.points = j.at("crash").value("points", c.points);
      c.max_countdown = j.at("crash").value("max_countdown", c.max_countdown);
      for (const auto& p : c.points)
        if (p != "enqueue" && p != "sign" && p != "submit" && p != "ack")
          throw Error(ErrorCode::ScenarioInvalid, "unknown crash point '" + p + "'");
      if (c.max_countdown == 0) throw Error(ErrorCode::ScenarioInvalid, "crash.max_countdown must be >= 1");
      s.crash = c;
    }
    for (const auto& r : j.value("restarts", json::array())) s.restarts.push_back(dur(r, "restart"));
    s.assertions = j.value("assertions", std::vector<std::string>{});
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ScenarioInvalid, std::string("scenario: ") + e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::ScenarioInvalid) throw;
    throw Error(ErrorCode::ScenarioInvalid, e.what());
  }

  if (s.name.empty()) throw Error(ErrorCode::ScenarioInvalid, "scenario needs a name");
  if (s.span <= Duration::zero()) throw Error(ErrorCode::ScenarioInvalid, "span must be positive");
  if (s.time_scale < 0) throw Error(ErrorCode::ScenarioInvalid, "time_scale must be >= 0");
  if (s.heartbeat_timeout < Duration{3}) throw Error(ErrorCode::ScenarioInvalid, "heartbeat_timeout too small");
  for (const auto& a : s.assertions) {
    const auto& names = known_assertions();
    if (std::find(names.begin(), names.end(), base_name(a)) == names.end())
      throw Error(ErrorCode::ScenarioInvalid, "unknown assertion '" + a + "'");
  }
  return s;
}

Scenario Scenario::load(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const Error& e) {
    throw Error(ErrorCode::ScenarioInvalid, e.what());
  }
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ScenarioInvalid, path.string() + ": " + e.what());
  }
  return from_json(j, path.parent_path());
}

json Scenario::to_json() const {
  json j = {{"name", name},
            {"time_scale", time_scale},
            {"start", format_rfc3339(start)},
            {"mode", mode == Mode::Monitoring ? "monitoring" : "heartbeat"},
            {"monitoring_start", monitoring_start.count()},
            {"span", span.count()},
            {"drain", drain.count()},
            {"after_off", after_off.count()},
            {"turn_off", turn_off},
            {"wide_area_link", wide_area_link},
            {"heartbeat_timeout", heartbeat_timeout.count()},
            {"fault_schedule", faults.to_json()},
            {"job", monitoring_job_to_wire(job)},
            {"assertions", assertions}};
  json motes_json = json::array();
  for (const auto& m : motes) motes_json.push_back(device_to_json(m));
  j["topology"] = {{"node", device_to_json(node)}, {"motes", motes_json}};
  json t = {{"step", trace.step.count()}, {"base_temperature", trace.base_temperature}};
  if (trace.csv) t["csv"] = trace.csv->string();
  j["trace"] = t;
  json rtt_json = json::array();
  for (const auto& r : rtt)
    rtt_json.push_back({{"probe", r.probe}, {"link", r.link}, {"n", r.n}, {"latency", r.latency.count()}, {"down", r.down}});
  j["rtt"] = rtt_json;
  if (tamper) j["tamper"] = {{"at", tamper->at.count()}, {"count", tamper->count}};
  if (crash)
    j["crash"] = {{"kill_points", crash->kill_points}, {"points", crash->points}, {"max_countdown", crash->max_countdown}};
  json r = json::array();
  for (auto d : restarts) r.push_back(d.count());
  j["restarts"] = r;
  return j;
}

// --- report ------------------------------------------------------------------------------

bool ScenarioReport::passed() const {
  for (const auto& a : assertions)
    if (!a.pass) return false;
  return true;
}

json ScenarioReport::to_json() const {
  json a = json::array();
  for (const auto& r : assertions) a.push_back({{"name", r.name}, {"pass", r.pass}, {"detail", r.detail}});
  json lat = json::array();
  for (const auto& s : latency) lat.push_back(to_json_value(s));
  return {{"scenario", scenario},
          {"seed", seed},
          {"passed", passed()},
          {"assertions", a},
          {"message_log_digest", message_log_digest},
          {"messages", messages},
          {"counts",
           {{"sampled", counts.sampled},
            {"reports", counts.reports},
            {"buffered", counts.buffered},
            {"committed", counts.committed},
            {"rejected", counts.rejected},
            {"duplicated", counts.duplicated}}},
          {"latency", lat},
          {"details", details}};
}

std::string ScenarioReport::to_canonical_json() const { return canonical_json(to_json()); }

std::string latency_table(const std::vector<LatencyStats>& stats) {
  std::ostringstream out;
  char line[160];
  std::snprintf(line, sizeof line, "%-24s %14s %10s %10s %s\n", "Probe", "Average (ms)", "Min (ms)", "Max (ms)", "Samples");
  out << line;
  for (const auto& s : stats) {
    std::snprintf(line, sizeof line, "%-24s %14.2f %10lld %10lld %zu/%zu%s\n", s.probe.c_str(), s.avg_ms,
                  static_cast<long long>(s.min_ms), static_cast<long long>(s.max_ms), s.completed, s.requested,
                  s.aborted ? " (aborted)" : "");
    out << line;
  }
  return out.str();
}

std::string ScenarioReport::summary() const {
  std::ostringstream out;
  out << "scenario " << scenario << " seed " << seed << ": " << (passed() ? "PASS" : "FAIL") << "\n";
  out << "  sampled=" << counts.sampled << " reports=" << counts.reports << " buffered=" << counts.buffered
      << " committed=" << counts.committed << " rejected=" << counts.rejected << " duplicated=" << counts.duplicated
      << "\n";
  out << "  message log digest " << message_log_digest << " (" << messages << " events)\n";
  for (const auto& a : assertions)
    out << "  " << (a.pass ? "PASS " : "FAIL ") << a.name << (a.detail.empty() ? "" : "  " + a.detail) << "\n";
  if (!latency.empty()) out << latency_table(latency);
  return out.str();
}

}  // namespace ambox
