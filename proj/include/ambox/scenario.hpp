#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ambox/domain.hpp"
#include "ambox/sensors.hpp"
#include "ambox/transport.hpp"

namespace ambox {

struct SensorFaultSpec {
  std::string quantity;
  SensorFault fault;

  bool operator==(const SensorFaultSpec&) const = default;
};

struct DeviceSpec {
  std::string id;
  std::vector<std::string> sensors;  // quantity names
  BiasModel bias;                    // Node temperature only
  std::vector<SensorFaultSpec> faults;

  bool operator==(const DeviceSpec&) const = default;
};

struct TraceSpec {
  std::optional<std::filesystem::path> csv;
  Duration step{60'000};
  double base_temperature = 6.0;

  bool operator==(const TraceSpec&) const = default;
};

struct RttProbeSpec {
  std::string probe;
  std::string link;
  std::size_t n = 40;
  Duration latency{0};
  bool down = false;  // link Down for the whole probe

  bool operator==(const RttProbeSpec&) const = default;
};

struct TamperSpec {
  Duration at{0};       // offset at which the buffer is edited
  std::size_t count = 0;  // entries to mutate, oldest first

  bool operator==(const TamperSpec&) const = default;
};

struct CrashSpec {
  std::size_t kill_points = 0;
  std::vector<std::string> points{"enqueue", "sign", "submit", "ack"};
  std::uint32_t max_countdown = 3;

  bool operator==(const CrashSpec&) const = default;
};

/// A declarative experiment. All durations are on the scenario clock.
struct Scenario {
  std::string name;
  double time_scale = 50.0 / 60'000.0;  // real seconds per virtual second
  Timestamp start = from_millis(kDefaultEpochMillis);

  enum class Mode { Monitoring, Heartbeat };
  Mode mode = Mode::Monitoring;

  Duration monitoring_start{0};
  Duration span{3'600'000};      // monitoring (or heartbeat-only) window
  Duration drain{1'800'000};     // after stopMonitoring, before decommission gives up
  Duration after_off{600'000};   // observed after turnOff
  bool turn_off = true;

  std::string wide_area_link = "wifi";
  Duration heartbeat_timeout{30'000};
  DeviceSpec node;
  std::vector<DeviceSpec> motes;
  FaultSchedule faults;
  MonitoringJob job;
  TraceSpec trace;

  std::vector<RttProbeSpec> rtt;
  std::optional<TamperSpec> tamper;
  std::optional<CrashSpec> crash;
  std::vector<Duration> restarts;  // kill-and-restart the Node at these offsets

  std::vector<std::string> assertions;

  /// Throws Error(ScenarioInvalid). Relative CSV paths resolve against
  /// `base_dir`.
  static Scenario from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
  static Scenario load(const std::filesystem::path& path);
  nlohmann::json to_json() const;
};

/// Names accepted in Scenario::assertions. An entry may carry one
/// argument after a colon ("heartbeats_min:118").
const std::vector<std::string>& known_assertions();

struct AssertionResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

struct ScenarioCounts {
  std::uint64_t sampled = 0;     // readings taken by every device
  std::uint64_t reports = 0;     // reports the Node signed and buffered
  std::uint64_t buffered = 0;    // reports still in the Node buffer at the end
  std::uint64_t committed = 0;   // ledger events for the Node
  std::uint64_t rejected = 0;    // reports refused by the ledger
  std::uint64_t duplicated = 0;  // readings present more than once on the ledger
};

/// Everything a run produces. Contains no wall-clock data, so two runs
/// with the same seed serialize to identical bytes.
struct ScenarioReport {
  std::string scenario;
  std::uint64_t seed = 0;
  std::vector<AssertionResult> assertions;
  std::string message_log_digest;
  std::uint64_t messages = 0;
  ScenarioCounts counts;
  std::vector<LatencyStats> latency;
  nlohmann::json details = nlohmann::json::object();

  bool passed() const;
  nlohmann::json to_json() const;
  std::string to_canonical_json() const;
  /// Human-readable: counts, assertion lines and the latency table.
  std::string summary() const;
};

/// Average / Min / Max table in the layout of a latency results table.
std::string latency_table(const std::vector<LatencyStats>& stats);

}  // namespace ambox
