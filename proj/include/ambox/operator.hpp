#pragma once

#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ambox/domain.hpp"

namespace ambox {

struct FleetEntry {
  std::string device_id;
  Timestamp last_heartbeat_at{};  // operator receive time
  NodeState reported_state = NodeState::Idle;
  bool healthy = true;
  bool alarm = false;
  Duration timeout{30'000};
  std::uint64_t last_sequence = 0;
  std::uint64_t heartbeats = 0;
  Duration max_gap{0};          // longest receive-to-receive gap seen
  std::uint64_t late_arrivals = 0;  // gaps longer than the timeout
  bool missed_deadline = false;  // as of the view's `now`

  bool operator==(const FleetEntry&) const = default;
};

nlohmann::json to_json_value(const FleetEntry& e);

/// Liveness view built from heartbeats. A pure function of the ingested
/// (received_at, message) log and the query time.
class FleetView {
 public:
  FleetView() = default;
  FleetView(const FleetView& o) {
    std::lock_guard lock(o.mu_);
    entries_ = o.entries_;
    log_ = o.log_;
  }
  FleetView& operator=(const FleetView&) = delete;

  /// False when the heartbeat is stale (sequence <= last seen) and ignored.
  bool ingest(const HeartbeatMessage& h, Timestamp received_at);
  /// Throws Error(MalformedMessage).
  bool ingest_json(const std::string& body, Timestamp received_at);

  std::vector<FleetEntry> view(Timestamp now) const;
  std::optional<FleetEntry> entry(const std::string& device_id, Timestamp now) const;

  struct LogItem {
    Timestamp received_at;
    HeartbeatMessage message;
  };
  std::vector<LogItem> log() const {
    std::lock_guard lock(mu_);
    return log_;
  }
  static FleetView rebuild(const std::vector<LogItem>& log);

 private:
  mutable std::mutex mu_;
  std::map<std::string, FleetEntry> entries_;
  std::vector<LogItem> log_;
};

// --- control plane ------------------------------------------------------------------

/// Operator-side handle on one device's control API. Every call throws
/// Error(DeviceUnreachable) when the device cannot be reached, or the
/// device's own error (IllegalState, InvalidArgument, ...).
class DeviceControl {
 public:
  virtual ~DeviceControl() = default;
  virtual nlohmann::json status() = 0;
  virtual void init() = 0;
  virtual void config_heartbeat(const std::string& ipaddr, std::uint16_t port, Duration timeout) = 0;
  virtual void config_blockchain(const std::string& ipaddr, std::uint16_t port, const std::string& channel,
                                 const std::string& chaincode) = 0;
  virtual void start_monitoring(const MonitoringJob& job) = 0;
  virtual void stop_monitoring() = 0;
  virtual void turn_off() = 0;
};

/// Ledger calls the operator makes. `call` sends one protocol request and
/// returns the response body; it throws Error(LedgerUnreachable).
class LedgerAdmin {
 public:
  using Call = std::function<std::string(const std::string& request)>;
  explicit LedgerAdmin(Call call) : call_(std::move(call)) {}

  enum class Registration { Registered, AlreadyRegisteredSameKey };
  /// Throws Error(AlreadyRegistered) when a different key is on file.
  Registration register_device(const DeviceIdentity& identity);
  std::vector<EventReport> recent(const std::string& device_id, std::size_t limit);
  nlohmann::json blocks(std::uint64_t from, std::size_t limit);
  nlohmann::json verify_chain();

 private:
  nlohmann::json request(const nlohmann::json& req);
  Call call_;
};

struct CommissionPlan {
  std::string heartbeat_ip;
  std::uint16_t heartbeat_port = 0;
  Duration heartbeat_timeout{30'000};
  std::string ledger_ip;
  std::uint16_t ledger_port = 0;
  std::string channel = "ambox";
  std::string chaincode = "events";
};

struct CommissionOutcome {
  std::string device_id;
  bool newly_registered = false;
  bool initialized = false;  // false when the device was already in Heartbeat
  NodeState final_state = NodeState::Idle;
};

/// status -> register key -> configHeartbeat -> configBlockchain -> init.
/// The key goes first so a ledger outage leaves the device untouched.
/// Throws Error(DeviceUnreachable | DeviceIllegalState | LedgerUnreachable).
CommissionOutcome commission(DeviceControl& device, LedgerAdmin& ledger, const CommissionPlan& plan);

struct DecommissionOutcome {
  bool stopped_monitoring = false;
  bool drained = false;
  std::optional<std::string> latest_report_id;
  Duration waited{0};
};

/// Stops monitoring if needed, then polls until the device reports an empty
/// buffer and the ledger shows its latest report, or `timeout` elapses.
/// `sleep` advances time (real sleep, or the harness clock).
DecommissionOutcome decommission(DeviceControl& device, LedgerAdmin& ledger, Duration timeout,
                                 const std::function<void(Duration)>& sleep, Duration poll = Duration{1'000});

}  // namespace ambox
