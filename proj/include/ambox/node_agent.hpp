#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ambox/config_store.hpp"
#include "ambox/crypto.hpp"
#include "ambox/durable_buffer.hpp"
#include "ambox/event_loop.hpp"
#include "ambox/ledger.hpp"
#include "ambox/log.hpp"
#include "ambox/sensors.hpp"
#include "ambox/transport.hpp"

namespace ambox {

/// Thrown from a crash hook to abandon the agent mid-operation; the owner
/// drops the agent and builds a new one from the same data directory.
struct SimulatedCrash {
  std::string point;
};

/// Called at "sign", "enqueue", "submit" and "ack"; may throw SimulatedCrash.
using CrashHook = std::function<void(const char* point)>;

/// Mote link characteristics.
inline constexpr const char* kReadingsCharacteristic = "readings";
inline constexpr const char* kConfigCharacteristic = "config";
inline constexpr const char* kAckCharacteristic = "ack";

struct NodeOptions {
  std::string device_id;
  std::filesystem::path data_dir;
  std::size_t buffer_capacity = 1'000'000;
  bool sync = true;
  std::size_t max_batch = 500;
  Duration retry_interval{30'000};
  Duration submit_timeout{10'000};
  Duration heartbeat_send_timeout{5'000};
  std::size_t unhealthy_after = 3;  // consecutive submission failures
  std::vector<PeripheralIdentity> motes;
  ReconnectPolicy reconnect;
};

struct NodeCounters {
  std::uint64_t sampled = 0;
  std::uint64_t out_of_range = 0;
  std::uint64_t sensor_failures = 0;
  std::uint64_t threshold_exceeded = 0;
  std::uint64_t relayed = 0;
  std::uint64_t relay_duplicates = 0;
  std::uint64_t relay_rejected = 0;  // bad attestation or foreign source
  std::uint64_t reports = 0;
  std::uint64_t batches = 0;
  std::uint64_t committed = 0;
  std::uint64_t replayed = 0;
  std::uint64_t rejected = 0;
  std::uint64_t submit_failures = 0;
  std::uint64_t heartbeats_sent = 0;
  std::uint64_t heartbeat_failures = 0;
  std::uint64_t storage_full = 0;
};

nlohmann::json to_json_value(const NodeCounters& c);

/// The AmBox Node.
///
/// Runs entirely on one Scheduler: per-sensor sampling chains, one
/// Reconnector per paired Mote, the submission loop and the heartbeat loop
/// are timer callbacks, so control operations never race with them.
///
/// On disk (data_dir): config.json, buffer.journal/.ack (signed reports),
/// readings.journal/.ack (not yet reported readings), rejected.journal/.ack
/// (envelopes the ledger refused for good).
class NodeAgent {
 public:
  NodeAgent(NodeOptions options, Scheduler& sched, ChannelFactory& channels, ShortRangeBackend* short_range,
            KeyPair key, std::vector<std::unique_ptr<SensorDriver>> sensors, Logger& log = Logger::null(),
            CrashHook crash = {});
  ~NodeAgent();
  NodeAgent(const NodeAgent&) = delete;
  NodeAgent& operator=(const NodeAgent&) = delete;

  // Control API. Each throws Error(IllegalState | InvalidArgument |
  // LedgerNotConfigured | BufferNotDrained) and leaves state untouched.
  void init();
  void config_heartbeat(const std::string& ipaddr, std::uint16_t port, Duration timeout);
  void config_blockchain(const std::string& ipaddr, std::uint16_t port, const std::string& channel_name,
                         const std::string& chaincode_name);
  void start_monitoring(const MonitoringJob& job);
  void stop_monitoring();
  void turn_off();

  /// Invoked after turnOff has persisted Idle.
  void on_power_off(std::function<void()> fn) { power_off_ = std::move(fn); }
  /// Sees every reading accepted into the readings store (own and relayed).
  void on_reading(std::function<void(const SensorReading&)> fn) { reading_observer_ = std::move(fn); }

  nlohmann::json status() const;
  const PersistedConfig& config() const { return config_; }
  NodeState state() const { return config_.device.state; }
  const NodeCounters& counters() const { return counters_; }
  std::size_t buffer_depth() const { return buffer_.size(); }
  std::size_t pending_readings() const { return readings_.size(); }
  bool healthy() const { return consecutive_failures_ < options_.unhealthy_after; }
  const KeyPair& key() const { return key_; }
  DurableBuffer& buffer() { return buffer_; }
  Journal& readings_journal() { return readings_; }
  Journal& rejected_journal() { return rejected_; }
  /// Sessions established per Mote so far.
  std::map<std::string, std::uint64_t> mote_sessions() const;
  std::map<std::string, std::uint64_t> mote_retries() const;

  /// Kicks the submission loop (no-op when idle or already in flight).
  void drain_now();

 private:
  struct MoteLink;

  void persist();
  void transition(NodeState to, std::optional<MonitoringJob> job);
  void recover();
  void resume_activities();
  void stop_activities();

  void start_heartbeats(bool send_now);
  void send_heartbeat();
  void schedule_heartbeat(Timestamp at);

  void start_sampling();
  void schedule_sample(std::size_t sensor, Timestamp at);
  void sample(std::size_t sensor, Timestamp at);
  bool accept_reading(const SensorReading& r);

  void schedule_report(Timestamp at);
  void cut_report();

  void open_ledger_channel();
  void on_submit_response(const std::vector<BufferEntry>& batch, const Response& r);
  void submit_failed(const std::vector<BufferEntry>& batch, const std::string& why);
  void schedule_retry();

  void start_motes();
  void stop_motes();
  void on_mote_session(MoteLink& link, std::shared_ptr<Session> session);
  void on_mote_item(MoteLink& link, Session& session, const StreamItem& item);
  nlohmann::json mote_config_json() const;
  void push_mote_config();

  NodeOptions options_;
  Scheduler& sched_;
  ChannelFactory& channels_;
  ShortRangeBackend* short_range_;
  KeyPair key_;
  std::vector<std::unique_ptr<SensorDriver>> sensors_;
  Logger& log_;
  CrashHook crash_;
  std::function<void()> power_off_;
  std::function<void(const SensorReading&)> reading_observer_;

  std::filesystem::path config_path_;
  PersistedConfig config_;
  DurableBuffer buffer_;
  Journal readings_;
  Journal rejected_;
  NodeCounters counters_;

  std::unique_ptr<RequestChannel> ledger_channel_;
  std::unique_ptr<RequestChannel> heartbeat_channel_;
  bool draining_ = false;
  std::size_t consecutive_failures_ = 0;
  std::optional<TimerId> retry_timer_;
  std::optional<TimerId> heartbeat_timer_;
  std::optional<Timestamp> heartbeat_due_;
  std::optional<TimerId> report_timer_;
  std::vector<std::optional<TimerId>> sample_timers_;

  std::unique_ptr<Central> central_;
  std::vector<std::unique_ptr<MoteLink>> motes_;

  Lifetime lifetime_;
};

}  // namespace ambox
