#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ambox/crypto.hpp"
#include "ambox/durable_buffer.hpp"
#include "ambox/event_loop.hpp"
#include "ambox/log.hpp"
#include "ambox/sensors.hpp"
#include "ambox/transport.hpp"

namespace ambox {

struct MoteOptions {
  std::string device_id;
  std::string address;      // what the Node's allow-list holds for us
  std::string paired_node;  // the only central we accept
  std::filesystem::path data_dir;
  std::size_t buffer_capacity = 1'000'000;
  bool sync = true;
};

/// Job subset the Node writes to the `config` characteristic.
struct MoteConfig {
  bool monitoring = false;
  Timestamp since{};
  Duration sample_interval{60'000};
  std::map<std::string, SensorParam> sensor_params;

  bool operator==(const MoteConfig&) const = default;
};

/// Throws Error(InvalidArgument).
MoteConfig mote_config_from_json(const nlohmann::json& j);
nlohmann::json mote_config_to_json(const MoteConfig& c);

struct MoteCounters {
  std::uint64_t sampled = 0;
  std::uint64_t sensor_failures = 0;
  std::uint64_t out_of_range = 0;
  std::uint64_t notified = 0;
  std::uint64_t acked = 0;
  std::uint64_t config_rejected = 0;
  std::uint64_t storage_full = 0;
};

/// The AmBox Mote: samples its own sensors, signs every reading, keeps it
/// in a durable buffer and streams the backlog to its paired Node. An entry
/// leaves the buffer only when the Node acknowledges its notification.
///
/// On disk (data_dir): mote_config.json, buffer.journal/.ack.
class MoteAgent {
 public:
  using SampleObserver = std::function<void(const SensorReading&)>;

  MoteAgent(MoteOptions options, Scheduler& sched, ShortRangeBackend& short_range, KeyPair key,
            std::vector<std::unique_ptr<SensorDriver>> sensors, Logger& log = Logger::null());
  ~MoteAgent();
  MoteAgent(const MoteAgent&) = delete;
  MoteAgent& operator=(const MoteAgent&) = delete;

  /// Applies and persists a config (normally arrives over the link).
  void apply_config(const MoteConfig& c);

  void on_sample(SampleObserver fn) { observer_ = std::move(fn); }

  const MoteConfig& config() const { return config_; }
  const MoteCounters& counters() const { return counters_; }
  std::size_t backlog() const { return buffer_.size(); }
  bool connected() const { return port_ && port_->connected(); }
  PeripheralIdentity identity() const { return {options_.device_id, options_.address, key_.public_key().pem()}; }
  DurableBuffer& buffer() { return buffer_; }

 private:
  void start_sampling();
  void stop_sampling();
  void schedule_sample(std::size_t sensor, Timestamp at);
  void sample(std::size_t sensor, Timestamp at);
  void stream_pending();
  void on_write(const std::string& characteristic, const std::string& payload);

  MoteOptions options_;
  Scheduler& sched_;
  ShortRangeBackend& short_range_;
  KeyPair key_;
  std::vector<std::unique_ptr<SensorDriver>> sensors_;
  Logger& log_;
  SampleObserver observer_;

  std::filesystem::path config_path_;
  MoteConfig config_;
  DurableBuffer buffer_;
  MoteCounters counters_;
  std::map<std::string, Timestamp> last_sampled_;  // quantity -> sampled_at

  std::shared_ptr<PeripheralPort> port_;
  bool subscribed_ = false;
  std::map<EntryId, std::uint64_t> sent_;  // entry -> notification sequence, this session
  std::vector<std::optional<TimerId>> sample_timers_;

  Lifetime lifetime_;
};

}  // namespace ambox
