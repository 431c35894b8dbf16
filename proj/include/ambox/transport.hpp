#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "ambox/error.hpp"
#include "ambox/event_loop.hpp"
#include "ambox/time.hpp"

namespace ambox {

enum class LinkClass { WideArea, ShortRange };

// --- fault schedule ----------------------------------------------------------

enum class FaultMode { Down, AddedLatency };

struct FaultWindow {
  std::string link;
  Duration start{0};  // offset from scenario start, inclusive
  Duration end{0};    // exclusive
  FaultMode mode = FaultMode::Down;
  Duration latency{0};  // AddedLatency only

  bool operator==(const FaultWindow&) const = default;
};

/// Scripted link outages and latency injections. Windows are half-open
/// [start, end) on the scenario clock; windows on one link never overlap.
class FaultSchedule {
 public:
  FaultSchedule() = default;
  /// Throws Error(InvalidArgument) on overlapping or empty windows.
  explicit FaultSchedule(std::vector<FaultWindow> windows);

  bool is_down(const std::string& link, Duration offset) const;
  Duration latency(const std::string& link, Duration offset) const;
  std::vector<FaultWindow> windows_for(const std::string& link) const;
  const std::vector<FaultWindow>& windows() const { return windows_; }

  /// [{link, start_ms, end_ms, mode: "down"|"latency", latency_ms?}]
  static FaultSchedule from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;

 private:
  std::vector<FaultWindow> windows_;
};

// --- wide-area request/response ---------------------------------------------

struct Response {
  std::optional<ErrorCode> error;  // Timeout | LinkDown | ConnectionRefused
  std::string body;

  bool ok() const { return !error.has_value(); }
};

/// One-shot request/response to a fixed endpoint. The callback always runs
/// on the owner's scheduler thread, exactly once.
class RequestChannel {
 public:
  virtual ~RequestChannel() = default;
  virtual void request(std::string body, Duration timeout, std::function<void(Response)> done) = 0;
  virtual std::string describe() const = 0;
};

struct Endpoint {
  std::string host;
  std::uint16_t port = 0;
  std::string path;  // HTTP targets only

  std::string key() const { return host + ":" + std::to_string(port); }
};

/// Parses "host:port". Throws Error(InvalidArgument).
Endpoint parse_endpoint(const std::string& text);

/// Resolves endpoints to channels (simulated links or real sockets).
class ChannelFactory {
 public:
  virtual ~ChannelFactory() = default;
  /// Framed JSON request channel (ledger protocol).
  virtual std::unique_ptr<RequestChannel> framed(const Endpoint& ep) = 0;
  /// HTTP POST of a JSON body (heartbeats).
  virtual std::unique_ptr<RequestChannel> http_post(const Endpoint& ep) = 0;
};

// --- wide-area wire format ---------------------------------------------------

/// 4-byte big-endian length + body.
std::string encode_frame(std::string_view body);
/// Returns the body when `buffer` holds a complete frame and removes it;
/// nullopt when more bytes are needed.
std::optional<std::string> take_frame(std::string& buffer, std::size_t max_frame = 64 << 20);

// --- short-range peripheral/central ------------------------------------------

struct PeripheralIdentity {
  std::string device_id;
  std::string address;        // pre-shared address (sim: any token; tcp: host:port)
  std::string public_key;     // Mote PEM, used to check attestations; may be empty

  bool operator==(const PeripheralIdentity&) const = default;
};

struct Notification {
  std::string characteristic_id;
  std::string payload;
  std::uint64_t sequence = 0;
};

/// A stream item: a notification, or the end-of-stream marker.
struct StreamItem {
  bool disconnected = false;
  Notification notification;
};

/// Central-side view of one connection.
class Session {
 public:
  virtual ~Session() = default;
  virtual const std::string& peripheral_id() const = 0;
  virtual bool open() const = 0;
  /// Throws Error(SessionClosed).
  virtual void subscribe(const std::string& characteristic, std::function<void(const StreamItem&)> on_item) = 0;
  /// Throws Error(SessionClosed).
  virtual void write(const std::string& characteristic, std::string payload) = 0;
  /// Called once when the session ends for any reason.
  virtual void on_close(std::function<void()> fn) = 0;
  virtual void close() = 0;
};

/// Callbacks a peripheral (Mote) registers when it starts advertising.
struct PeripheralHandlers {
  std::function<bool(const std::string& central_id)> accept;  // pairing check
  std::function<void(const std::string& characteristic)> on_subscribe;
  std::function<void(const std::string& characteristic, const std::string& payload)> on_write;
  std::function<void()> on_disconnect;
};

/// Peripheral-side handle.
class PeripheralPort {
 public:
  virtual ~PeripheralPort() = default;
  virtual bool connected() const = 0;
  /// Publishes to the subscribed central; returns the sequence number
  /// assigned, or nullopt when nobody is subscribed.
  virtual std::optional<std::uint64_t> notify(const std::string& characteristic, std::string payload) = 0;
};

class ShortRangeBackend {
 public:
  virtual ~ShortRangeBackend() = default;
  virtual std::shared_ptr<PeripheralPort> advertise(const PeripheralIdentity& self, PeripheralHandlers handlers) = 0;
  /// Throws Error(Unreachable) or Error(Unauthorized).
  virtual std::shared_ptr<Session> open_session(const std::string& central_id, const PeripheralIdentity& peer) = 0;
  /// Ends advertising and any open connection of that peripheral.
  virtual void stop_advertising(const std::string& peripheral_id) = 0;
};

/// Central with an allow-list; never connects to anything outside it.
class Central {
 public:
  Central(std::string id, std::vector<PeripheralIdentity> allow_list, ShortRangeBackend& backend)
      : id_(std::move(id)), allow_(std::move(allow_list)), backend_(backend) {}

  /// Throws Error(Unauthorized) for peripherals not in the allow-list and
  /// Error(Unreachable) when the link is down or the peer is not advertising.
  std::shared_ptr<Session> connect(const PeripheralIdentity& peer);

  const std::string& id() const { return id_; }
  const std::vector<PeripheralIdentity>& allow_list() const { return allow_; }

 private:
  std::string id_;
  std::vector<PeripheralIdentity> allow_;
  ShortRangeBackend& backend_;
};

struct ReconnectPolicy {
  Duration interval{2'000};
};

/// Keeps one session to a peripheral alive: connects, and after every
/// failure or disconnect retries at a fixed interval until cancelled.
class Reconnector {
 public:
  using OnSession = std::function<void(std::shared_ptr<Session>)>;

  Reconnector(Scheduler& sched, Central& central, PeripheralIdentity peer, ReconnectPolicy policy, OnSession on_session);
  ~Reconnector();

  void cancel();
  bool cancelled() const { return cancelled_; }
  std::uint64_t attempts() const { return attempts_; }
  /// Connection attempts after the very first one.
  std::uint64_t retries() const { return attempts_ == 0 ? 0 : attempts_ - 1; }
  std::uint64_t sessions() const { return sessions_; }
  std::shared_ptr<Session> current() const { return session_; }

 private:
  void attempt();
  void schedule_retry();

  Scheduler& sched_;
  Central& central_;
  PeripheralIdentity peer_;
  ReconnectPolicy policy_;
  OnSession on_session_;
  std::shared_ptr<Session> session_;
  std::optional<TimerId> timer_;
  bool cancelled_ = false;
  std::uint64_t attempts_ = 0;
  std::uint64_t sessions_ = 0;
  Lifetime lifetime_;
};

/// Starts auto-reconnect; the handle owns the background activity.
std::unique_ptr<Reconnector> auto_reconnect(Scheduler& sched, Central& central, const PeripheralIdentity& peer,
                                            ReconnectPolicy policy, Reconnector::OnSession on_session);

// --- RTT measurement ------------------------------------------------------------

struct LatencyStats {
  std::string probe;
  std::size_t requested = 0;
  std::size_t completed = 0;
  double avg_ms = 0;
  std::int64_t min_ms = 0;
  std::int64_t max_ms = 0;
  bool aborted = false;  // link failure mid-probe; stats cover completed exchanges only

  bool operator==(const LatencyStats&) const = default;
};

nlohmann::json to_json_value(const LatencyStats& s);

/// n sequential echo exchanges; RTT is request-send to response-receive on
/// the scheduler's clock. Drives `loop` until the probe finishes.
LatencyStats rtt_benchmark(EventLoop& loop, RequestChannel& channel, std::size_t n, Duration timeout,
                           std::string probe = {});

}  // namespace ambox
