#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>

#include "ambox/crypto.hpp"
#include "ambox/event_loop.hpp"
#include "ambox/transport.hpp"

namespace ambox {

/// In-process network driven by the scenario clock.
///
/// Every link is named ("ledger", "operator", "ble:<mote-id>", ...). A link
/// is Up unless the FaultSchedule has a Down window covering the current
/// offset. Messages sent on an Up link take latency/2 each way, stay FIFO
/// per direction, and are dropped if the link is Down when they would
/// arrive. Short-range sessions are torn down at the first instant of each
/// Down window of their link.
///
/// Every send, delivery and drop is folded into a message-log digest; with
/// the same schedule and seed two runs produce the same digest.
class SimNetwork final : public ChannelFactory, public ShortRangeBackend {
 public:
  using Handler = std::function<std::string(const std::string& body)>;
  /// Returns true to drop a central->peripheral write (fault injection).
  using WriteFilter = std::function<bool(const std::string& link, const std::string& characteristic,
                                         const std::string& payload)>;

  SimNetwork(Scheduler& sched, Timestamp scenario_start, FaultSchedule schedule);
  ~SimNetwork() override;

  // wide area
  void serve(const Endpoint& ep, std::string link, Handler handler);
  void unserve(const Endpoint& ep);
  std::unique_ptr<RequestChannel> framed(const Endpoint& ep) override;
  std::unique_ptr<RequestChannel> http_post(const Endpoint& ep) override;
  /// Channel that bypasses endpoint lookup (RTT probes on any link).
  std::unique_ptr<RequestChannel> channel_on(std::string link, Handler handler);

  // short range
  static std::string short_range_link(const std::string& peripheral_id) { return "ble:" + peripheral_id; }
  std::shared_ptr<PeripheralPort> advertise(const PeripheralIdentity& self, PeripheralHandlers handlers) override;
  std::shared_ptr<Session> open_session(const std::string& central_id, const PeripheralIdentity& peer) override;
  void stop_advertising(const std::string& peripheral_id) override;
  void set_write_filter(WriteFilter filter) { write_filter_ = std::move(filter); }

  bool is_up(const std::string& link) const;
  Duration latency(const std::string& link) const;
  Duration offset() const { return sched_.now() - start_; }
  Scheduler& scheduler() { return sched_; }
  const FaultSchedule& schedule() const { return schedule_; }

  void log_message(const std::string& link, const char* event, std::string_view body);
  std::string message_log_digest() const { return digest_.hex(); }
  std::uint64_t messages_logged() const { return logged_; }
  std::uint64_t phantom_deliveries() const { return phantom_; }

  struct Connection;

 private:
  friend class SimRequestChannel;
  friend class SimSession;
  friend class SimPeripheralPort;

  struct Server {
    std::string link;
    Handler handler;
  };
  struct Advertiser {
    PeripheralIdentity identity;
    PeripheralHandlers handlers;
    std::shared_ptr<Connection> connection;
  };

  Timestamp deliver_time(Connection& c, bool to_peripheral);
  void close_link(const std::string& link);
  void close_connection(const std::shared_ptr<Connection>& c);
  void note_delivery(const std::string& link);

  Scheduler& sched_;
  Timestamp start_;
  FaultSchedule schedule_;
  std::map<std::string, Server> servers_;
  std::map<std::string, Advertiser> advertisers_;
  WriteFilter write_filter_;
  Sha256Stream digest_;
  std::uint64_t logged_ = 0;
  std::uint64_t phantom_ = 0;
  std::shared_ptr<bool> alive_ = std::make_shared<bool>(true);
};

}  // namespace ambox
