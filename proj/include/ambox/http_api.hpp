#pragma once

#include <functional>
#include <memory>
#include <string>

#include <json.hpp>

#include "ambox/event_loop.hpp"
#include "ambox/operator.hpp"
#include "ambox/transport.hpp"

namespace ambox {

class NodeAgent;

/// POSTs each request body to ep.path (default "/heartbeat"); non-2xx
/// answers count as LinkDown.
std::unique_ptr<RequestChannel> make_http_post_channel(Scheduler& sched, const Endpoint& ep);

/// Wire bodies of the control API. Durations are milliseconds or strings
/// such as "30s"; "interval" is the report interval.
MonitoringJob monitoring_job_from_wire(const nlohmann::json& body);
nlohmann::json monitoring_job_to_wire(const MonitoringJob& job);

/// Node control API: POST /init, /configHeartbeat, /configBlockchain,
/// /startMonitoring, /stopMonitoring, /turnOff and GET /status. Each call
/// is executed on the node's scheduler thread.
class NodeControlServer {
 public:
  /// Throws Error(PortInUse). Port 0 picks a free port.
  NodeControlServer(NodeAgent& node, Scheduler& sched, const std::string& host, std::uint16_t port);
  ~NodeControlServer();
  NodeControlServer(const NodeControlServer&) = delete;
  NodeControlServer& operator=(const NodeControlServer&) = delete;

  std::uint16_t port() const;
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Heartbeat sink (POST /heartbeat) and fleet query (GET /fleet).
class OperatorServer {
 public:
  using Clock = std::function<Timestamp()>;
  using OnIngest = std::function<void(const std::string& body, Timestamp received_at)>;

  OperatorServer(FleetView& fleet, Clock clock, const std::string& host, std::uint16_t port, OnIngest on_ingest = {});
  ~OperatorServer();
  OperatorServer(const OperatorServer&) = delete;
  OperatorServer& operator=(const OperatorServer&) = delete;

  std::uint16_t port() const;
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// DeviceControl over HTTP. Connection failures throw
/// Error(DeviceUnreachable); API errors are rethrown with the device's code.
class HttpDeviceControl final : public DeviceControl {
 public:
  explicit HttpDeviceControl(Endpoint ep, Duration timeout = Duration{5'000});

  nlohmann::json status() override;
  void init() override;
  void config_heartbeat(const std::string& ipaddr, std::uint16_t port, Duration timeout) override;
  void config_blockchain(const std::string& ipaddr, std::uint16_t port, const std::string& channel,
                         const std::string& chaincode) override;
  void start_monitoring(const MonitoringJob& job) override;
  void stop_monitoring() override;
  void turn_off() override;

 private:
  nlohmann::json call(const std::string& method, const std::string& path, const nlohmann::json& body);

  Endpoint ep_;
  Duration timeout_;
};

}  // namespace ambox
