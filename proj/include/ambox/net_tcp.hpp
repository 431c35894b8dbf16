#pragma once

#include <atomic>
#include <condition_variable>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "ambox/event_loop.hpp"
#include "ambox/transport.hpp"

namespace ambox {

// --- sockets ---------------------------------------------------------------------

/// Bound, listening socket. Throws Error(PortInUse) or Error(IoFailure).
int listen_tcp(const std::string& host, std::uint16_t port);
/// Port a listening socket is bound to (useful with port 0).
std::uint16_t local_port(int fd);
/// Throws Error(ConnectionRefused), Error(Timeout) or Error(LinkDown).
int connect_tcp(const std::string& host, std::uint16_t port, Duration timeout);
/// One framed message; throws Error(Timeout) or Error(LinkDown) (EOF included).
std::string read_frame(int fd, Duration timeout);
void write_frame(int fd, std::string_view body);

/// Connect, send one frame, read one frame, close.
std::string framed_call(const Endpoint& ep, const std::string& body, Duration timeout);

/// Accepts connections and answers each framed request with handler(body).
/// Handlers run on connection threads, so they must be thread-safe.
class TcpFramedServer {
 public:
  using Handler = std::function<std::string(const std::string&)>;
  TcpFramedServer(const std::string& host, std::uint16_t port, Handler handler);
  ~TcpFramedServer();
  TcpFramedServer(const TcpFramedServer&) = delete;
  TcpFramedServer& operator=(const TcpFramedServer&) = delete;

  std::uint16_t port() const { return port_; }
  void stop();

 private:
  void accept_loop();
  void serve(int fd);

  Handler handler_;
  int listen_fd_ = -1;
  std::uint16_t port_ = 0;
  std::atomic<bool> stopping_{false};
  std::thread acceptor_;
  std::mutex mu_;
  std::vector<std::thread> workers_;
  std::vector<int> conns_;
};

/// Runs jobs one at a time on a private thread.
class SerialWorker {
 public:
  SerialWorker();
  ~SerialWorker();
  SerialWorker(const SerialWorker&) = delete;
  SerialWorker& operator=(const SerialWorker&) = delete;

  void submit(std::function<void()> job);

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<std::function<void()>> jobs_;
  bool stop_ = false;
  std::thread thread_;
};

/// Real sockets: framed TCP for the ledger, HTTP POST for heartbeats.
/// Completions are posted back onto the scheduler.
class RealChannelFactory final : public ChannelFactory {
 public:
  explicit RealChannelFactory(Scheduler& sched) : sched_(sched) {}
  std::unique_ptr<RequestChannel> framed(const Endpoint& ep) override;
  std::unique_ptr<RequestChannel> http_post(const Endpoint& ep) override;

 private:
  Scheduler& sched_;
};

/// Short-range link over TCP for running a Mote as its own process. The
/// peripheral listens on its address ("host:port"); the central connects,
/// introduces itself, and the peripheral accepts or refuses the pairing.
class TcpShortRange final : public ShortRangeBackend {
 public:
  explicit TcpShortRange(Scheduler& sched) : sched_(sched) {}
  ~TcpShortRange() override;

  std::shared_ptr<PeripheralPort> advertise(const PeripheralIdentity& self, PeripheralHandlers handlers) override;
  std::shared_ptr<Session> open_session(const std::string& central_id, const PeripheralIdentity& peer) override;
  void stop_advertising(const std::string& peripheral_id) override;

  struct Peripheral;

 private:
  Scheduler& sched_;
  std::mutex mu_;
  std::vector<std::shared_ptr<Peripheral>> peripherals_;
};

}  // namespace ambox
