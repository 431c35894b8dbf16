#include "ambox/net_tcp.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <map>
#include <set>

#include <json.hpp>

#include "ambox/error.hpp"
#include "ambox/fs_util.hpp"
#include "ambox/http_api.hpp"

namespace ambox {

using json = nlohmann::json;
using SteadyClock = std::chrono::steady_clock;

namespace {

struct AddrInfo {
  addrinfo* list = nullptr;
  ~AddrInfo() {
    if (list) freeaddrinfo(list);
  }
};

void resolve(AddrInfo& out, const std::string& host, std::uint16_t port, bool passive) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  if (passive) hints.ai_flags = AI_PASSIVE;
  auto service = std::to_string(port);
  const char* node = host.empty() || (passive && host == "0.0.0.0") ? nullptr : host.c_str();
  int rc = getaddrinfo(node, service.c_str(), &hints, &out.list);
  if (rc != 0) throw Error(ErrorCode::InvalidArgument, "cannot resolve '" + host + "': " + gai_strerror(rc));
}

int remaining_ms(SteadyClock::time_point deadline) {
  auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - SteadyClock::now()).count();
  return left < 0 ? 0 : static_cast<int>(std::min<long long>(left, 1 << 30));
}

void read_exact(int fd, char* buf, std::size_t n, SteadyClock::time_point deadline) {
  std::size_t got = 0;
  while (got < n) {
    pollfd p{fd, POLLIN, 0};
    int rc = ::poll(&p, 1, remaining_ms(deadline));
    if (rc < 0) {
      if (errno == EINTR) continue;
      throw Error(ErrorCode::LinkDown, std::string("poll: ") + std::strerror(errno));
    }
    if (rc == 0) throw Error(ErrorCode::Timeout, "read timed out");
    auto r = ::recv(fd, buf + got, n - got, 0);
    if (r == 0) throw Error(ErrorCode::LinkDown, "connection closed by peer");
    if (r < 0) {
      if (errno == EINTR || errno == EAGAIN) continue;
      throw Error(ErrorCode::LinkDown, std::string("recv: ") + std::strerror(errno));
    }
    got += static_cast<std::size_t>(r);
  }
}

constexpr Duration kForever{24LL * 3600 * 1000};

}  // namespace

int listen_tcp(const std::string& host, std::uint16_t port) {
  AddrInfo ai;
  resolve(ai, host, port, true);
  int fd = ::socket(ai.list->ai_family, SOCK_STREAM | SOCK_CLOEXEC, 0);
  if (fd < 0) throw Error(ErrorCode::IoFailure, std::string("socket: ") + std::strerror(errno));
  int one = 1;
  ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  if (::bind(fd, ai.list->ai_addr, ai.list->ai_addrlen) != 0) {
    int err = errno;
    ::close(fd);
    if (err == EADDRINUSE)
      throw Error(ErrorCode::PortInUse, "port " + std::to_string(port) + " is already in use");
    throw Error(ErrorCode::IoFailure, std::string("bind: ") + std::strerror(err));
  }
  if (::listen(fd, 64) != 0) {
    int err = errno;
    ::close(fd);
    throw Error(ErrorCode::IoFailure, std::string("listen: ") + std::strerror(err));
  }
  return fd;
}

std::uint16_t local_port(int fd) {
  sockaddr_in addr{};
  socklen_t len = sizeof addr;
  if (::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len) != 0) return 0;
  return ntohs(addr.sin_port);
}

int connect_tcp(const std::string& host, std::uint16_t port, Duration timeout) {
  AddrInfo ai;
  resolve(ai, host, port, false);
  int fd = ::socket(ai.list->ai_family, SOCK_STREAM | SOCK_CLOEXEC | SOCK_NONBLOCK, 0);
  if (fd < 0) throw Error(ErrorCode::IoFailure, std::string("socket: ") + std::strerror(errno));
  auto fail = [&](ErrorCode code, const std::string& what) {
    ::close(fd);
    throw Error(code, host + ":" + std::to_string(port) + ": " + what);
  };
  if (::connect(fd, ai.list->ai_addr, ai.list->ai_addrlen) != 0) {
    if (errno == ECONNREFUSED) fail(ErrorCode::ConnectionRefused, "connection refused");
    if (errno != EINPROGRESS) fail(ErrorCode::LinkDown, std::strerror(errno));
    pollfd p{fd, POLLOUT, 0};
    int rc = 0;
    do {
      rc = ::poll(&p, 1, static_cast<int>(timeout.count()));
    } while (rc < 0 && errno == EINTR);
    if (rc == 0) fail(ErrorCode::Timeout, "connect timed out");
    int err = 0;
    socklen_t len = sizeof err;
    ::getsockopt(fd, SOL_SOCKET, SO_ERROR, &err, &len);
    if (err == ECONNREFUSED) fail(ErrorCode::ConnectionRefused, "connection refused");
    if (err != 0) fail(ErrorCode::LinkDown, std::strerror(err));
  }
  int flags = ::fcntl(fd, F_GETFL);
  ::fcntl(fd, F_SETFL, flags & ~O_NONBLOCK);
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  return fd;
}

std::string read_frame(int fd, Duration timeout) {
  auto deadline = SteadyClock::now() + timeout;
  char header[4];
  read_exact(fd, header, 4, deadline);
  std::uint32_t n = 0;
  for (char c : header) n = (n << 8) | static_cast<unsigned char>(c);
  if (n > (64u << 20)) throw Error(ErrorCode::MalformedMessage, "frame of " + std::to_string(n) + " bytes");
  std::string body(n, '\0');
  if (n > 0) read_exact(fd, body.data(), n, deadline);
  return body;
}

void write_frame(int fd, std::string_view body) {
  try {
    write_all(fd, encode_frame(body));
  } catch (const Error& e) {
    throw Error(ErrorCode::LinkDown, e.what());
  }
}

std::string framed_call(const Endpoint& ep, const std::string& body, Duration timeout) {
  auto start = SteadyClock::now();
  int fd = connect_tcp(ep.host, ep.port, timeout);
  try {
    write_frame(fd, body);
    auto left = timeout - std::chrono::duration_cast<Duration>(SteadyClock::now() - start);
    auto reply = read_frame(fd, std::max(left, Duration{1}));
    ::close(fd);
    return reply;
  } catch (...) {
    ::close(fd);
    throw;
  }
}

// --- TcpFramedServer -----------------------------------------------------------------------

TcpFramedServer::TcpFramedServer(const std::string& host, std::uint16_t port, Handler handler)
    : handler_(std::move(handler)) {
  listen_fd_ = listen_tcp(host, port);
  port_ = local_port(listen_fd_);
  acceptor_ = std::thread([this] { accept_loop(); });
}

TcpFramedServer::~TcpFramedServer() { stop(); }

void TcpFramedServer::stop() {
  if (stopping_.exchange(true)) return;
  if (acceptor_.joinable()) acceptor_.join();
  std::vector<std::thread> workers;
  {
    std::lock_guard lock(mu_);
    for (int fd : conns_) ::shutdown(fd, SHUT_RDWR);
    workers.swap(workers_);
  }
  for (auto& t : workers) t.join();
  ::close(listen_fd_);
}

void TcpFramedServer::accept_loop() {
  while (!stopping_) {
    pollfd p{listen_fd_, POLLIN, 0};
    int rc = ::poll(&p, 1, 100);
    if (rc <= 0) continue;
    int fd = ::accept4(listen_fd_, nullptr, nullptr, SOCK_CLOEXEC);
    if (fd < 0) continue;
    std::lock_guard lock(mu_);
    conns_.push_back(fd);
    workers_.emplace_back([this, fd] { serve(fd); });
  }
}

void TcpFramedServer::serve(int fd) {
  try {
    while (!stopping_) {
      auto body = read_frame(fd, kForever);
      write_frame(fd, handler_(body));
    }
  } catch (const std::exception&) {
  }
  std::lock_guard lock(mu_);
  conns_.erase(std::remove(conns_.begin(), conns_.end(), fd), conns_.end());
  ::close(fd);
}

// --- SerialWorker ---------------------------------------------------------------------------

SerialWorker::SerialWorker() {
  thread_ = std::thread([this] {
    for (;;) {
      std::function<void()> job;
      {
        std::unique_lock lock(mu_);
        cv_.wait(lock, [&] { return stop_ || !jobs_.empty(); });
        if (jobs_.empty()) return;
        job = std::move(jobs_.front());
        jobs_.pop_front();
      }
      job();
    }
  });
}

SerialWorker::~SerialWorker() {
  {
    std::lock_guard lock(mu_);
    stop_ = true;
  }
  cv_.notify_all();
  thread_.join();
}

void SerialWorker::submit(std::function<void()> job) {
  {
    std::lock_guard lock(mu_);
    jobs_.push_back(std::move(job));
  }
  cv_.notify_all();
}

// --- RealChannelFactory --------------------------------------------------------------------

namespace {

class TcpChannel final : public RequestChannel {
 public:
  TcpChannel(Scheduler& sched, Endpoint ep) : sched_(sched), ep_(std::move(ep)) {}
  std::string describe() const override { return "tcp://" + ep_.key(); }

  void request(std::string body, Duration timeout, std::function<void(Response)> done) override {
    worker_.submit([this, body = std::move(body), timeout, done = std::move(done)]() mutable {
      Response r;
      try {
        r.body = framed_call(ep_, body, timeout);
      } catch (const Error& e) {
        auto c = e.code();
        r.error = (c == ErrorCode::ConnectionRefused || c == ErrorCode::Timeout) ? c : ErrorCode::LinkDown;
      } catch (const std::exception&) {
        r.error = ErrorCode::LinkDown;
      }
      sched_.post([done = std::move(done), r = std::move(r)] { done(r); });
    });
  }

 private:
  Scheduler& sched_;
  Endpoint ep_;
  SerialWorker worker_;
};

}  // namespace

std::unique_ptr<RequestChannel> RealChannelFactory::framed(const Endpoint& ep) {
  return std::make_unique<TcpChannel>(sched_, ep);
}

std::unique_ptr<RequestChannel> RealChannelFactory::http_post(const Endpoint& ep) {
  return make_http_post_channel(sched_, ep);
}

// --- TcpShortRange --------------------------------------------------------------------------

struct TcpShortRange::Peripheral final : PeripheralPort, std::enable_shared_from_this<Peripheral> {
  Peripheral(Scheduler& s, PeripheralIdentity id, PeripheralHandlers h)
      : sched(s), self(std::move(id)), handlers(std::move(h)) {}

  ~Peripheral() override { stop(); }

  void start() {
    auto ep = parse_endpoint(self.address);
    listen_fd = listen_tcp(ep.host, ep.port);
    std::weak_ptr<Peripheral> weak = shared_from_this();
    thread = std::thread([this, weak] { run(weak); });
  }

  void stop() {
    if (stopping.exchange(true)) return;
    {
      std::lock_guard lock(mu);
      if (conn_fd >= 0) ::shutdown(conn_fd, SHUT_RDWR);
    }
    if (thread.joinable()) thread.join();
    if (listen_fd >= 0) ::close(listen_fd);
  }

  bool connected() const override {
    std::lock_guard lock(mu);
    return conn_fd >= 0;
  }

  std::optional<std::uint64_t> notify(const std::string& characteristic, std::string payload) override {
    std::lock_guard lock(mu);
    if (conn_fd < 0 || !subscribed.count(characteristic)) return std::nullopt;
    auto seq = ++seqs[characteristic];
    try {
      write_frame(conn_fd, canonical_json(
                               json{{"type", "notify"}, {"characteristic", characteristic}, {"payload", payload}, {"sequence", seq}}));
    } catch (const Error&) {
      return std::nullopt;
    }
    return seq;
  }

  void run(std::weak_ptr<Peripheral> weak) {
    while (!stopping) {
      pollfd p{listen_fd, POLLIN, 0};
      if (::poll(&p, 1, 100) <= 0) continue;
      int fd = ::accept4(listen_fd, nullptr, nullptr, SOCK_CLOEXEC);
      if (fd < 0) continue;
      try {
        auto hello = json::parse(read_frame(fd, Duration{5'000}));
        auto central = hello.at("central").get<std::string>();
        bool busy = connected();
        bool ok = !busy && handlers.accept && handlers.accept(central);
        write_frame(fd, canonical_json(json{{"type", ok ? "welcome" : (busy ? "busy" : "denied")}}));
        if (!ok) {
          ::close(fd);
          continue;
        }
      } catch (const std::exception&) {
        ::close(fd);
        continue;
      }
      {
        std::lock_guard lock(mu);
        conn_fd = fd;
        subscribed.clear();
        seqs.clear();
      }
      try {
        while (!stopping) {
          auto msg = json::parse(read_frame(fd, kForever));
          auto type = msg.at("type").get<std::string>();
          auto characteristic = msg.at("characteristic").get<std::string>();
          if (type == "subscribe") {
            sched.post([weak, characteristic] {
              auto s = weak.lock();
              if (!s) return;
              {
                std::lock_guard lock(s->mu);
                if (s->conn_fd < 0) return;
                s->subscribed.insert(characteristic);
              }
              if (s->handlers.on_subscribe) s->handlers.on_subscribe(characteristic);
            });
          } else if (type == "write") {
            auto payload = msg.at("payload").get<std::string>();
            sched.post([weak, characteristic, payload] {
              auto s = weak.lock();
              if (s && s->handlers.on_write) s->handlers.on_write(characteristic, payload);
            });
          }
        }
      } catch (const std::exception&) {
      }
      {
        std::lock_guard lock(mu);
        conn_fd = -1;
        subscribed.clear();
      }
      ::close(fd);
      sched.post([weak] {
        auto s = weak.lock();
        if (s && s->handlers.on_disconnect) s->handlers.on_disconnect();
      });
    }
  }

  Scheduler& sched;
  PeripheralIdentity self;
  PeripheralHandlers handlers;
  int listen_fd = -1;
  std::atomic<bool> stopping{false};
  std::thread thread;
  mutable std::mutex mu;
  int conn_fd = -1;
  std::set<std::string> subscribed;
  std::map<std::string, std::uint64_t> seqs;
};

namespace {

class TcpSession final : public Session, public std::enable_shared_from_this<TcpSession> {
 public:
  TcpSession(Scheduler& sched, std::string peer_id, int fd) : sched_(sched), peer_id_(std::move(peer_id)), fd_(fd) {}

  ~TcpSession() override {
    closed_ = true;
    ::shutdown(fd_, SHUT_RDWR);
    if (reader_.joinable()) reader_.join();
    ::close(fd_);
  }

  void start() {
    std::weak_ptr<TcpSession> weak = shared_from_this();
    reader_ = std::thread([this, weak] {
      try {
        for (;;) {
          auto msg = json::parse(read_frame(fd_, kForever));
          if (msg.value("type", "") != "notify") continue;
          StreamItem item;
          item.notification.characteristic_id = msg.at("characteristic").get<std::string>();
          item.notification.payload = msg.at("payload").get<std::string>();
          item.notification.sequence = msg.at("sequence").get<std::uint64_t>();
          sched_.post([weak, item] {
            if (auto s = weak.lock()) s->deliver(item);
          });
        }
      } catch (const std::exception&) {
      }
      closed_ = true;
      sched_.post([weak] {
        if (auto s = weak.lock()) s->finish();
      });
    });
  }

  const std::string& peripheral_id() const override { return peer_id_; }
  bool open() const override { return !closed_; }

  void subscribe(const std::string& characteristic, std::function<void(const StreamItem&)> on_item) override {
    if (closed_) throw Error(ErrorCode::SessionClosed, "session closed");
    subs_[characteristic] = std::move(on_item);
    send(json{{"type", "subscribe"}, {"characteristic", characteristic}});
  }

  void write(const std::string& characteristic, std::string payload) override {
    if (closed_) throw Error(ErrorCode::SessionClosed, "session closed");
    send(json{{"type", "write"}, {"characteristic", characteristic}, {"payload", payload}});
  }

  void on_close(std::function<void()> fn) override {
    if (finished_) {
      fn();
      return;
    }
    close_callbacks_.push_back(std::move(fn));
  }

  void close() override {
    closed_ = true;
    ::shutdown(fd_, SHUT_RDWR);
  }

 private:
  void send(const json& msg) {
    std::lock_guard lock(write_mu_);
    try {
      write_frame(fd_, canonical_json(msg));
    } catch (const Error&) {
      closed_ = true;
      throw Error(ErrorCode::SessionClosed, "session closed");
    }
  }

  void deliver(const StreamItem& item) {
    if (finished_) return;
    auto it = subs_.find(item.notification.characteristic_id);
    if (it != subs_.end()) {
      auto cb = it->second;
      cb(item);
    }
  }

  void finish() {
    if (finished_) return;
    finished_ = true;
    auto subs = subs_;
    for (auto& [name, cb] : subs) {
      StreamItem end;
      end.disconnected = true;
      end.notification.characteristic_id = name;
      cb(end);
    }
    auto callbacks = std::move(close_callbacks_);
    for (auto& cb : callbacks) cb();
  }

  Scheduler& sched_;
  std::string peer_id_;
  int fd_;
  std::atomic<bool> closed_{false};
  bool finished_ = false;
  std::thread reader_;
  std::mutex write_mu_;
  std::map<std::string, std::function<void(const StreamItem&)>> subs_;
  std::vector<std::function<void()>> close_callbacks_;
};

}  // namespace

TcpShortRange::~TcpShortRange() {
  std::vector<std::shared_ptr<Peripheral>> all;
  {
    std::lock_guard lock(mu_);
    all.swap(peripherals_);
  }
  for (auto& p : all) p->stop();
}

std::shared_ptr<PeripheralPort> TcpShortRange::advertise(const PeripheralIdentity& self, PeripheralHandlers handlers) {
  auto p = std::make_shared<Peripheral>(sched_, self, std::move(handlers));
  p->start();
  std::lock_guard lock(mu_);
  peripherals_.push_back(p);
  return p;
}

void TcpShortRange::stop_advertising(const std::string& peripheral_id) {
  std::vector<std::shared_ptr<Peripheral>> doomed;
  {
    std::lock_guard lock(mu_);
    for (auto it = peripherals_.begin(); it != peripherals_.end();) {
      if ((*it)->self.device_id == peripheral_id) {
        doomed.push_back(*it);
        it = peripherals_.erase(it);
      } else {
        ++it;
      }
    }
  }
  for (auto& p : doomed) p->stop();
}

std::shared_ptr<Session> TcpShortRange::open_session(const std::string& central_id, const PeripheralIdentity& peer) {
  auto ep = parse_endpoint(peer.address);
  int fd = -1;
  try {
    fd = connect_tcp(ep.host, ep.port, Duration{2'000});
  } catch (const Error& e) {
    throw Error(ErrorCode::Unreachable, e.what());
  }
  std::string verdict;
  try {
    write_frame(fd, canonical_json(json{{"type", "hello"}, {"central", central_id}}));
    verdict = json::parse(read_frame(fd, Duration{2'000})).at("type").get<std::string>();
  } catch (const std::exception& e) {
    ::close(fd);
    throw Error(ErrorCode::Unreachable, peer.device_id + ": " + e.what());
  }
  if (verdict != "welcome") {
    ::close(fd);
    if (verdict == "busy") throw Error(ErrorCode::Unreachable, peer.device_id + " is busy");
    throw Error(ErrorCode::Unauthorized, peer.device_id + " refused pairing with " + central_id);
  }
  auto session = std::make_shared<TcpSession>(sched_, peer.device_id, fd);
  session->start();
  return session;
}

}  // namespace ambox
