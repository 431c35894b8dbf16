#include "ambox/sim_network.hpp"

#include <set>

namespace ambox {

struct SimNetwork::Connection {
  std::string link;
  std::string central_id;
  std::string peripheral_id;
  bool open = true;
  std::map<std::string, std::uint64_t> next_seq;
  std::map<std::string, std::function<void(const StreamItem&)>> subscriptions;
  std::set<std::string> peripheral_subscribed;
  std::vector<std::function<void()>> close_callbacks;
  Timestamp last_to_central{};
  Timestamp last_to_peripheral{};
};

// --- request channel -------------------------------------------------------------

class SimRequestChannel final : public RequestChannel {
 public:
  SimRequestChannel(SimNetwork& net, Endpoint ep) : net_(net), ep_(std::move(ep)) {}
  SimRequestChannel(SimNetwork& net, std::string link, SimNetwork::Handler handler)
      : net_(net), fixed_link_(std::move(link)), fixed_handler_(std::move(handler)) {}

  std::string describe() const override { return fixed_link_.empty() ? "sim://" + ep_.key() : "sim-link://" + fixed_link_; }

  void request(std::string body, Duration timeout, std::function<void(Response)> done) override {
    struct State {
      std::function<void(Response)> done;
      bool finished = false;
      std::optional<TimerId> timeout_timer;
    };
    auto st = std::make_shared<State>();
    st->done = std::move(done);
    auto& sched = net_.sched_;
    std::weak_ptr<bool> net_alive = net_.alive_;
    auto finish = [st, &sched](Response r) {
      if (st->finished) return;
      st->finished = true;
      if (st->timeout_timer) sched.cancel(*st->timeout_timer);
      st->done(std::move(r));
    };

    auto link = resolve_link();
    if (!link) {
      sched.schedule_after(Duration::zero(), [finish] { finish(Response{ErrorCode::ConnectionRefused, {}}); });
      return;
    }
    net_.log_message(*link, "send", body);
    if (!net_.is_up(*link)) {
      net_.log_message(*link, "drop", body);
      sched.schedule_after(Duration::zero(), [finish] { finish(Response{ErrorCode::LinkDown, {}}); });
      return;
    }
    Duration lat = net_.latency(*link);
    Duration up = lat / 2;
    Duration back = lat - up;
    st->timeout_timer = sched.schedule_after(timeout, [finish] { finish(Response{ErrorCode::Timeout, {}}); });

    auto* net = &net_;
    auto handler_copy = fixed_handler_;
    auto key = ep_.key();
    sched.schedule_after(up, [=, body = std::move(body)] {
      if (!Lifetime::alive(net_alive) || st->finished) return;
      if (!net->is_up(*link)) {
        net->log_message(*link, "drop", body);
        finish(Response{ErrorCode::LinkDown, {}});
        return;
      }
      SimNetwork::Handler handler = handler_copy;
      if (!handler) {
        auto it = net->servers_.find(key);
        if (it == net->servers_.end()) {
          finish(Response{ErrorCode::ConnectionRefused, {}});
          return;
        }
        handler = it->second.handler;
      }
      net->log_message(*link, "deliver", body);
      net->note_delivery(*link);
      std::string reply;
      try {
        reply = handler(body);
      } catch (const std::exception&) {
        finish(Response{ErrorCode::ConnectionRefused, {}});
        return;
      }
      net->log_message(*link, "reply", reply);
      net->sched_.schedule_after(back, [=, reply = std::move(reply)] {
        if (!Lifetime::alive(net_alive) || st->finished) return;
        if (!net->is_up(*link)) {
          net->log_message(*link, "drop", reply);
          finish(Response{ErrorCode::LinkDown, {}});
          return;
        }
        net->log_message(*link, "deliver", reply);
        net->note_delivery(*link);
        finish(Response{std::nullopt, reply});
      });
    });
  }

 private:
  std::optional<std::string> resolve_link() const {
    if (!fixed_link_.empty()) return fixed_link_;
    auto it = net_.servers_.find(ep_.key());
    if (it == net_.servers_.end()) return std::nullopt;
    return it->second.link;
  }

  SimNetwork& net_;
  Endpoint ep_;
  std::string fixed_link_;
  SimNetwork::Handler fixed_handler_;
};

// --- short range ----------------------------------------------------------------------

class SimSession final : public Session {
 public:
  SimSession(SimNetwork& net, std::shared_ptr<SimNetwork::Connection> conn) : net_(net), conn_(std::move(conn)) {}

  const std::string& peripheral_id() const override { return conn_->peripheral_id; }
  bool open() const override { return conn_->open; }

  void subscribe(const std::string& characteristic, std::function<void(const StreamItem&)> on_item) override {
    if (!conn_->open) throw Error(ErrorCode::SessionClosed, "subscribe on closed session");
    conn_->subscriptions[characteristic] = std::move(on_item);
    auto conn = conn_;
    auto* net = &net_;
    std::weak_ptr<bool> alive = net_.alive_;
    net_.log_message(conn->link, "subscribe", characteristic);
    net_.sched_.schedule_at(net_.deliver_time(*conn, true), [=] {
      if (!Lifetime::alive(alive) || !conn->open) return;
      if (!net->is_up(conn->link)) {
        net->close_connection(conn);
        return;
      }
      auto it = net->advertisers_.find(conn->peripheral_id);
      if (it == net->advertisers_.end() || it->second.connection != conn) return;
      conn->peripheral_subscribed.insert(characteristic);
      net->note_delivery(conn->link);
      if (it->second.handlers.on_subscribe) it->second.handlers.on_subscribe(characteristic);
    });
  }

  void write(const std::string& characteristic, std::string payload) override {
    if (!conn_->open) throw Error(ErrorCode::SessionClosed, "write on closed session");
    auto conn = conn_;
    auto* net = &net_;
    std::weak_ptr<bool> alive = net_.alive_;
    net_.log_message(conn->link, "write", payload);
    net_.sched_.schedule_at(net_.deliver_time(*conn, true), [=, payload = std::move(payload)] {
      if (!Lifetime::alive(alive) || !conn->open) return;
      if (!net->is_up(conn->link)) {
        net->log_message(conn->link, "drop", payload);
        net->close_connection(conn);
        return;
      }
      if (net->write_filter_ && net->write_filter_(conn->link, characteristic, payload)) {
        net->log_message(conn->link, "drop", payload);
        return;
      }
      auto it = net->advertisers_.find(conn->peripheral_id);
      if (it == net->advertisers_.end() || it->second.connection != conn) return;
      net->log_message(conn->link, "deliver", payload);
      net->note_delivery(conn->link);
      if (it->second.handlers.on_write) it->second.handlers.on_write(characteristic, payload);
    });
  }

  void on_close(std::function<void()> fn) override {
    if (!conn_->open) {
      fn();
      return;
    }
    conn_->close_callbacks.push_back(std::move(fn));
  }

  void close() override { net_.close_connection(conn_); }

 private:
  SimNetwork& net_;
  std::shared_ptr<SimNetwork::Connection> conn_;
};

class SimPeripheralPort final : public PeripheralPort {
 public:
  SimPeripheralPort(SimNetwork& net, std::string id) : net_(net), id_(std::move(id)) {}

  bool connected() const override {
    auto it = net_.advertisers_.find(id_);
    return it != net_.advertisers_.end() && it->second.connection && it->second.connection->open;
  }

  std::optional<std::uint64_t> notify(const std::string& characteristic, std::string payload) override {
    auto it = net_.advertisers_.find(id_);
    if (it == net_.advertisers_.end() || !it->second.connection) return std::nullopt;
    auto conn = it->second.connection;
    if (!conn->open || conn->peripheral_subscribed.count(characteristic) == 0) return std::nullopt;
    std::uint64_t seq = ++conn->next_seq[characteristic];
    auto* net = &net_;
    std::weak_ptr<bool> alive = net_.alive_;
    net_.log_message(conn->link, "notify", payload);
    net_.sched_.schedule_at(net_.deliver_time(*conn, false), [=, payload = std::move(payload)] {
      if (!Lifetime::alive(alive) || !conn->open) return;
      if (!net->is_up(conn->link)) {
        net->log_message(conn->link, "drop", payload);
        net->close_connection(conn);
        return;
      }
      auto sub = conn->subscriptions.find(characteristic);
      if (sub == conn->subscriptions.end()) return;
      net->log_message(conn->link, "deliver", payload);
      net->note_delivery(conn->link);
      StreamItem item;
      item.notification = Notification{characteristic, payload, seq};
      auto cb = sub->second;
      cb(item);
    });
    return seq;
  }

 private:
  SimNetwork& net_;
  std::string id_;
};

// --- SimNetwork ---------------------------------------------------------------------------

SimNetwork::SimNetwork(Scheduler& sched, Timestamp scenario_start, FaultSchedule schedule)
    : sched_(sched), start_(scenario_start), schedule_(std::move(schedule)) {
  std::weak_ptr<bool> alive = alive_;
  for (const auto& w : schedule_.windows()) {
    if (w.mode != FaultMode::Down) continue;
    sched_.schedule_at(start_ + w.start, [this, alive, link = w.link] {
      if (!Lifetime::alive(alive)) return;
      log_message(link, "link-down", {});
      close_link(link);
    });
    sched_.schedule_at(start_ + w.end, [this, alive, link = w.link] {
      if (!Lifetime::alive(alive)) return;
      log_message(link, "link-up", {});
    });
  }
}

SimNetwork::~SimNetwork() { *alive_ = false; }

void SimNetwork::serve(const Endpoint& ep, std::string link, Handler handler) {
  servers_[ep.key()] = Server{std::move(link), std::move(handler)};
}

void SimNetwork::unserve(const Endpoint& ep) { servers_.erase(ep.key()); }

std::unique_ptr<RequestChannel> SimNetwork::framed(const Endpoint& ep) {
  return std::make_unique<SimRequestChannel>(*this, ep);
}

std::unique_ptr<RequestChannel> SimNetwork::http_post(const Endpoint& ep) {
  return std::make_unique<SimRequestChannel>(*this, ep);
}

std::unique_ptr<RequestChannel> SimNetwork::channel_on(std::string link, Handler handler) {
  return std::make_unique<SimRequestChannel>(*this, std::move(link), std::move(handler));
}

bool SimNetwork::is_up(const std::string& link) const { return !schedule_.is_down(link, offset()); }

Duration SimNetwork::latency(const std::string& link) const { return schedule_.latency(link, offset()); }

void SimNetwork::log_message(const std::string& link, const char* event, std::string_view body) {
  ++logged_;
  std::string line = std::to_string(offset().count()) + "|" + link + "|" + event + "|" + sha256_hex(body) + "\n";
  digest_.update(line);
}

void SimNetwork::note_delivery(const std::string& link) {
  if (!is_up(link)) ++phantom_;
}

Timestamp SimNetwork::deliver_time(Connection& c, bool to_peripheral) {
  Timestamp t = sched_.now() + latency(c.link) / 2;
  Timestamp& last = to_peripheral ? c.last_to_peripheral : c.last_to_central;
  if (t < last) t = last;
  last = t;
  return t;
}

std::shared_ptr<PeripheralPort> SimNetwork::advertise(const PeripheralIdentity& self, PeripheralHandlers handlers) {
  auto& adv = advertisers_[self.device_id];
  if (adv.connection) close_connection(adv.connection);
  adv.identity = self;
  adv.handlers = std::move(handlers);
  adv.connection.reset();
  return std::make_shared<SimPeripheralPort>(*this, self.device_id);
}

void SimNetwork::stop_advertising(const std::string& peripheral_id) {
  auto it = advertisers_.find(peripheral_id);
  if (it == advertisers_.end()) return;
  auto conn = it->second.connection;
  it->second.handlers = {};
  if (conn) close_connection(conn);
  advertisers_.erase(peripheral_id);
}

std::shared_ptr<Session> SimNetwork::open_session(const std::string& central_id, const PeripheralIdentity& peer) {
  auto link = short_range_link(peer.device_id);
  if (!is_up(link)) throw Error(ErrorCode::Unreachable, peer.device_id + " out of range");
  auto it = advertisers_.find(peer.device_id);
  if (it == advertisers_.end() || it->second.identity.address != peer.address)
    throw Error(ErrorCode::Unreachable, peer.device_id + " is not advertising");
  auto& adv = it->second;
  if (adv.connection && adv.connection->open) throw Error(ErrorCode::Unreachable, peer.device_id + " is busy");
  if (!adv.handlers.accept || !adv.handlers.accept(central_id))
    throw Error(ErrorCode::Unauthorized, peer.device_id + " is not paired with " + central_id);
  auto conn = std::make_shared<Connection>();
  conn->link = link;
  conn->central_id = central_id;
  conn->peripheral_id = peer.device_id;
  conn->last_to_central = conn->last_to_peripheral = sched_.now();
  adv.connection = conn;
  log_message(link, "connect", central_id);
  return std::make_shared<SimSession>(*this, conn);
}

void SimNetwork::close_connection(const std::shared_ptr<Connection>& c) {
  if (!c || !c->open) return;
  c->open = false;
  log_message(c->link, "disconnect", c->central_id);
  auto subs = c->subscriptions;
  for (auto& [name, cb] : subs) {
    StreamItem end;
    end.disconnected = true;
    end.notification.characteristic_id = name;
    cb(end);
  }
  auto callbacks = std::move(c->close_callbacks);
  for (auto& cb : callbacks) cb();
  auto it = advertisers_.find(c->peripheral_id);
  if (it != advertisers_.end() && it->second.connection == c) {
    it->second.connection.reset();
    if (it->second.handlers.on_disconnect) it->second.handlers.on_disconnect();
  }
}

void SimNetwork::close_link(const std::string& link) {
  std::vector<std::shared_ptr<Connection>> doomed;
  for (auto& [id, adv] : advertisers_)
    if (adv.connection && adv.connection->link == link) doomed.push_back(adv.connection);
  for (auto& c : doomed) close_connection(c);
}

}  // namespace ambox
