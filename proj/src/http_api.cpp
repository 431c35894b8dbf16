#include "ambox/http_api.hpp"

#include <sys/socket.h>

#include <future>
#include <thread>

#include <httplib.h>

#include "ambox/error.hpp"
#include "ambox/net_tcp.hpp"
#include "ambox/node_agent.hpp"

namespace ambox {

using json = nlohmann::json;

namespace {

void reuse_addr_only(socket_t sock) {
  int yes = 1;
  ::setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof yes);
}

int seconds_part(Duration d) { return static_cast<int>(d.count() / 1000); }
int micros_part(Duration d) { return static_cast<int>((d.count() % 1000) * 1000); }

void bind_server(httplib::Server& svr, const std::string& host, std::uint16_t port, std::uint16_t& bound) {
  svr.set_socket_options(reuse_addr_only);
  if (port == 0) {
    int p = svr.bind_to_any_port(host);
    if (p <= 0) throw Error(ErrorCode::IoFailure, "cannot bind " + host);
    bound = static_cast<std::uint16_t>(p);
  } else {
    if (!svr.bind_to_port(host, port)) throw Error(ErrorCode::PortInUse, "port " + std::to_string(port) + " is already in use");
    bound = port;
  }
}

void reply(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(canonical_json(body), "application/json");
}

void reply_error(httplib::Response& res, const Error& e) {
  int status = 500;
  switch (e.code()) {
    case ErrorCode::IllegalState:
    case ErrorCode::LedgerNotConfigured:
    case ErrorCode::BufferNotDrained:
      status = 409;
      break;
    case ErrorCode::InvalidArgument:
    case ErrorCode::MalformedMessage:
      status = 400;
      break;
    default:
      break;
  }
  reply(res, status, {{"status", "error"}, {"error", std::string(to_string(e.code()))}, {"detail", e.what()}});
}

Duration duration_field(const json& j, const char* key) {
  const auto& v = j.at(key);
  if (v.is_string()) return parse_duration(v.get<std::string>());
  if (v.is_number_integer()) return Duration{v.get<std::int64_t>()};
  throw Error(ErrorCode::InvalidArgument, std::string(key) + " must be milliseconds or a duration string");
}

std::uint16_t port_field(const json& j) {
  auto p = j.at("port").get<std::int64_t>();
  if (p <= 0 || p > 65535) throw Error(ErrorCode::InvalidArgument, "port out of range");
  return static_cast<std::uint16_t>(p);
}

json parse_body(const std::string& body) {
  if (body.empty()) return json::object();
  try {
    auto j = json::parse(body);
    if (!j.is_object()) throw Error(ErrorCode::InvalidArgument, "body must be a JSON object");
    return j;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("bad JSON: ") + e.what());
  }
}

class HttpPostChannel final : public RequestChannel {
 public:
  HttpPostChannel(Scheduler& sched, Endpoint ep) : sched_(sched), ep_(std::move(ep)) {
    if (ep_.path.empty()) ep_.path = "/heartbeat";
  }
  std::string describe() const override { return "http://" + ep_.key() + ep_.path; }

  void request(std::string body, Duration timeout, std::function<void(Response)> done) override {
    worker_.submit([this, body = std::move(body), timeout, done = std::move(done)]() mutable {
      Response r;
      httplib::Client cli(ep_.host, ep_.port);
      cli.set_connection_timeout(seconds_part(timeout), micros_part(timeout));
      cli.set_read_timeout(seconds_part(timeout), micros_part(timeout));
      cli.set_write_timeout(seconds_part(timeout), micros_part(timeout));
      auto res = cli.Post(ep_.path, body, "application/json");
      if (!res) {
        auto err = res.error();
        r.error = err == httplib::Error::Connection ? ErrorCode::ConnectionRefused
                  : err == httplib::Error::ConnectionTimeout || err == httplib::Error::Read ? ErrorCode::Timeout
                                                                                             : ErrorCode::LinkDown;
      } else if (res->status < 200 || res->status >= 300) {
        r.error = ErrorCode::LinkDown;
        r.body = res->body;
      } else {
        r.body = res->body;
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

std::unique_ptr<RequestChannel> make_http_post_channel(Scheduler& sched, const Endpoint& ep) {
  return std::make_unique<HttpPostChannel>(sched, ep);
}

MonitoringJob monitoring_job_from_wire(const json& body) {
  MonitoringJob job;
  try {
    job.product_id = body.at("prod_id").get<std::string>();
    job.batch_no = body.at("batch_no").get<std::string>();
    job.report_interval = duration_field(body, "interval");
    job.sample_interval = body.contains("sample_interval") ? duration_field(body, "sample_interval")
                                                           : std::min(Duration{60'000}, job.report_interval);
    if (body.contains("sensor_params")) job.sensor_params = body.at("sensor_params").get<std::map<std::string, SensorParam>>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("startMonitoring: ") + e.what());
  }
  check_job(job);
  return job;
}

json monitoring_job_to_wire(const MonitoringJob& job) {
  return {{"prod_id", job.product_id},
          {"batch_no", job.batch_no},
          {"interval", job.report_interval.count()},
          {"sample_interval", job.sample_interval.count()},
          {"sensor_params", job.sensor_params}};
}

// --- node control server ---------------------------------------------------------------------

struct NodeControlServer::Impl {
  NodeAgent& node;
  Scheduler& sched;
  httplib::Server svr;
  std::uint16_t port = 0;
  std::thread thread;

  Impl(NodeAgent& n, Scheduler& s) : node(n), sched(s) {}

  // Runs fn on the scheduler thread and waits for it.
  json on_loop(std::function<json()> fn) {
    auto task = std::make_shared<std::packaged_task<json()>>(std::move(fn));
    auto fut = task->get_future();
    sched.post([task] { (*task)(); });
    if (fut.wait_for(std::chrono::seconds(30)) != std::future_status::ready)
      throw Error(ErrorCode::Timeout, "node did not answer");
    return fut.get();
  }

  void route(const std::string& path, std::function<void(const json&)> op) {
    svr.Post(path, [this, op](const httplib::Request& req, httplib::Response& res) {
      try {
        auto body = parse_body(req.body);
        on_loop([&] {
          op(body);
          return json::object();
        });
        reply(res, 200, {{"status", "ok"}});
      } catch (const Error& e) {
        reply_error(res, e);
      } catch (const json::exception& e) {
        reply_error(res, Error(ErrorCode::InvalidArgument, e.what()));
      }
    });
  }
};

NodeControlServer::NodeControlServer(NodeAgent& node, Scheduler& sched, const std::string& host, std::uint16_t port)
    : impl_(std::make_unique<Impl>(node, sched)) {
  auto& im = *impl_;
  im.route("/init", [&im](const json&) { im.node.init(); });
  im.route("/configHeartbeat", [&im](const json& b) {
    im.node.config_heartbeat(b.at("ipaddr").get<std::string>(), port_field(b), duration_field(b, "heartbeat_timeout"));
  });
  im.route("/configBlockchain", [&im](const json& b) {
    im.node.config_blockchain(b.at("ipaddr").get<std::string>(), port_field(b), b.at("channel_name").get<std::string>(),
                              b.at("chaincode_name").get<std::string>());
  });
  im.route("/startMonitoring", [&im](const json& b) { im.node.start_monitoring(monitoring_job_from_wire(b)); });
  im.route("/stopMonitoring", [&im](const json&) { im.node.stop_monitoring(); });
  im.route("/turnOff", [&im](const json&) { im.node.turn_off(); });
  im.svr.Get("/status", [&im](const httplib::Request&, httplib::Response& res) {
    try {
      reply(res, 200, im.on_loop([&im] { return im.node.status(); }));
    } catch (const Error& e) {
      reply_error(res, e);
    }
  });
  bind_server(im.svr, host, port, im.port);
  im.thread = std::thread([&im] { im.svr.listen_after_bind(); });
}

NodeControlServer::~NodeControlServer() { stop(); }

std::uint16_t NodeControlServer::port() const { return impl_->port; }

void NodeControlServer::stop() {
  impl_->svr.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

// --- operator server -------------------------------------------------------------------------

struct OperatorServer::Impl {
  httplib::Server svr;
  std::uint16_t port = 0;
  std::thread thread;
};

OperatorServer::OperatorServer(FleetView& fleet, Clock clock, const std::string& host, std::uint16_t port,
                               OnIngest on_ingest)
    : impl_(std::make_unique<Impl>()) {
  auto& svr = impl_->svr;
  svr.Post("/heartbeat", [&fleet, clock, on_ingest](const httplib::Request& req, httplib::Response& res) {
    auto now = clock();
    try {
      bool fresh = fleet.ingest_json(req.body, now);
      if (fresh && on_ingest) on_ingest(req.body, now);
      reply(res, 200, {{"status", "ok"}, {"accepted", fresh}});
    } catch (const Error& e) {
      reply_error(res, e);
    }
  });
  svr.Get("/fleet", [&fleet, clock](const httplib::Request&, httplib::Response& res) {
    json out = json::array();
    for (const auto& e : fleet.view(clock())) out.push_back(to_json_value(e));
    reply(res, 200, out);
  });
  bind_server(svr, host, port, impl_->port);
  impl_->thread = std::thread([this] { impl_->svr.listen_after_bind(); });
}

OperatorServer::~OperatorServer() { stop(); }

std::uint16_t OperatorServer::port() const { return impl_->port; }

void OperatorServer::stop() {
  impl_->svr.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

// --- device control client ---------------------------------------------------------------------

HttpDeviceControl::HttpDeviceControl(Endpoint ep, Duration timeout) : ep_(std::move(ep)), timeout_(timeout) {}

json HttpDeviceControl::call(const std::string& method, const std::string& path, const json& body) {
  httplib::Client cli(ep_.host, ep_.port);
  cli.set_connection_timeout(seconds_part(timeout_), micros_part(timeout_));
  cli.set_read_timeout(seconds_part(timeout_), micros_part(timeout_));
  auto res = method == "GET" ? cli.Get(path) : cli.Post(path, canonical_json(body), "application/json");
  if (!res) throw Error(ErrorCode::DeviceUnreachable, ep_.key() + path + ": " + httplib::to_string(res.error()));
  json parsed;
  try {
    parsed = json::parse(res->body);
  } catch (const json::exception&) {
    throw Error(ErrorCode::DeviceUnreachable, ep_.key() + path + ": unparseable answer (HTTP " + std::to_string(res->status) + ")");
  }
  if (res->status == 200) return parsed;
  auto code = error_code_from_string(parsed.value("error", std::string()));
  auto detail = parsed.value("detail", std::string());
  if (code == ErrorCode::IllegalState) throw Error(ErrorCode::DeviceIllegalState, detail);
  if (code) throw Error(*code, detail);
  throw Error(ErrorCode::DeviceUnreachable, ep_.key() + path + ": HTTP " + std::to_string(res->status));
}

json HttpDeviceControl::status() { return call("GET", "/status", {}); }
void HttpDeviceControl::init() { call("POST", "/init", json::object()); }

void HttpDeviceControl::config_heartbeat(const std::string& ipaddr, std::uint16_t port, Duration timeout) {
  call("POST", "/configHeartbeat", {{"ipaddr", ipaddr}, {"port", port}, {"heartbeat_timeout", timeout.count()}});
}

void HttpDeviceControl::config_blockchain(const std::string& ipaddr, std::uint16_t port, const std::string& channel,
                                          const std::string& chaincode) {
  call("POST", "/configBlockchain",
       {{"ipaddr", ipaddr}, {"port", port}, {"channel_name", channel}, {"chaincode_name", chaincode}});
}

void HttpDeviceControl::start_monitoring(const MonitoringJob& job) {
  call("POST", "/startMonitoring", monitoring_job_to_wire(job));
}

void HttpDeviceControl::stop_monitoring() { call("POST", "/stopMonitoring", json::object()); }
void HttpDeviceControl::turn_off() { call("POST", "/turnOff", json::object()); }

}  // namespace ambox
