#include "ambox/process.hpp"

#include <pthread.h>
#include <signal.h>

#include <atomic>
#include <cstdlib>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "ambox/crypto.hpp"
#include "ambox/domain.hpp"
#include "ambox/fs_util.hpp"
#include "ambox/http_api.hpp"
#include "ambox/ledger.hpp"
#include "ambox/mote_agent.hpp"
#include "ambox/net_tcp.hpp"
#include "ambox/node_agent.hpp"
#include "ambox/operator.hpp"
#include "ambox/sensors.hpp"

namespace ambox {

using nlohmann::json;

std::string to_string(Role r) {
  switch (r) {
    case Role::Node: return "node";
    case Role::Mote: return "mote";
    case Role::Ledger: return "ledger";
    case Role::Operator: return "operator";
    case Role::Harness: return "harness";
  }
  return "?";
}

namespace {

Error config_error(const std::string& detail) { return Error(ErrorCode::ConfigInvalid, detail); }

Role role_from_string(const std::string& s) {
  for (Role r : {Role::Node, Role::Mote, Role::Ledger, Role::Operator, Role::Harness})
    if (to_string(r) == s) return r;
  throw config_error("unknown role '" + s + "'");
}

std::string get_string(const json& j, const char* key, const std::string& fallback = {}) {
  if (!j.contains(key)) return fallback;
  if (!j.at(key).is_string()) throw config_error(std::string("'") + key + "' must be a string");
  return j.at(key).get<std::string>();
}

std::string require_string(const json& j, const char* key) {
  auto v = get_string(j, key);
  if (v.empty()) throw config_error(std::string("missing '") + key + "'");
  return v;
}

Endpoint listen_endpoint(const ProcessConfig& c) {
  try {
    return parse_endpoint(c.listen);
  } catch (const Error& e) {
    throw config_error("listen: " + std::string(e.what()));
  }
}

Timestamp wall_now() { return std::chrono::time_point_cast<Duration>(std::chrono::system_clock::now()); }

std::uint64_t config_seed(const ProcessConfig& c) {
  if (!c.raw.contains("seed")) return 1;
  if (!c.raw.at("seed").is_number_unsigned()) throw config_error("'seed' must be a non-negative integer");
  return c.raw.at("seed").get<std::uint64_t>();
}

std::vector<std::string> sensor_names(const ProcessConfig& c, std::vector<std::string> fallback) {
  if (!c.raw.contains("sensors")) return fallback;
  try {
    return c.raw.at("sensors").get<std::vector<std::string>>();
  } catch (const json::exception&) {
    throw config_error("'sensors' must be a list of quantity names");
  }
}

std::shared_ptr<const EnvironmentTrace> process_trace(const ProcessConfig& c) {
  if (c.raw.contains("trace_csv")) {
    try {
      return std::make_shared<EnvironmentTrace>(EnvironmentTrace::load(get_string(c.raw, "trace_csv")));
    } catch (const Error& e) {
      throw config_error("trace_csv: " + std::string(e.what()));
    }
  }
  // Thirty days of synthetic weather is plenty for a demo deployment.
  return std::make_shared<EnvironmentTrace>(
      EnvironmentTrace::synthetic(Duration{30LL * 24 * 3'600'000}, Duration{60'000}, config_seed(c)));
}

std::vector<std::unique_ptr<SensorDriver>> build_sensors(const std::vector<std::string>& names, bool node,
                                                         std::shared_ptr<const EnvironmentTrace> trace,
                                                         Timestamp start, std::uint64_t seed) {
  std::vector<std::unique_ptr<SensorDriver>> out;
  for (const auto& q : names) {
    SensorSpec spec;
    if (q == "temperature") spec = node ? SensorSpec::node_temperature() : SensorSpec::mote_temperature();
    else if (q == "humidity") spec = node ? SensorSpec::node_humidity() : SensorSpec::mote_humidity();
    else if (q == "pressure" && node) spec = SensorSpec::node_pressure();
    else throw config_error("no '" + q + "' sensor on this device");
    out.push_back(std::make_unique<SimulatedSensor>(spec, trace, start, seed + out.size()));
  }
  return out;
}

void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::trunc);
  out << text;
  if (!out) throw Error(ErrorCode::DataDirUnwritable, "cannot write " + p.string());
}

std::vector<PeripheralIdentity> configured_motes(const ProcessConfig& c) {
  std::vector<PeripheralIdentity> out;
  if (!c.raw.contains("motes")) return out;
  if (!c.raw.at("motes").is_array()) throw config_error("'motes' must be a list");
  for (const auto& m : c.raw.at("motes")) {
    if (!m.is_object()) throw config_error("mote entries must be objects");
    PeripheralIdentity id;
    id.device_id = require_string(m, "id");
    id.address = require_string(m, "address");
    id.public_key = get_string(m, "public_key");
    if (m.contains("public_key_file")) {
      std::ifstream in(get_string(m, "public_key_file"));
      if (!in) throw config_error("cannot read public_key_file for " + id.device_id);
      std::stringstream ss;
      ss << in.rdbuf();
      id.public_key = ss.str();
    }
    out.push_back(std::move(id));
  }
  return out;
}

}  // namespace

ProcessConfig process_config_from_json(const json& j, Role expected) {
  if (!j.is_object()) throw config_error("config must be a JSON object");
  ProcessConfig c;
  c.raw = j;
  c.role = j.contains("role") ? role_from_string(get_string(j, "role")) : expected;
  if (c.role != expected)
    throw config_error("config is for role '" + to_string(c.role) + "', not '" + to_string(expected) + "'");
  c.data_dir = get_string(j, "data_dir");
  if (const char* env = std::getenv("AMBOX_DATA_DIR"); env != nullptr && *env != '\0') c.data_dir = env;
  if (c.data_dir.empty() && c.role != Role::Harness) throw config_error("missing 'data_dir'");
  c.listen = get_string(j, "listen");
  if (c.listen.empty() && c.role != Role::Harness) throw config_error("missing 'listen'");
  c.clock = get_string(j, "clock", "wall");
  if (c.clock != "wall" && c.clock != "virtual") throw config_error("clock must be 'wall' or 'virtual'");
  if (c.clock == "virtual" && c.role != Role::Harness)
    throw config_error("the virtual clock is only available under the harness");
  try {
    c.log_level = parse_log_level(get_string(j, "log_level", "info"));
  } catch (const Error& e) {
    throw config_error(e.what());
  }
  return c;
}

ProcessConfig load_process_config(const std::filesystem::path& path, Role expected) {
  std::ifstream in(path);
  if (!in) throw config_error("cannot read " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw config_error(path.string() + ": " + e.what());
  }
  return process_config_from_json(j, expected);
}

void ensure_data_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::DataDirUnwritable, dir.string() + ": " + ec.message());
  auto probe = dir / ".write-probe";
  {
    std::ofstream out(probe, std::ios::trunc);
    out << "ok";
    out.flush();
    if (!out) throw Error(ErrorCode::DataDirUnwritable, dir.string() + " is not writable");
  }
  std::filesystem::remove(probe, ec);
}

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::ConfigInvalid: return 2;
    case ErrorCode::PortInUse: return 3;
    case ErrorCode::DataDirUnwritable: return 4;
    default: return 1;
  }
}

// --- signals ---------------------------------------------------------------------

struct TerminationSignals::Impl {
  sigset_t set;
  sigset_t previous;
  std::thread waiter;
  std::atomic<bool> closing{false};
};

TerminationSignals::TerminationSignals() : impl_(new Impl) {
  sigemptyset(&impl_->set);
  sigaddset(&impl_->set, SIGINT);
  sigaddset(&impl_->set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &impl_->set, &impl_->previous);
}

void TerminationSignals::notify(std::function<void(int)> on_signal) {
  impl_->waiter = std::thread([this, fn = std::move(on_signal)] {
    int sig = 0;
    sigwait(&impl_->set, &sig);
    if (!impl_->closing) fn(sig);
  });
}

int TerminationSignals::wait() {
  int sig = 0;
  sigwait(&impl_->set, &sig);
  return sig;
}

TerminationSignals::~TerminationSignals() {
  impl_->closing = true;
  if (impl_->waiter.joinable()) {
    pthread_kill(impl_->waiter.native_handle(), SIGTERM);
    impl_->waiter.join();
  }
  delete impl_;
}

// --- roles -------------------------------------------------------------------------

int run_node_process(const ProcessConfig& c, Logger& log) {
  TerminationSignals signals;
  ensure_data_dir(c.data_dir);
  auto ep = listen_endpoint(c);
  auto id = require_string(c.raw, "device_id");
  auto trace = process_trace(c);
  auto names = sensor_names(c, {"temperature", "humidity", "pressure"});

  auto key = KeyPair::load_or_generate(c.data_dir / "node_key.pem", id);
  write_text(c.data_dir / "node_public.pem", key.public_key().pem());

  auto loop = EventLoop::make_wall();
  RealChannelFactory channels(*loop);
  TcpShortRange short_range(*loop);

  NodeOptions opts;
  opts.device_id = id;
  opts.data_dir = c.data_dir;
  opts.motes = configured_motes(c);
  NodeAgent node(opts, *loop, channels, &short_range, std::move(key),
                 build_sensors(names, true, trace, loop->now(), config_seed(c)), log);
  node.on_power_off([&] {
    log.info("process", "powered off");
    loop->stop();
  });

  NodeControlServer server(node, *loop, ep.host, ep.port);
  log.info("process", "node listening",
           {{"device_id", id}, {"port", server.port()}, {"state", to_string(node.state())}});

  signals.notify([&](int sig) {
    log.info("process", "terminating", {{"signal", sig}});
    server.stop();
    loop->stop();
  });
  loop->run();
  server.stop();
  log.info("process", "node stopped", {{"state", to_string(node.state())}, {"buffered", node.buffer_depth()}});
  return 0;
}

int run_mote_process(const ProcessConfig& c, Logger& log) {
  TerminationSignals signals;
  ensure_data_dir(c.data_dir);
  listen_endpoint(c);
  auto id = require_string(c.raw, "device_id");
  auto paired = require_string(c.raw, "paired_node");
  auto trace = process_trace(c);
  auto names = sensor_names(c, {"temperature", "humidity"});

  auto key = KeyPair::load_or_generate(c.data_dir / "mote_key.pem", id);
  write_text(c.data_dir / "mote_public.pem", key.public_key().pem());

  auto loop = EventLoop::make_wall();
  TcpShortRange short_range(*loop);
  MoteOptions opts;
  opts.device_id = id;
  opts.address = c.listen;
  opts.paired_node = paired;
  opts.data_dir = c.data_dir;
  MoteAgent mote(opts, *loop, short_range, std::move(key),
                 build_sensors(names, false, trace, loop->now(), config_seed(c)), log);
  log.info("process", "mote advertising", {{"device_id", id}, {"address", c.listen}, {"paired_node", paired}});

  signals.notify([&](int sig) {
    log.info("process", "terminating", {{"signal", sig}});
    loop->stop();
  });
  loop->run();
  log.info("process", "mote stopped", {{"backlog", mote.backlog()}});
  return 0;
}

int run_ledger_process(const ProcessConfig& c, Logger& log) {
  TerminationSignals signals;
  ensure_data_dir(c.data_dir);
  auto ep = listen_endpoint(c);
  Ledger ledger(Ledger::Options{c.data_dir, true}, wall_now);
  TcpFramedServer server(ep.host, ep.port, [&](const std::string& body) { return handle_ledger_request(ledger, body); });
  log.info("process", "ledger listening", {{"port", server.port()}, {"height", ledger.height()}});
  int sig = signals.wait();
  log.info("process", "terminating", {{"signal", sig}});
  server.stop();
  return 0;
}

int run_operator_process(const ProcessConfig& c, Logger& log) {
  TerminationSignals signals;
  ensure_data_dir(c.data_dir);
  auto ep = listen_endpoint(c);
  auto log_path = c.data_dir / "heartbeats.jsonl";

  FleetView fleet;
  {
    std::ifstream in(log_path);
    std::string line;
    while (std::getline(in, line)) {
      try {
        auto item = json::parse(line);
        fleet.ingest_json(item.at("body").get<std::string>(), from_millis(item.at("received_at").get<std::int64_t>()));
      } catch (const std::exception&) {
        // torn tail after a crash
      }
    }
  }

  std::mutex log_mu;
  std::ofstream out(log_path, std::ios::app);
  if (!out) throw Error(ErrorCode::DataDirUnwritable, "cannot append " + log_path.string());
  OperatorServer server(fleet, wall_now, ep.host, ep.port, [&](const std::string& body, Timestamp at) {
    std::lock_guard lock(log_mu);
    out << json{{"received_at", to_millis(at)}, {"body", body}}.dump() << '\n';
    out.flush();
  });
  log.info("process", "operator listening", {{"port", server.port()}, {"devices", fleet.view(wall_now()).size()}});
  int sig = signals.wait();
  log.info("process", "terminating", {{"signal", sig}});
  server.stop();
  return 0;
}

}  // namespace ambox
