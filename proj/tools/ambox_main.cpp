// ambox <node|mote|ledger|operator|harness> ...

#include <chrono>
#include <iostream>
#include <thread>

#include <CLI11.hpp>
#include <httplib.h>
#include <json.hpp>

#include "ambox/harness.hpp"
#include "ambox/http_api.hpp"
#include "ambox/net_tcp.hpp"
#include "ambox/operator.hpp"
#include "ambox/process.hpp"
#include "ambox/scenario.hpp"

using namespace ambox;
using nlohmann::json;

namespace {

Timestamp wall_now() { return std::chrono::time_point_cast<Duration>(std::chrono::system_clock::now()); }

Logger make_logger(LogLevel level) { return Logger(&std::cerr, level, "wall", wall_now); }

LedgerAdmin ledger_admin(const std::string& address) {
  auto ep = parse_endpoint(address);
  return LedgerAdmin([ep](const std::string& req) {
    try {
      return framed_call(ep, req, Duration{5'000});
    } catch (const Error& e) {
      throw Error(ErrorCode::LedgerUnreachable, ep.key() + ": " + e.what());
    }
  });
}

Duration duration_arg(const std::string& text) {
  try {
    return parse_duration(text);
  } catch (const Error&) {
    throw Error(ErrorCode::InvalidArgument, "bad duration '" + text + "'");
  }
}

int report_error(const Error& e) {
  std::cerr << "error: " << e.what() << "\n";
  return exit_code_for(e.code());
}

struct OperatorArgs {
  std::string device;
  std::string ledger;
  std::string heartbeat;
  std::string operator_address;
  std::string timeout = "30s";
  std::string channel = "ambox";
  std::string chaincode = "events";
  std::string prod_id;
  std::string batch_no;
  std::string sample_interval = "1m";
  std::string report_interval = "5m";
  std::string sensor_params;
  std::string device_id;
  std::size_t limit = 20;
};

int run_operator_verb(const std::string& verb, const OperatorArgs& a) {
  if (verb == "commission") {
    HttpDeviceControl device(parse_endpoint(a.device));
    auto ledger = ledger_admin(a.ledger);
    auto hb = parse_endpoint(a.heartbeat);
    auto lg = parse_endpoint(a.ledger);
    CommissionPlan plan{hb.host, hb.port, duration_arg(a.timeout), lg.host, lg.port, a.channel, a.chaincode};
    auto out = commission(device, ledger, plan);
    std::cout << json{{"device_id", out.device_id},
                      {"newly_registered", out.newly_registered},
                      {"initialized", out.initialized},
                      {"state", to_string(out.final_state)}}
                     .dump()
              << "\n";
    return 0;
  }
  if (verb == "start") {
    HttpDeviceControl device(parse_endpoint(a.device));
    MonitoringJob job;
    job.product_id = a.prod_id;
    job.batch_no = a.batch_no;
    job.sample_interval = duration_arg(a.sample_interval);
    job.report_interval = duration_arg(a.report_interval);
    if (!a.sensor_params.empty()) {
      try {
        job.sensor_params = json::parse(a.sensor_params).get<std::map<std::string, SensorParam>>();
      } catch (const json::exception& e) {
        throw Error(ErrorCode::InvalidArgument, std::string("--sensor-params: ") + e.what());
      }
    }
    check_job(job);
    device.start_monitoring(job);
    std::cout << json{{"status", "ok"}, {"job", monitoring_job_to_wire(job)}}.dump() << "\n";
    return 0;
  }
  if (verb == "stop") {
    HttpDeviceControl device(parse_endpoint(a.device));
    device.stop_monitoring();
    std::cout << json{{"status", "ok"}}.dump() << "\n";
    return 0;
  }
  if (verb == "decommission") {
    HttpDeviceControl device(parse_endpoint(a.device));
    auto ledger = ledger_admin(a.ledger);
    auto out = decommission(device, ledger, duration_arg(a.timeout),
                            [](Duration d) { std::this_thread::sleep_for(d); });
    json j{{"stopped_monitoring", out.stopped_monitoring},
           {"drained", out.drained},
           {"waited_ms", out.waited.count()},
           {"latest_report_id", out.latest_report_id ? json(*out.latest_report_id) : json(nullptr)}};
    std::cout << j.dump() << "\n";
    return out.drained ? 0 : 1;
  }
  if (verb == "fleet") {
    auto ep = parse_endpoint(a.operator_address);
    httplib::Client cli(ep.host, ep.port);
    auto res = cli.Get("/fleet");
    if (!res) throw Error(ErrorCode::DeviceUnreachable, "operator " + ep.key() + " unreachable");
    std::cout << json::parse(res->body).dump(2) << "\n";
    return 0;
  }
  if (verb == "tail-ledger") {
    auto ledger = ledger_admin(a.ledger);
    json out = json::array();
    for (const auto& r : ledger.recent(a.device_id, a.limit)) out.push_back(json(r));
    std::cout << out.dump(2) << "\n";
    return 0;
  }
  throw Error(ErrorCode::InvalidArgument, "unknown operator verb " + verb);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"AmBox cold-chain monitoring: devices, ledger, operator and scenario harness"};
  app.require_subcommand(1);

  std::string config_path;
  std::string log_level;

  auto add_role = [&](const char* name, const char* help) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config_path, "role configuration file (JSON)");
    sub->add_option("--log-level", log_level, "debug|info|warn|error|off");
    return sub;
  };
  auto* node_cmd = add_role("node", "run a Node");
  auto* mote_cmd = add_role("mote", "run a Mote");
  auto* ledger_cmd = add_role("ledger", "run the ledger service");
  auto* operator_cmd = add_role("operator", "run the heartbeat sink, or one operator verb");

  OperatorArgs oa;
  std::string verb;
  auto add_verb = [&](const char* name, const char* help) {
    auto* v = operator_cmd->add_subcommand(name, help);
    v->callback([&verb, name] { verb = name; });
    return v;
  };
  auto* commission_cmd = add_verb("commission", "register key, configure and initialise a device");
  commission_cmd->add_option("--device", oa.device, "device control API host:port")->required();
  commission_cmd->add_option("--ledger", oa.ledger, "ledger host:port")->required();
  commission_cmd->add_option("--heartbeat", oa.heartbeat, "heartbeat sink host:port")->required();
  commission_cmd->add_option("--timeout", oa.timeout, "heartbeat timeout");
  commission_cmd->add_option("--channel", oa.channel);
  commission_cmd->add_option("--chaincode", oa.chaincode);

  auto* start_cmd = add_verb("start", "start monitoring");
  start_cmd->add_option("--device", oa.device)->required();
  start_cmd->add_option("--prod-id", oa.prod_id)->required();
  start_cmd->add_option("--batch-no", oa.batch_no)->required();
  start_cmd->add_option("--sample-interval", oa.sample_interval);
  start_cmd->add_option("--report-interval", oa.report_interval);
  start_cmd->add_option("--sensor-params", oa.sensor_params, "JSON object: quantity -> params");

  auto* stop_cmd = add_verb("stop", "stop monitoring");
  stop_cmd->add_option("--device", oa.device)->required();

  auto* decommission_cmd = add_verb("decommission", "stop monitoring and wait for the buffer to drain");
  decommission_cmd->add_option("--device", oa.device)->required();
  decommission_cmd->add_option("--ledger", oa.ledger)->required();
  decommission_cmd->add_option("--timeout", oa.timeout, "how long to wait for the drain");

  auto* fleet_cmd = add_verb("fleet", "show the operator's fleet view");
  fleet_cmd->add_option("--operator", oa.operator_address, "operator host:port")->required();

  auto* tail_cmd = add_verb("tail-ledger", "latest committed reports");
  tail_cmd->add_option("--ledger", oa.ledger)->required();
  tail_cmd->add_option("--device", oa.device_id, "device id filter");
  tail_cmd->add_option("--limit", oa.limit);

  auto* harness_cmd = app.add_subcommand("harness", "scenario harness");
  harness_cmd->require_subcommand(1);
  auto* run_cmd = harness_cmd->add_subcommand("run", "run one scenario file");
  std::string scenario_path;
  std::uint64_t seed = 1;
  bool real_time = false;
  bool print_json = false;
  std::string work_dir;
  run_cmd->add_option("scenario", scenario_path, "scenario JSON file")->required();
  run_cmd->add_option("--seed", seed);
  run_cmd->add_flag("--real-time", real_time, "pace the run on the wall clock");
  run_cmd->add_flag("--json", print_json, "print the ScenarioReport as canonical JSON");
  run_cmd->add_option("--work-dir", work_dir, "keep device and ledger files here");
  run_cmd->add_option("--log-level", log_level);

  CLI11_PARSE(app, argc, argv);

  try {
    if (run_cmd->parsed()) {
      auto level = log_level.empty() ? LogLevel::Off : parse_log_level(log_level);
      auto log = make_logger(level);
      auto scenario = Scenario::load(scenario_path);
      RunOptions opt;
      opt.seed = seed;
      opt.real_time = real_time;
      opt.log = &log;
      if (!work_dir.empty()) opt.work_dir = std::filesystem::path(work_dir);
      auto report = run_scenario(scenario, opt);
      if (print_json) std::cout << report.to_canonical_json() << "\n";
      else std::cout << report.summary();
      return report.passed() ? 0 : 1;
    }
    if (operator_cmd->parsed() && !verb.empty()) return run_operator_verb(verb, oa);

    Role role = node_cmd->parsed()     ? Role::Node
                : mote_cmd->parsed()   ? Role::Mote
                : ledger_cmd->parsed() ? Role::Ledger
                                       : Role::Operator;
    if (config_path.empty()) throw Error(ErrorCode::ConfigInvalid, "--config is required");
    auto config = load_process_config(config_path, role);
    if (!log_level.empty()) config.log_level = parse_log_level(log_level);
    auto log = make_logger(config.log_level);
    switch (role) {
      case Role::Node: return run_node_process(config, log);
      case Role::Mote: return run_mote_process(config, log);
      case Role::Ledger: return run_ledger_process(config, log);
      default: return run_operator_process(config, log);
    }
  } catch (const Error& e) {
    return report_error(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
