#include <doctest.h>

#include <fcntl.h>
#include <netinet/in.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <array>
#include <fstream>
#include <thread>

#include "ambox/error.hpp"
#include "ambox/http_api.hpp"
#include "ambox/ledger.hpp"
#include "ambox/net_tcp.hpp"
#include "ambox/process.hpp"
#include "test_util.hpp"

using namespace ambox;
using nlohmann::json;

namespace {

std::uint16_t free_port() {
  int fd = listen_tcp("127.0.0.1", 0);
  auto port = local_port(fd);
  ::close(fd);
  return port;
}

std::filesystem::path write_config(const test::TempDir& d, const std::string& name, const json& j) {
  auto p = d / (name + ".json");
  std::ofstream(p) << j.dump(2);
  return p;
}

struct Child {
  pid_t pid = -1;

  explicit Child(std::vector<std::string> args) {
    args.insert(args.begin(), AMBOX_BIN);
    pid = ::fork();
    REQUIRE(pid >= 0);
    if (pid == 0) {
      std::vector<char*> argv;
      for (auto& a : args) argv.push_back(a.data());
      argv.push_back(nullptr);
      int devnull = ::open("/dev/null", O_WRONLY);
      ::dup2(devnull, 2);
      ::execv(AMBOX_BIN, argv.data());
      ::_exit(127);
    }
  }
  ~Child() {
    if (pid > 0) {
      ::kill(pid, SIGKILL);
      ::waitpid(pid, nullptr, 0);
    }
  }

  // Exit status, or -1 on timeout.
  int wait(std::chrono::milliseconds limit = std::chrono::seconds(20)) {
    auto deadline = std::chrono::steady_clock::now() + limit;
    while (std::chrono::steady_clock::now() < deadline) {
      int st = 0;
      if (::waitpid(pid, &st, WNOHANG) == pid) {
        pid = -1;
        return WIFEXITED(st) ? WEXITSTATUS(st) : 128 + WTERMSIG(st);
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(20));
    }
    return -1;
  }
  int terminate() {
    ::kill(pid, SIGTERM);
    return wait();
  }
};

int run_cli(const std::string& args, std::string* out = nullptr) {
  std::string cmd = std::string(AMBOX_BIN) + " " + args + " 2>/dev/null";
  FILE* p = ::popen(cmd.c_str(), "r");
  REQUIRE(p);
  std::array<char, 4096> buf{};
  std::string text;
  while (auto n = std::fread(buf.data(), 1, buf.size(), p)) text.append(buf.data(), n);
  int st = ::pclose(p);
  if (out) *out = text;
  return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}

template <class F>
bool eventually(F&& f, std::chrono::milliseconds limit = std::chrono::seconds(15)) {
  auto deadline = std::chrono::steady_clock::now() + limit;
  while (std::chrono::steady_clock::now() < deadline) {
    try {
      if (f()) return true;
    } catch (const std::exception&) {
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
  }
  return false;
}

}  // namespace

TEST_CASE("process config validation") {
  auto base = json{{"role", "ledger"}, {"data_dir", "/tmp/x"}, {"listen", "127.0.0.1:1"}};
  CHECK(process_config_from_json(base, Role::Ledger).listen == "127.0.0.1:1");
  auto code = [&](json j, Role r) {
    try {
      process_config_from_json(j, r);
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::IoFailure;
  };
  CHECK(code(base, Role::Node) == ErrorCode::ConfigInvalid);
  auto j = base;
  j["clock"] = "virtual";
  CHECK(code(j, Role::Ledger) == ErrorCode::ConfigInvalid);
  j = base;
  j.erase("data_dir");
  CHECK(code(j, Role::Ledger) == ErrorCode::ConfigInvalid);
  CHECK(exit_code_for(ErrorCode::ConfigInvalid) == 2);
  CHECK(exit_code_for(ErrorCode::PortInUse) == 3);
  CHECK(exit_code_for(ErrorCode::DataDirUnwritable) == 4);
  CHECK(exit_code_for(ErrorCode::IoFailure) == 1);
}

TEST_CASE("ledger process: serves, refuses a taken port, exits cleanly on SIGTERM") {
  test::TempDir d("proc-ledger");
  auto port = free_port();
  auto cfg = write_config(d, "ledger", {{"role", "ledger"}, {"data_dir", (d / "ledger").string()},
                                        {"listen", "127.0.0.1:" + std::to_string(port)}});
  Child ledger({"ledger", "--config", cfg.string()});
  Endpoint ep{"127.0.0.1", port, ""};
  REQUIRE(eventually([&] { return json::parse(framed_call(ep, R"({"op":"Echo","seq":1})", Duration{1'000}))["ok"] == true; }));
  auto key = KeyPair::derive("node-1", "proc");
  CHECK(json::parse(framed_call(ep, make_register_request(key.identity(DeviceKind::Node)), Duration{2'000}))["ok"] == true);

  Child second({"ledger", "--config", cfg.string()});
  CHECK(second.wait() == 3);

  CHECK(ledger.terminate() == 0);
  CHECK_FALSE(verify_block_log(d / "ledger" / "blocks.log").has_value());
  // restart keeps the registration
  Child again({"ledger", "--config", cfg.string()});
  REQUIRE(eventually([&] {
    auto r = json::parse(framed_call(ep, make_register_request(key.identity(DeviceKind::Node)), Duration{1'000}));
    return r["error"] == "already-registered" && r["same_key"] == true;
  }));
}

TEST_CASE("startup failures map to exit codes") {
  test::TempDir d("proc-codes");
  auto port = std::to_string(free_port());
  auto virt = write_config(d, "virt", {{"role", "ledger"}, {"data_dir", (d / "l").string()},
                                       {"listen", "127.0.0.1:" + port}, {"clock", "virtual"}});
  CHECK(run_cli("ledger --config " + virt.string()) == 2);
  auto wrong = write_config(d, "wrong", {{"role", "node"}, {"data_dir", (d / "l").string()}, {"listen", "127.0.0.1:" + port}});
  CHECK(run_cli("ledger --config " + wrong.string()) == 2);
  CHECK(run_cli("ledger --config " + (d / "missing.json").string()) == 2);
  auto ro = write_config(d, "ro", {{"role", "ledger"}, {"data_dir", "/proc/ambox-cannot-write"}, {"listen", "127.0.0.1:" + port}});
  CHECK(run_cli("ledger --config " + ro.string()) == 4);
}

TEST_CASE("node process: commission over the CLI, restart resumes monitoring") {
  test::TempDir d("proc-node");
  auto ledger_port = free_port();
  auto op_port = free_port();
  auto node_port = free_port();
  auto at = [](std::uint16_t p) { return "127.0.0.1:" + std::to_string(p); };
  auto lcfg = write_config(d, "ledger", {{"role", "ledger"}, {"data_dir", (d / "ledger").string()}, {"listen", at(ledger_port)}});
  auto ocfg = write_config(d, "operator", {{"role", "operator"}, {"data_dir", (d / "op").string()}, {"listen", at(op_port)}});
  auto ncfg = write_config(d, "node", {{"role", "node"}, {"data_dir", (d / "node").string()}, {"listen", at(node_port)},
                                       {"device_id", "node-7"}});
  Child ledger({"ledger", "--config", lcfg.string()});
  Child op({"operator", "--config", ocfg.string()});
  auto node = std::make_unique<Child>(std::vector<std::string>{"node", "--config", ncfg.string()});
  HttpDeviceControl dev({"127.0.0.1", node_port, ""}, Duration{1'000});
  REQUIRE(eventually([&] { return dev.status()["state"] == "Idle"; }));
  REQUIRE(eventually([&] { return json::parse(framed_call({"127.0.0.1", ledger_port, ""}, R"({"op":"Echo"})", Duration{500}))["ok"] == true; }));

  std::string out;
  CHECK(run_cli("operator commission --device " + at(node_port) + " --ledger " + at(ledger_port) + " --heartbeat " +
                    at(op_port) + " --timeout 3s",
                &out) == 0);
  CHECK(dev.status()["state"] == "Heartbeat");
  CHECK(run_cli("operator start --device " + at(node_port) +
                " --prod-id vaccine --batch-no B-9 --sample-interval 200ms --report-interval 1s") == 0);
  auto before = dev.status();
  CHECK(before["state"] == "Monitoring");
  CHECK(run_cli("operator start --device " + at(node_port) + " --prod-id x --batch-no y") != 0);

  std::this_thread::sleep_for(std::chrono::milliseconds(1'500));
  CHECK(node->terminate() == 0);
  node = std::make_unique<Child>(std::vector<std::string>{"node", "--config", ncfg.string()});
  REQUIRE(eventually([&] { return dev.status()["state"] == "Monitoring"; }));
  auto after = dev.status();
  CHECK(after["job"] == before["job"]);
  CHECK(after["since"] == before["since"]);

  CHECK(eventually([&] {
    std::string fleet;
    run_cli("operator fleet --operator " + at(op_port), &fleet);
    return fleet.find("node-7") != std::string::npos;
  }));
  CHECK(run_cli("operator decommission --device " + at(node_port) + " --ledger " + at(ledger_port) + " --timeout 20s") == 0);
  std::string tail;
  CHECK(run_cli("operator tail-ledger --ledger " + at(ledger_port) + " --device node-7 --limit 3", &tail) == 0);
  CHECK(tail.find("node-7") != std::string::npos);
  CHECK(dev.status()["buffer_depth"] == 0);
}
