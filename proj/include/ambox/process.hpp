#pragma once

#include <filesystem>
#include <functional>
#include <string>

#include <json.hpp>

#include "ambox/error.hpp"
#include "ambox/log.hpp"

namespace ambox {

enum class Role { Node, Mote, Ledger, Operator, Harness };

std::string to_string(Role r);

/// Role configuration file. Role-specific keys stay in `raw`.
///
///   {"role": "node", "data_dir": "...", "listen": "127.0.0.1:8080",
///    "clock": "wall", "log_level": "info", ...}
struct ProcessConfig {
  Role role = Role::Node;
  std::filesystem::path data_dir;
  std::string listen;
  std::string clock = "wall";
  LogLevel log_level = LogLevel::Info;
  nlohmann::json raw = nlohmann::json::object();
};

/// Reads and validates the file; AMBOX_DATA_DIR overrides data_dir.
/// Throws Error(ConfigInvalid).
ProcessConfig load_process_config(const std::filesystem::path& path, Role expected);
ProcessConfig process_config_from_json(const nlohmann::json& j, Role expected);

/// Creates the directory and proves it is writable. Throws
/// Error(DataDirUnwritable).
void ensure_data_dir(const std::filesystem::path& dir);

/// Process exit status for an error code (0 is success).
int exit_code_for(ErrorCode code);

/// Blocks SIGINT/SIGTERM in the calling thread (call before starting any
/// other thread) and later waits for one of them.
class TerminationSignals {
 public:
  TerminationSignals();
  /// Runs `on_signal` from a helper thread when a signal arrives.
  void notify(std::function<void(int)> on_signal);
  /// Blocks the calling thread until a signal arrives; returns it.
  int wait();
  ~TerminationSignals();

 private:
  struct Impl;
  Impl* impl_;
};

// Role entry points; each returns the process exit status.
int run_node_process(const ProcessConfig& config, Logger& log);
int run_mote_process(const ProcessConfig& config, Logger& log);
int run_ledger_process(const ProcessConfig& config, Logger& log);
int run_operator_process(const ProcessConfig& config, Logger& log);

}  // namespace ambox
