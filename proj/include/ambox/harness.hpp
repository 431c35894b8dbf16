#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>

#include "ambox/crypto.hpp"
#include "ambox/event_loop.hpp"
#include "ambox/log.hpp"
#include "ambox/operator.hpp"
#include "ambox/scenario.hpp"

namespace ambox {

class NodeAgent;

struct RunOptions {
  std::uint64_t seed = 1;
  bool real_time = false;               // wall clock instead of virtual time
  std::optional<double> time_scale;     // overrides the scenario's
  std::optional<std::filesystem::path> work_dir;  // kept after the run when given
  Logger* log = nullptr;
};

/// Runs a scenario on one shared clock with every device in process.
/// Throws Error(ScenarioInvalid); failed assertions are reported, not thrown.
ScenarioReport run_scenario(const Scenario& scenario, const RunOptions& options);

/// One RTT probe in its own small world.
LatencyStats run_rtt_probe(const RttProbeSpec& spec, std::uint64_t seed, bool real_time, double time_scale);

/// Deterministic per-(device, seed) key, cached for the process lifetime.
const KeyPair& harness_key(const std::string& device_id, std::uint64_t seed);

/// Calls straight into a NodeAgent (the harness's control plane).
class DirectDeviceControl final : public DeviceControl {
 public:
  explicit DirectDeviceControl(std::function<NodeAgent&()> node) : node_(std::move(node)) {}

  nlohmann::json status() override;
  void init() override;
  void config_heartbeat(const std::string& ipaddr, std::uint16_t port, Duration timeout) override;
  void config_blockchain(const std::string& ipaddr, std::uint16_t port, const std::string& channel,
                         const std::string& chaincode) override;
  void start_monitoring(const MonitoringJob& job) override;
  void stop_monitoring() override;
  void turn_off() override;

 private:
  template <class F>
  auto guarded(F&& f) -> decltype(f());

  std::function<NodeAgent&()> node_;
};

/// Applies one random field mutation to a signed report payload. The
/// result still parses as a valid report, so the only thing wrong with it
/// is the signature. Returns the name of the mutated field.
std::string mutate_report_payload(std::string& payload, std::uint64_t rng_seed);

}  // namespace ambox
