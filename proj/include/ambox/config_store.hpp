#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ambox/domain.hpp"

namespace ambox {

struct HeartbeatTarget {
  std::string ipaddr;
  std::uint16_t port = 0;
  Duration timeout{30'000};

  bool operator==(const HeartbeatTarget&) const = default;
};

struct LedgerTarget {
  std::string ipaddr;
  std::uint16_t port = 0;
  std::string channel_name;
  std::string chaincode_name;

  bool operator==(const LedgerTarget&) const = default;
};

struct StateTransition {
  NodeState from = NodeState::Idle;
  NodeState to = NodeState::Idle;
  Timestamp at{};

  bool operator==(const StateTransition&) const = default;
};

/// Everything a Node needs to come back exactly where it was after a reboot.
struct PersistedConfig {
  DeviceState device;
  std::optional<HeartbeatTarget> heartbeat;
  std::optional<LedgerTarget> ledger;
  std::uint64_t heartbeat_sequence = 0;
  std::uint64_t report_counter = 0;
  /// Product/batch of the most recent job, used to label readings that
  /// arrive from Motes after monitoring stopped.
  std::optional<MonitoringJob> last_job;
  /// Highest sampled_at (ms) already accepted per "source|quantity"; drops
  /// Mote redeliveries.
  std::map<std::string, std::int64_t> relay_watermarks;
  std::vector<StateTransition> transitions;

  bool operator==(const PersistedConfig&) const = default;
};

inline constexpr std::size_t kMaxTransitionLog = 1000;

void to_json(nlohmann::json& j, const HeartbeatTarget& v);
void from_json(const nlohmann::json& j, HeartbeatTarget& v);
void to_json(nlohmann::json& j, const LedgerTarget& v);
void from_json(const nlohmann::json& j, LedgerTarget& v);
void to_json(nlohmann::json& j, const PersistedConfig& v);
void from_json(const nlohmann::json& j, PersistedConfig& v);

/// Pretty-printed, atomically replaced, leading schema_version field.
void save_config(const std::filesystem::path& path, const PersistedConfig& c, bool sync = true);
/// Missing file -> default (Idle, no targets). Anything unreadable or
/// incomplete -> Error(CorruptConfig); never silently defaulted.
PersistedConfig load_config(const std::filesystem::path& path);

/// Shared helpers for the other versioned JSON files (Mote config).
void save_versioned_json(const std::filesystem::path& path, nlohmann::json body, bool sync = true);
std::optional<nlohmann::json> load_versioned_json(const std::filesystem::path& path);

}  // namespace ambox
