#include "ambox/config_store.hpp"

#include "ambox/error.hpp"
#include "ambox/fs_util.hpp"

namespace ambox {

using nlohmann::json;

namespace {
constexpr int kSchemaVersion = 1;
}

void to_json(json& j, const HeartbeatTarget& v) {
  j = json{{"ipaddr", v.ipaddr}, {"port", v.port}, {"heartbeat_timeout_ms", v.timeout.count()}};
}

void from_json(const json& j, HeartbeatTarget& v) {
  v.ipaddr = j.at("ipaddr").get<std::string>();
  v.port = j.at("port").get<std::uint16_t>();
  v.timeout = Duration{j.at("heartbeat_timeout_ms").get<std::int64_t>()};
}

void to_json(json& j, const LedgerTarget& v) {
  j = json{{"ipaddr", v.ipaddr},
           {"port", v.port},
           {"channel_name", v.channel_name},
           {"chaincode_name", v.chaincode_name}};
}

void from_json(const json& j, LedgerTarget& v) {
  v.ipaddr = j.at("ipaddr").get<std::string>();
  v.port = j.at("port").get<std::uint16_t>();
  v.channel_name = j.at("channel_name").get<std::string>();
  v.chaincode_name = j.at("chaincode_name").get<std::string>();
}

void to_json(json& j, const PersistedConfig& v) {
  json transitions = json::array();
  for (const auto& t : v.transitions)
    transitions.push_back({{"from", to_string(t.from)}, {"to", to_string(t.to)}, {"at", format_rfc3339(t.at)}});
  j = json{{"device", v.device},
           {"heartbeat", v.heartbeat ? json(*v.heartbeat) : json(nullptr)},
           {"ledger", v.ledger ? json(*v.ledger) : json(nullptr)},
           {"heartbeat_sequence", v.heartbeat_sequence},
           {"report_counter", v.report_counter},
           {"last_job", v.last_job ? json(*v.last_job) : json(nullptr)},
           {"relay_watermarks", v.relay_watermarks},
           {"transitions", transitions}};
}

void from_json(const json& j, PersistedConfig& v) {
  v.device = j.at("device").get<DeviceState>();
  const auto& hb = j.at("heartbeat");
  v.heartbeat = hb.is_null() ? std::nullopt : std::optional(hb.get<HeartbeatTarget>());
  const auto& lt = j.at("ledger");
  v.ledger = lt.is_null() ? std::nullopt : std::optional(lt.get<LedgerTarget>());
  v.heartbeat_sequence = j.at("heartbeat_sequence").get<std::uint64_t>();
  v.report_counter = j.at("report_counter").get<std::uint64_t>();
  const auto& lj = j.at("last_job");
  v.last_job = lj.is_null() ? std::nullopt : std::optional(lj.get<MonitoringJob>());
  v.relay_watermarks = j.at("relay_watermarks").get<std::map<std::string, std::int64_t>>();
  v.transitions.clear();
  for (const auto& t : j.at("transitions")) {
    v.transitions.push_back({node_state_from_string(t.at("from").get<std::string>()),
                             node_state_from_string(t.at("to").get<std::string>()),
                             parse_rfc3339(t.at("at").get<std::string>())});
  }
}

void save_versioned_json(const std::filesystem::path& path, json body, bool sync) {
  nlohmann::ordered_json out;
  out["schema_version"] = kSchemaVersion;
  for (auto& [key, value] : body.items())
    if (key != "schema_version") out[key] = value;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  // No trailing newline: every strict prefix of the file is then invalid JSON.
  write_file_atomic(path, out.dump(2), sync);
}

std::optional<json> load_versioned_json(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) return std::nullopt;
  std::string text;
  try {
    text = read_file(path);
  } catch (const Error& e) {
    throw Error(ErrorCode::CorruptConfig, e.what());
  }
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::CorruptConfig, path.string() + ": " + e.what());
  }
  if (!j.is_object() || j.value("schema_version", 0) != kSchemaVersion)
    throw Error(ErrorCode::CorruptConfig, path.string() + ": missing or unsupported schema_version");
  return j;
}

void save_config(const std::filesystem::path& path, const PersistedConfig& c, bool sync) {
  save_versioned_json(path, json(c), sync);
}

PersistedConfig load_config(const std::filesystem::path& path) {
  auto j = load_versioned_json(path);
  if (!j) return PersistedConfig{};
  try {
    return j->get<PersistedConfig>();
  } catch (const std::exception& e) {
    throw Error(ErrorCode::CorruptConfig, path.string() + ": " + e.what());
  }
}

}  // namespace ambox
