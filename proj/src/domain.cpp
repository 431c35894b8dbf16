#include "ambox/domain.hpp"

#include <cmath>
#include <set>

#include "ambox/crypto.hpp"
#include "ambox/error.hpp"

namespace ambox {

using nlohmann::json;

std::string canonical_json(const json& value) {
  // nlohmann::json keeps object keys in a std::map, so dump() is already
  // lexicographically sorted; doubles are printed in shortest round-trip form.
  return value.dump(-1, ' ', false, json::error_handler_t::strict);
}

Quantity Quantity::from_name(const std::string& name, const std::string& unit) {
  if (name == "temperature") return temperature();
  if (name == "humidity") return humidity();
  if (name == "pressure") return pressure();
  if (name.empty()) throw Error(ErrorCode::InvalidArgument, "empty quantity name");
  if (unit.empty()) throw Error(ErrorCode::InvalidArgument, "custom quantity '" + name + "' needs a unit");
  return custom(name, unit);
}

std::string Quantity::name() const {
  switch (kind) {
    case QuantityKind::Temperature: return "temperature";
    case QuantityKind::Humidity: return "humidity";
    case QuantityKind::Pressure: return "pressure";
    case QuantityKind::Custom: return custom_name;
  }
  return custom_name;
}

std::string Quantity::unit() const {
  switch (kind) {
    case QuantityKind::Temperature: return "\xC2\xB0" "C";
    case QuantityKind::Humidity: return "%RH";
    case QuantityKind::Pressure: return "hPa";
    case QuantityKind::Custom: return custom_unit;
  }
  return custom_unit;
}

std::string reading_key(const SensorReading& r) {
  return r.source_device + "|" + r.quantity.name() + "|" + std::to_string(to_millis(r.sampled_at));
}

std::string to_string(NodeState s) {
  switch (s) {
    case NodeState::Idle: return "Idle";
    case NodeState::Heartbeat: return "Heartbeat";
    case NodeState::Monitoring: return "Monitoring";
  }
  return "Idle";
}

NodeState node_state_from_string(const std::string& s) {
  if (s == "Idle") return NodeState::Idle;
  if (s == "Heartbeat") return NodeState::Heartbeat;
  if (s == "Monitoring") return NodeState::Monitoring;
  throw Error(ErrorCode::ParseError, "unknown state '" + s + "'");
}

std::string to_string(DeviceKind k) { return k == DeviceKind::Node ? "Node" : "Mote"; }

void check_job(const MonitoringJob& job) {
  if (job.sample_interval <= Duration::zero())
    throw Error(ErrorCode::InvalidArgument, "sample_interval must be positive");
  if (job.report_interval < job.sample_interval)
    throw Error(ErrorCode::InvalidArgument, "report_interval must be >= sample_interval");
}

std::vector<std::string> validate_report(const EventReport& r) {
  std::vector<std::string> violations;
  if (r.report_id.empty()) violations.emplace_back("report_id non-empty");
  if (r.device_id.empty()) violations.emplace_back("device_id non-empty");
  if (r.readings.empty()) violations.emplace_back("readings non-empty");

  bool sorted = true;
  bool before_created = true;
  bool finite = true;
  bool per_series_increasing = true;
  std::map<std::string, Timestamp> last_in_series;
  for (std::size_t i = 0; i < r.readings.size(); ++i) {
    const auto& reading = r.readings[i];
    if (i > 0 && reading.sampled_at < r.readings[i - 1].sampled_at) sorted = false;
    if (reading.sampled_at > r.created_at) before_created = false;
    if (!std::isfinite(reading.value)) finite = false;
    auto series = reading.source_device + "|" + reading.quantity.name();
    auto it = last_in_series.find(series);
    if (it != last_in_series.end() && reading.sampled_at <= it->second) per_series_increasing = false;
    last_in_series[series] = reading.sampled_at;
  }
  if (!sorted) violations.emplace_back("readings sorted");
  if (!before_created) violations.emplace_back("readings sampled_at <= created_at");
  if (!finite) violations.emplace_back("reading values finite");
  if (!per_series_increasing) violations.emplace_back("sampled_at strictly increasing per source and quantity");
  return violations;
}

bool legal_transition(NodeState from, NodeState to) {
  using S = NodeState;
  return (from == S::Idle && to == S::Heartbeat) || (from == S::Heartbeat && to == S::Monitoring) ||
         (from == S::Monitoring && to == S::Heartbeat) || (from == S::Heartbeat && to == S::Idle);
}

std::string make_report_id(const std::string& device_id, Timestamp created_at, std::uint64_t counter) {
  auto digest = sha256_hex(device_id + ":" + std::to_string(counter));
  return device_id + "-" + std::to_string(to_millis(created_at)) + "-" + digest.substr(0, 8);
}

// --- JSON ----------------------------------------------------------------

void to_json(json& j, const DeviceIdentity& v) {
  j = json{{"device_id", v.device_id}, {"kind", to_string(v.kind)}, {"public_key", v.public_key}};
}

void from_json(const json& j, DeviceIdentity& v) {
  v.device_id = j.at("device_id").get<std::string>();
  auto kind = j.at("kind").get<std::string>();
  if (kind == "Node") v.kind = DeviceKind::Node;
  else if (kind == "Mote") v.kind = DeviceKind::Mote;
  else throw Error(ErrorCode::ParseError, "unknown device kind '" + kind + "'");
  v.public_key = j.at("public_key").get<std::string>();
}

void to_json(json& j, const SensorReading& v) {
  double value = v.value == 0.0 ? 0.0 : v.value;  // no "-0.0" in canonical bytes
  j = json{{"quantity", v.quantity.name()},
           {"unit", v.quantity.unit()},
           {"value", value},
           {"sampled_at", format_rfc3339(v.sampled_at)},
           {"source_device", v.source_device}};
  if (v.attestation)
    j["attestation"] = json{{"signer", v.attestation->signer}, {"signature_b64", v.attestation->signature_b64}};
}

void from_json(const json& j, SensorReading& v) {
  auto unit = j.at("unit").get<std::string>();
  v.quantity = Quantity::from_name(j.at("quantity").get<std::string>(), unit);
  if (v.quantity.unit() != unit) throw Error(ErrorCode::ParseError, "unit mismatch for " + v.quantity.name());
  v.value = j.at("value").get<double>();
  v.sampled_at = parse_rfc3339(j.at("sampled_at").get<std::string>());
  v.source_device = j.at("source_device").get<std::string>();
  if (j.contains("attestation")) {
    const auto& a = j.at("attestation");
    v.attestation = Attestation{a.at("signer").get<std::string>(), a.at("signature_b64").get<std::string>()};
  } else {
    v.attestation.reset();
  }
}

void to_json(json& j, const EventReport& v) {
  j = json{{"report_id", v.report_id},   {"device_id", v.device_id},
           {"product_id", v.product_id}, {"batch_no", v.batch_no},
           {"created_at", format_rfc3339(v.created_at)}, {"readings", v.readings}};
}

void from_json(const json& j, EventReport& v) {
  v.report_id = j.at("report_id").get<std::string>();
  v.device_id = j.at("device_id").get<std::string>();
  v.product_id = j.at("product_id").get<std::string>();
  v.batch_no = j.at("batch_no").get<std::string>();
  v.created_at = parse_rfc3339(j.at("created_at").get<std::string>());
  v.readings = j.at("readings").get<std::vector<SensorReading>>();
}

void to_json(json& j, const SensorParam& v) {
  j = json{{"enabled", v.enabled}};
  if (v.threshold_low) j["threshold_low"] = *v.threshold_low;
  if (v.threshold_high) j["threshold_high"] = *v.threshold_high;
}

void from_json(const json& j, SensorParam& v) {
  v.enabled = j.value("enabled", true);
  v.threshold_low = j.contains("threshold_low") ? std::optional(j.at("threshold_low").get<double>()) : std::nullopt;
  v.threshold_high =
      j.contains("threshold_high") ? std::optional(j.at("threshold_high").get<double>()) : std::nullopt;
}

void to_json(json& j, const MonitoringJob& v) {
  j = json{{"product_id", v.product_id},
           {"batch_no", v.batch_no},
           {"sample_interval_ms", v.sample_interval.count()},
           {"report_interval_ms", v.report_interval.count()},
           {"sensor_params", v.sensor_params}};
}

void from_json(const json& j, MonitoringJob& v) {
  v.product_id = j.at("product_id").get<std::string>();
  v.batch_no = j.at("batch_no").get<std::string>();
  v.sample_interval = Duration{j.at("sample_interval_ms").get<std::int64_t>()};
  v.report_interval = Duration{j.at("report_interval_ms").get<std::int64_t>()};
  v.sensor_params = j.value("sensor_params", std::map<std::string, SensorParam>{});
}

void to_json(json& j, const DeviceState& v) {
  j = json{{"state", to_string(v.state)}, {"since", format_rfc3339(v.since)}};
  j["job"] = v.job ? json(*v.job) : json(nullptr);
}

void from_json(const json& j, DeviceState& v) {
  v.state = node_state_from_string(j.at("state").get<std::string>());
  v.since = parse_rfc3339(j.at("since").get<std::string>());
  if (j.contains("job") && !j.at("job").is_null()) v.job = j.at("job").get<MonitoringJob>();
  else v.job.reset();
  if (v.job.has_value() != (v.state == NodeState::Monitoring))
    throw Error(ErrorCode::ParseError, "job must be present iff state is Monitoring");
}

void to_json(json& j, const HeartbeatMessage& v) {
  j = json{{"device_id", v.device_id},       {"state", to_string(v.state)},
           {"sent_at", format_rfc3339(v.sent_at)}, {"sequence", v.sequence},
           {"healthy", v.healthy},           {"alarm", v.alarm},
           {"timeout_ms", v.timeout.count()}};
}

void from_json(const json& j, HeartbeatMessage& v) {
  v.device_id = j.at("device_id").get<std::string>();
  v.state = node_state_from_string(j.at("state").get<std::string>());
  v.sent_at = parse_rfc3339(j.at("sent_at").get<std::string>());
  v.sequence = j.at("sequence").get<std::uint64_t>();
  v.healthy = j.value("healthy", true);
  v.alarm = j.value("alarm", false);
  v.timeout = Duration{j.value("timeout_ms", std::int64_t{30'000})};
}

}  // namespace ambox
