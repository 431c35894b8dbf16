#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ambox/time.hpp"

namespace ambox {

/// Byte-exact canonical form: sorted keys, no whitespace, UTF-8.
/// This is the input to every signature and hash in the system.
std::string canonical_json(const nlohmann::json& value);

enum class DeviceKind { Node, Mote };

struct DeviceIdentity {
  std::string device_id;
  DeviceKind kind = DeviceKind::Node;
  std::string public_key;  // PEM (SubjectPublicKeyInfo)

  bool operator==(const DeviceIdentity&) const = default;
};

enum class QuantityKind { Temperature, Humidity, Pressure, Custom };

/// The three built-in quantities plus config-declared custom ones that
/// carry their own unit string.
struct Quantity {
  QuantityKind kind = QuantityKind::Temperature;
  std::string custom_name;
  std::string custom_unit;

  static Quantity temperature() { return {QuantityKind::Temperature, {}, {}}; }
  static Quantity humidity() { return {QuantityKind::Humidity, {}, {}}; }
  static Quantity pressure() { return {QuantityKind::Pressure, {}, {}}; }
  static Quantity custom(std::string name, std::string unit) {
    return {QuantityKind::Custom, std::move(name), std::move(unit)};
  }
  /// "temperature" | "humidity" | "pressure" are built in; anything else
  /// needs a unit.
  static Quantity from_name(const std::string& name, const std::string& unit = {});

  std::string name() const;
  std::string unit() const;

  bool operator==(const Quantity&) const = default;
  auto operator<=>(const Quantity& o) const { return name() <=> o.name(); }
};

/// Mote signature over the canonical bytes of a reading without this field.
struct Attestation {
  std::string signer;
  std::string signature_b64;

  bool operator==(const Attestation&) const = default;
};

struct SensorReading {
  Quantity quantity;
  double value = 0.0;
  Timestamp sampled_at{};
  std::string source_device;
  std::optional<Attestation> attestation;

  bool operator==(const SensorReading&) const = default;
};

/// (source, quantity, sampled_at): identifies a reading for deduplication.
std::string reading_key(const SensorReading& r);

struct EventReport {
  std::string report_id;
  std::string device_id;
  std::string product_id;
  std::string batch_no;
  Timestamp created_at{};
  std::vector<SensorReading> readings;

  bool operator==(const EventReport&) const = default;
};

enum class NodeState { Idle, Heartbeat, Monitoring };

std::string to_string(NodeState s);
NodeState node_state_from_string(const std::string& s);

struct SensorParam {
  bool enabled = true;
  std::optional<double> threshold_low;
  std::optional<double> threshold_high;

  bool operator==(const SensorParam&) const = default;
};

struct MonitoringJob {
  std::string product_id;
  std::string batch_no;
  Duration sample_interval{60'000};
  Duration report_interval{300'000};
  std::map<std::string, SensorParam> sensor_params;  // quantity name -> params

  bool operator==(const MonitoringJob&) const = default;
};

/// Throws Error(InvalidArgument) unless 0 < sample_interval <= report_interval.
void check_job(const MonitoringJob& job);

struct DeviceState {
  NodeState state = NodeState::Idle;
  Timestamp since{};
  std::optional<MonitoringJob> job;  // present iff state == Monitoring

  bool operator==(const DeviceState&) const = default;
};

struct HeartbeatMessage {
  std::string device_id;
  NodeState state = NodeState::Idle;
  Timestamp sent_at{};
  std::uint64_t sequence = 0;
  bool healthy = true;
  bool alarm = false;  // storage-full
  Duration timeout{30'000};

  bool operator==(const HeartbeatMessage&) const = default;
};

/// Names every violated EventReport invariant; empty means valid.
std::vector<std::string> validate_report(const EventReport& r);

/// True exactly for Idle->Heartbeat, Heartbeat->Monitoring,
/// Monitoring->Heartbeat and Heartbeat->Idle.
bool legal_transition(NodeState from, NodeState to);

/// `<device_id>-<created_at millis>-<8 hex chars of sha256(device_id:counter)>`.
std::string make_report_id(const std::string& device_id, Timestamp created_at, std::uint64_t counter);

// JSON mappings (nlohmann ADL hooks).
void to_json(nlohmann::json& j, const DeviceIdentity& v);
void from_json(const nlohmann::json& j, DeviceIdentity& v);
void to_json(nlohmann::json& j, const SensorReading& v);
void from_json(const nlohmann::json& j, SensorReading& v);
void to_json(nlohmann::json& j, const EventReport& v);
void from_json(const nlohmann::json& j, EventReport& v);
void to_json(nlohmann::json& j, const SensorParam& v);
void from_json(const nlohmann::json& j, SensorParam& v);
void to_json(nlohmann::json& j, const MonitoringJob& v);
void from_json(const nlohmann::json& j, MonitoringJob& v);
void to_json(nlohmann::json& j, const DeviceState& v);
void from_json(const nlohmann::json& j, DeviceState& v);
void to_json(nlohmann::json& j, const HeartbeatMessage& v);
void from_json(const nlohmann::json& j, HeartbeatMessage& v);

std::string to_string(DeviceKind k);

}  // namespace ambox
