#include "ambox/operator.hpp"

#include "ambox/error.hpp"

namespace ambox {

using json = nlohmann::json;

json to_json_value(const FleetEntry& e) {
  return {{"device_id", e.device_id},
          {"last_heartbeat_at", format_rfc3339(e.last_heartbeat_at)},
          {"state", to_string(e.reported_state)},
          {"healthy", e.healthy},
          {"alarm", e.alarm},
          {"timeout_ms", e.timeout.count()},
          {"last_sequence", e.last_sequence},
          {"heartbeats", e.heartbeats},
          {"max_gap_ms", e.max_gap.count()},
          {"late_arrivals", e.late_arrivals},
          {"missed_deadline", e.missed_deadline}};
}

bool FleetView::ingest(const HeartbeatMessage& h, Timestamp received_at) {
  std::lock_guard lock(mu_);
  auto [it, fresh] = entries_.try_emplace(h.device_id);
  auto& e = it->second;
  if (!fresh && h.sequence <= e.last_sequence) return false;
  if (fresh) {
    e.device_id = h.device_id;
  } else {
    auto gap = received_at - e.last_heartbeat_at;
    if (gap > e.max_gap) e.max_gap = gap;
    if (gap > e.timeout) ++e.late_arrivals;
  }
  e.last_heartbeat_at = received_at;
  e.reported_state = h.state;
  e.healthy = h.healthy;
  e.alarm = h.alarm;
  e.timeout = h.timeout;
  e.last_sequence = h.sequence;
  ++e.heartbeats;
  log_.push_back({received_at, h});
  return true;
}

bool FleetView::ingest_json(const std::string& body, Timestamp received_at) {
  HeartbeatMessage h;
  try {
    h = json::parse(body).get<HeartbeatMessage>();
  } catch (const std::exception& e) {
    throw Error(ErrorCode::MalformedMessage, std::string("heartbeat: ") + e.what());
  }
  if (h.device_id.empty()) throw Error(ErrorCode::MalformedMessage, "heartbeat without device_id");
  return ingest(h, received_at);
}

std::vector<FleetEntry> FleetView::view(Timestamp now) const {
  std::lock_guard lock(mu_);
  std::vector<FleetEntry> out;
  for (const auto& [id, e] : entries_) {
    auto copy = e;
    copy.missed_deadline = now - e.last_heartbeat_at > e.timeout;
    out.push_back(std::move(copy));
  }
  return out;
}

std::optional<FleetEntry> FleetView::entry(const std::string& device_id, Timestamp now) const {
  for (auto& e : view(now))
    if (e.device_id == device_id) return e;
  return std::nullopt;
}

FleetView FleetView::rebuild(const std::vector<LogItem>& log) {
  FleetView v;
  for (const auto& item : log) v.ingest(item.message, item.received_at);
  return v;
}

// --- LedgerAdmin --------------------------------------------------------------------

json LedgerAdmin::request(const json& req) {
  auto body = call_(canonical_json(req));
  try {
    return json::parse(body);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::LedgerUnreachable, std::string("unparseable ledger response: ") + e.what());
  }
}

LedgerAdmin::Registration LedgerAdmin::register_device(const DeviceIdentity& identity) {
  auto resp = request({{"op", "RegisterDevice"}, {"identity", identity}});
  if (resp.value("ok", false)) return Registration::Registered;
  auto code = resp.value("error", std::string());
  if (code == "already-registered") {
    if (resp.value("same_key", false)) return Registration::AlreadyRegisteredSameKey;
    throw Error(ErrorCode::AlreadyRegistered, identity.device_id + " is registered with a different key");
  }
  if (code == "malformed-key") throw Error(ErrorCode::MalformedKey, resp.value("detail", std::string()));
  throw Error(ErrorCode::LedgerUnreachable, "ledger refused registration: " + code);
}

std::vector<EventReport> LedgerAdmin::recent(const std::string& device_id, std::size_t limit) {
  auto resp = request({{"op", "GetRecent"}, {"device_id", device_id}, {"limit", limit}});
  if (!resp.value("ok", false)) throw Error(ErrorCode::LedgerUnreachable, resp.value("error", std::string("GetRecent failed")));
  std::vector<EventReport> out;
  for (const auto& r : resp.at("reports")) out.push_back(r.get<EventReport>());
  return out;
}

json LedgerAdmin::blocks(std::uint64_t from, std::size_t limit) {
  return request({{"op", "GetBlocks"}, {"from", from}, {"limit", limit}});
}

json LedgerAdmin::verify_chain() { return request({{"op", "VerifyChain"}}); }

// --- lifecycle ------------------------------------------------------------------------------

CommissionOutcome commission(DeviceControl& device, LedgerAdmin& ledger, const CommissionPlan& plan) {
  auto st = device.status();
  CommissionOutcome out;
  out.device_id = st.at("device_id").get<std::string>();
  auto state = node_state_from_string(st.at("state").get<std::string>());
  if (state == NodeState::Monitoring)
    throw Error(ErrorCode::DeviceIllegalState, out.device_id + " is Monitoring; decommission it first");

  DeviceIdentity identity{out.device_id, DeviceKind::Node, st.at("public_key").get<std::string>()};
  out.newly_registered = ledger.register_device(identity) == LedgerAdmin::Registration::Registered;

  device.config_heartbeat(plan.heartbeat_ip, plan.heartbeat_port, plan.heartbeat_timeout);
  device.config_blockchain(plan.ledger_ip, plan.ledger_port, plan.channel, plan.chaincode);
  if (state == NodeState::Idle) {
    device.init();
    out.initialized = true;
  }
  out.final_state = node_state_from_string(device.status().at("state").get<std::string>());
  return out;
}

DecommissionOutcome decommission(DeviceControl& device, LedgerAdmin& ledger, Duration timeout,
                                 const std::function<void(Duration)>& sleep, Duration poll) {
  DecommissionOutcome out;
  auto st = device.status();
  auto device_id = st.at("device_id").get<std::string>();
  auto state = node_state_from_string(st.at("state").get<std::string>());
  if (state == NodeState::Idle) throw Error(ErrorCode::DeviceIllegalState, device_id + " is Idle");
  if (state == NodeState::Monitoring) {
    device.stop_monitoring();
    out.stopped_monitoring = true;
  }
  for (;;) {
    st = device.status();
    bool empty = st.value("buffer_depth", 1) == 0 && st.value("readings_pending", 1) == 0;
    if (empty) {
      try {
        auto latest = ledger.recent(device_id, 1);
        if (!latest.empty()) out.latest_report_id = latest.front().report_id;
        out.drained = true;
        return out;
      } catch (const Error&) {
        // ledger momentarily unreachable: keep polling
      }
    }
    if (out.waited >= timeout) return out;
    sleep(poll);
    out.waited += poll;
  }
}

}  // namespace ambox
