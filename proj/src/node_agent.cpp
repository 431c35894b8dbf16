#include "ambox/node_agent.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "ambox/error.hpp"
#include "ambox/mote_agent.hpp"

namespace ambox {

using json = nlohmann::json;

json to_json_value(const NodeCounters& c) {
  return {{"sampled", c.sampled},
          {"out_of_range", c.out_of_range},
          {"sensor_failures", c.sensor_failures},
          {"threshold_exceeded", c.threshold_exceeded},
          {"relayed", c.relayed},
          {"relay_duplicates", c.relay_duplicates},
          {"relay_rejected", c.relay_rejected},
          {"reports", c.reports},
          {"batches", c.batches},
          {"committed", c.committed},
          {"replayed", c.replayed},
          {"rejected", c.rejected},
          {"submit_failures", c.submit_failures},
          {"heartbeats_sent", c.heartbeats_sent},
          {"heartbeat_failures", c.heartbeat_failures},
          {"storage_full", c.storage_full}};
}

struct NodeAgent::MoteLink {
  PeripheralIdentity peer;
  std::optional<PublicKey> key;
  std::unique_ptr<Reconnector> reconnector;
  std::shared_ptr<Session> session;
};

namespace {

std::string series_key(const std::string& source, const Quantity& q) { return source + "|" + q.name(); }

// First t = since + k*step with t >= not_before and t > after.
Timestamp next_aligned(Timestamp since, Duration step, Timestamp not_before, std::optional<Timestamp> after) {
  Timestamp floor = not_before;
  if (after && *after >= floor) floor = *after + Duration{1};
  if (floor <= since) return since;
  auto k = (floor - since + step - Duration{1}) / step;
  return since + k * step;
}

}  // namespace

NodeAgent::NodeAgent(NodeOptions options, Scheduler& sched, ChannelFactory& channels, ShortRangeBackend* short_range,
                     KeyPair key, std::vector<std::unique_ptr<SensorDriver>> sensors, Logger& log, CrashHook crash)
    : options_(std::move(options)),
      sched_(sched),
      channels_(channels),
      short_range_(short_range),
      key_(std::move(key)),
      sensors_(std::move(sensors)),
      log_(log),
      crash_(std::move(crash)),
      config_path_(options_.data_dir / "config.json"),
      config_(load_config(config_path_)),
      buffer_({options_.data_dir, "buffer", options_.buffer_capacity, options_.sync}),
      readings_({options_.data_dir, "readings", options_.buffer_capacity, options_.sync}),
      rejected_({options_.data_dir, "rejected", options_.buffer_capacity, options_.sync}) {
  if (options_.device_id.empty()) throw Error(ErrorCode::ConfigInvalid, "node needs a device_id");
  if (key_.device_id() != options_.device_id)
    throw Error(ErrorCode::KeyUnavailable, "key belongs to " + key_.device_id());
  sample_timers_.resize(sensors_.size());
  recover();
  resume_activities();
}

NodeAgent::~NodeAgent() { stop_activities(); }

// --- persistence ---------------------------------------------------------------------

void NodeAgent::persist() { save_config(config_path_, config_, options_.sync); }

void NodeAgent::transition(NodeState to, std::optional<MonitoringJob> job) {
  auto from = config_.device.state;
  if (!legal_transition(from, to))
    throw Error(ErrorCode::IllegalState, "cannot go from " + to_string(from) + " to " + to_string(to));
  auto now = sched_.now();
  config_.device = DeviceState{to, now, job};
  if (job) config_.last_job = job;
  config_.transitions.push_back({from, to, now});
  if (config_.transitions.size() > kMaxTransitionLog)
    config_.transitions.erase(config_.transitions.begin(),
                              config_.transitions.end() - static_cast<std::ptrdiff_t>(kMaxTransitionLog));
  persist();
  log_.info("node", "state", {{"from", to_string(from)}, {"to", to_string(to)}});
}

void NodeAgent::recover() {
  // A report that reached the buffer owns its readings even if the crash
  // came before they were acknowledged in the readings journal.
  std::set<EntryId> consumed;
  if (!buffer_.empty()) {
    for (const auto& e : buffer_.peek_batch(buffer_.size()))
      if (e.meta.contains("readings"))
        for (const auto& id : e.meta["readings"]) consumed.insert(id.get<EntryId>());
  }
  if (!readings_.empty()) {
    std::vector<EntryId> stale;
    for (const auto& rec : readings_.peek_batch(readings_.size())) {
      if (consumed.count(rec.id)) {
        stale.push_back(rec.id);
        continue;
      }
      auto r = rec.record.get<SensorReading>();
      auto& wm = config_.relay_watermarks[series_key(r.source_device, r.quantity)];
      wm = std::max(wm, to_millis(r.sampled_at));
    }
    if (!stale.empty()) readings_.ack(stale);
  }
  if (config_.ledger) open_ledger_channel();
}

void NodeAgent::resume_activities() {
  auto st = config_.device.state;
  if (st == NodeState::Idle) return;
  start_heartbeats(true);
  start_motes();
  auto now = sched_.now();
  if (st == NodeState::Monitoring) {
    const auto& job = *config_.device.job;
    start_sampling();
    schedule_report(next_aligned(config_.device.since, job.report_interval, now + Duration{1}, std::nullopt));
  } else if (config_.last_job) {
    schedule_report(now + config_.last_job->report_interval);
  }
  drain_now();
}

void NodeAgent::stop_activities() {
  for (auto& t : sample_timers_) {
    if (t) sched_.cancel(*t);
    t.reset();
  }
  for (auto* t : {&heartbeat_timer_, &report_timer_, &retry_timer_}) {
    if (*t) sched_.cancel(**t);
    t->reset();
  }
  heartbeat_due_.reset();
  stop_motes();
}

// --- control API -----------------------------------------------------------------------

void NodeAgent::init() {
  if (state() != NodeState::Idle) throw Error(ErrorCode::IllegalState, "init requires Idle, node is " + to_string(state()));
  transition(NodeState::Heartbeat, std::nullopt);
  start_heartbeats(true);
  start_motes();
  drain_now();
}

void NodeAgent::config_heartbeat(const std::string& ipaddr, std::uint16_t port, Duration timeout) {
  if (ipaddr.empty()) throw Error(ErrorCode::InvalidArgument, "ipaddr must be non-empty");
  if (port == 0) throw Error(ErrorCode::InvalidArgument, "port must be 1..65535");
  if (timeout <= Duration::zero()) throw Error(ErrorCode::InvalidArgument, "heartbeat_timeout must be positive");
  if (timeout / 3 <= Duration::zero()) throw Error(ErrorCode::InvalidArgument, "heartbeat_timeout too small");
  config_.heartbeat = HeartbeatTarget{ipaddr, port, timeout};
  persist();
  heartbeat_channel_.reset();
  if (state() == NodeState::Idle) return;
  auto candidate = sched_.now() + timeout / 3;
  if (!heartbeat_due_ || candidate < *heartbeat_due_) schedule_heartbeat(candidate);
}

void NodeAgent::config_blockchain(const std::string& ipaddr, std::uint16_t port, const std::string& channel_name,
                                  const std::string& chaincode_name) {
  if (ipaddr.empty()) throw Error(ErrorCode::InvalidArgument, "ipaddr must be non-empty");
  if (port == 0) throw Error(ErrorCode::InvalidArgument, "port must be 1..65535");
  if (channel_name.empty()) throw Error(ErrorCode::InvalidArgument, "channel_name must be non-empty");
  if (chaincode_name.empty()) throw Error(ErrorCode::InvalidArgument, "chaincode_name must be non-empty");
  config_.ledger = LedgerTarget{ipaddr, port, channel_name, chaincode_name};
  persist();
  open_ledger_channel();
  drain_now();
}

void NodeAgent::start_monitoring(const MonitoringJob& job) {
  if (state() != NodeState::Heartbeat)
    throw Error(ErrorCode::IllegalState, "startMonitoring requires Heartbeat, node is " + to_string(state()));
  if (!config_.ledger) throw Error(ErrorCode::LedgerNotConfigured, "configBlockchain first");
  check_job(job);
  if (job.product_id.empty()) throw Error(ErrorCode::InvalidArgument, "prod_id must be non-empty");
  if (job.batch_no.empty()) throw Error(ErrorCode::InvalidArgument, "batch_no must be non-empty");
  transition(NodeState::Monitoring, job);
  if (report_timer_) sched_.cancel(*report_timer_);
  report_timer_.reset();
  push_mote_config();
  start_sampling();
  schedule_report(config_.device.since + job.report_interval);
}

void NodeAgent::stop_monitoring() {
  if (state() != NodeState::Monitoring)
    throw Error(ErrorCode::IllegalState, "stopMonitoring requires Monitoring, node is " + to_string(state()));
  for (auto& t : sample_timers_) {
    if (t) sched_.cancel(*t);
    t.reset();
  }
  cut_report();
  transition(NodeState::Heartbeat, std::nullopt);
  push_mote_config();
  if (report_timer_) sched_.cancel(*report_timer_);
  schedule_report(sched_.now() + config_.last_job->report_interval);
  drain_now();
}

void NodeAgent::turn_off() {
  if (state() != NodeState::Heartbeat)
    throw Error(ErrorCode::IllegalState, "turnOff requires Heartbeat, node is " + to_string(state()));
  if (!buffer_.empty() || !readings_.empty())
    throw Error(ErrorCode::BufferNotDrained, std::to_string(buffer_.size()) + " reports and " +
                                                 std::to_string(readings_.size()) + " readings not yet delivered");
  transition(NodeState::Idle, std::nullopt);
  stop_activities();
  if (power_off_) power_off_();
}

json NodeAgent::status() const {
  json j = {{"device_id", options_.device_id},
            {"state", to_string(state())},
            {"since", format_rfc3339(config_.device.since)},
            {"public_key", key_.public_key().pem()},
            {"buffer_depth", buffer_.size()},
            {"readings_pending", readings_.size()},
            {"healthy", healthy()},
            {"heartbeat_configured", config_.heartbeat.has_value()},
            {"ledger_configured", config_.ledger.has_value()}};
  j["job"] = config_.device.job ? json(*config_.device.job) : json();
  return j;
}

std::map<std::string, std::uint64_t> NodeAgent::mote_sessions() const {
  std::map<std::string, std::uint64_t> out;
  for (const auto& m : motes_) out[m->peer.device_id] = m->reconnector ? m->reconnector->sessions() : 0;
  return out;
}

std::map<std::string, std::uint64_t> NodeAgent::mote_retries() const {
  std::map<std::string, std::uint64_t> out;
  for (const auto& m : motes_) out[m->peer.device_id] = m->reconnector ? m->reconnector->retries() : 0;
  return out;
}

// --- heartbeats ---------------------------------------------------------------------------

void NodeAgent::start_heartbeats(bool send_now) {
  if (!config_.heartbeat) return;
  if (send_now) send_heartbeat();
  schedule_heartbeat(sched_.now() + config_.heartbeat->timeout / 3);
}

void NodeAgent::schedule_heartbeat(Timestamp at) {
  if (heartbeat_timer_) sched_.cancel(*heartbeat_timer_);
  heartbeat_due_ = at;
  auto token = lifetime_.token();
  heartbeat_timer_ = sched_.schedule_at(at, [this, token, at] {
    if (!Lifetime::alive(token)) return;
    heartbeat_timer_.reset();
    heartbeat_due_.reset();
    if (state() == NodeState::Idle || !config_.heartbeat) return;
    send_heartbeat();
    schedule_heartbeat(at + config_.heartbeat->timeout / 3);
  });
}

void NodeAgent::send_heartbeat() {
  if (state() == NodeState::Idle || !config_.heartbeat) return;
  ++config_.heartbeat_sequence;
  persist();
  HeartbeatMessage hb;
  hb.device_id = options_.device_id;
  hb.state = state();
  hb.sent_at = sched_.now();
  hb.sequence = config_.heartbeat_sequence;
  hb.healthy = healthy();
  hb.alarm = buffer_.full() || readings_.full();
  hb.timeout = config_.heartbeat->timeout;
  if (!heartbeat_channel_)
    heartbeat_channel_ = channels_.http_post(Endpoint{config_.heartbeat->ipaddr, config_.heartbeat->port, "/heartbeat"});
  ++counters_.heartbeats_sent;
  auto token = lifetime_.token();
  heartbeat_channel_->request(canonical_json(json(hb)), options_.heartbeat_send_timeout, [this, token](Response r) {
    if (!Lifetime::alive(token)) return;
    if (!r.ok()) {
      ++counters_.heartbeat_failures;
      log_.debug("node", "heartbeat failed", {{"error", std::string(to_string(*r.error))}});
    }
  });
}

// --- sampling ---------------------------------------------------------------------------------

void NodeAgent::start_sampling() {
  if (state() != NodeState::Monitoring) return;
  const auto& job = *config_.device.job;
  auto now = sched_.now();
  for (std::size_t i = 0; i < sensors_.size(); ++i) {
    const auto& q = sensors_[i]->spec().quantity;
    auto p = job.sensor_params.find(q.name());
    if (p != job.sensor_params.end() && !p->second.enabled) continue;
    std::optional<Timestamp> last;
    auto wm = config_.relay_watermarks.find(series_key(options_.device_id, q));
    if (wm != config_.relay_watermarks.end()) last = from_millis(wm->second);
    schedule_sample(i, next_aligned(config_.device.since, job.sample_interval, now, last));
  }
}

void NodeAgent::schedule_sample(std::size_t sensor, Timestamp at) {
  auto token = lifetime_.token();
  sample_timers_[sensor] = sched_.schedule_at(at, [this, token, sensor, at] {
    if (!Lifetime::alive(token)) return;
    sample_timers_[sensor].reset();
    if (state() != NodeState::Monitoring) return;
    schedule_sample(sensor, at + config_.device.job->sample_interval);
    sample(sensor, at);
  });
}

void NodeAgent::sample(std::size_t sensor, Timestamp at) {
  auto& driver = *sensors_[sensor];
  const auto& spec = driver.spec();
  auto value = driver.read(at);
  if (!value) {
    ++counters_.sensor_failures;
    log_.warn("node", "sensor read failed", {{"quantity", spec.quantity.name()}});
    return;
  }
  if (!std::isfinite(*value) || !spec.in_range(*value)) {
    ++counters_.out_of_range;
    log_.warn("node", "out-of-range reading dropped", {{"quantity", spec.quantity.name()}, {"value", *value}});
    return;
  }
  const auto& job = *config_.device.job;
  auto p = job.sensor_params.find(spec.quantity.name());
  if (p != job.sensor_params.end()) {
    const auto& sp = p->second;
    if ((sp.threshold_low && *value < *sp.threshold_low) || (sp.threshold_high && *value > *sp.threshold_high))
      ++counters_.threshold_exceeded;
  }
  SensorReading r{spec.quantity, *value, at, options_.device_id, std::nullopt};
  if (accept_reading(r)) ++counters_.sampled;
}

bool NodeAgent::accept_reading(const SensorReading& r) {
  auto key = series_key(r.source_device, r.quantity);
  auto it = config_.relay_watermarks.find(key);
  if (it != config_.relay_watermarks.end() && to_millis(r.sampled_at) <= it->second) return false;
  try {
    readings_.enqueue(json(r), sched_.now());
  } catch (const Error& e) {
    if (e.code() != ErrorCode::StorageFull) throw;
    ++counters_.storage_full;
    log_.error("node", "readings store full", {{"quantity", r.quantity.name()}});
    return false;
  }
  config_.relay_watermarks[key] = to_millis(r.sampled_at);
  if (reading_observer_) reading_observer_(r);
  return true;
}

// --- reports -----------------------------------------------------------------------------------

void NodeAgent::schedule_report(Timestamp at) {
  auto token = lifetime_.token();
  report_timer_ = sched_.schedule_at(at, [this, token, at] {
    if (!Lifetime::alive(token)) return;
    report_timer_.reset();
    if (state() == NodeState::Idle) return;
    cut_report();
    const auto* job = state() == NodeState::Monitoring ? &*config_.device.job
                                                       : (config_.last_job ? &*config_.last_job : nullptr);
    if (job) schedule_report(at + job->report_interval);
  });
}

void NodeAgent::cut_report() {
  const MonitoringJob* job = nullptr;
  if (state() == NodeState::Monitoring) job = &*config_.device.job;
  else if (config_.last_job) job = &*config_.last_job;
  if (!job || readings_.empty()) return;

  auto now = sched_.now();
  struct Item {
    EntryId id;
    SensorReading reading;
  };
  std::vector<Item> items;
  for (auto& rec : readings_.peek_batch(readings_.size())) {
    auto r = rec.record.get<SensorReading>();
    if (r.sampled_at <= now) items.push_back({rec.id, std::move(r)});
  }
  if (items.empty()) return;
  std::stable_sort(items.begin(), items.end(), [](const Item& a, const Item& b) {
    if (a.reading.sampled_at != b.reading.sampled_at) return a.reading.sampled_at < b.reading.sampled_at;
    if (a.reading.source_device != b.reading.source_device) return a.reading.source_device < b.reading.source_device;
    return a.reading.quantity.name() < b.reading.quantity.name();
  });

  EventReport report;
  report.device_id = options_.device_id;
  report.product_id = job->product_id;
  report.batch_no = job->batch_no;
  report.created_at = now;
  json ids = json::array();
  std::vector<EntryId> consumed;
  for (auto& it : items) {
    report.readings.push_back(it.reading);
    ids.push_back(it.id);
    consumed.push_back(it.id);
  }

  ++config_.report_counter;
  persist();
  report.report_id = make_report_id(options_.device_id, now, config_.report_counter);
  auto envelope = sign(key_, report);
  if (crash_) crash_("sign");
  try {
    buffer_.enqueue(envelope, now, {{"readings", ids}, {"report_id", report.report_id}});
  } catch (const Error& e) {
    if (e.code() != ErrorCode::StorageFull) throw;
    ++counters_.storage_full;
    log_.error("node", "buffer full; readings kept for a later report", {{"readings", items.size()}});
    return;
  }
  if (crash_) crash_("enqueue");
  persist();
  readings_.ack(consumed);
  ++counters_.reports;
  log_.info("node", "report buffered", {{"report_id", report.report_id}, {"readings", items.size()}});
  drain_now();
}

// --- submission -----------------------------------------------------------------------------------

void NodeAgent::open_ledger_channel() {
  if (!config_.ledger) return;
  ledger_channel_ = channels_.framed(Endpoint{config_.ledger->ipaddr, config_.ledger->port, {}});
}

void NodeAgent::drain_now() {
  if (draining_ || !ledger_channel_ || buffer_.empty()) return;
  if (retry_timer_) {
    sched_.cancel(*retry_timer_);
    retry_timer_.reset();
  }
  draining_ = true;
  auto batch = buffer_.peek_batch(std::min(buffer_.size(), options_.max_batch));
  std::vector<SignedEnvelope> envelopes;
  envelopes.reserve(batch.size());
  for (const auto& e : batch) envelopes.push_back(e.envelope);
  ++counters_.batches;
  auto body = make_add_events_request(envelopes, config_.ledger->channel_name, config_.ledger->chaincode_name);
  auto token = lifetime_.token();
  ledger_channel_->request(std::move(body), options_.submit_timeout,
                           [this, token, batch = std::move(batch)](Response r) {
                             if (!Lifetime::alive(token)) return;
                             draining_ = false;
                             on_submit_response(batch, r);
                           });
}

void NodeAgent::on_submit_response(const std::vector<BufferEntry>& batch, const Response& r) {
  if (!r.ok()) {
    submit_failed(batch, std::string(to_string(*r.error)));
    return;
  }
  std::vector<Verdict> verdicts;
  try {
    verdicts = parse_add_events_response(r.body);
  } catch (const Error& e) {
    submit_failed(batch, e.what());
    return;
  }
  if (verdicts.size() != batch.size()) {
    submit_failed(batch, "verdict count mismatch");
    return;
  }
  if (crash_) crash_("submit");

  std::vector<EntryId> done;
  std::vector<EntryId> kept;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& v = verdicts[i];
    if (v.committed) {
      done.push_back(batch[i].id);
      ++(v.replay ? counters_.replayed : counters_.committed);
      continue;
    }
    if (v.reason == RejectReason::UnknownSigner) {
      kept.push_back(batch[i].id);
      continue;
    }
    rejected_.enqueue({{"envelope", batch[i].envelope}, {"reason", to_string(*v.reason)}, {"report_id", v.report_id}},
                      sched_.now());
    done.push_back(batch[i].id);
    ++counters_.rejected;
    log_.warn("node", "ledger rejected report", {{"report_id", v.report_id}, {"reason", to_string(*v.reason)}});
  }
  if (!done.empty()) buffer_.ack(done);
  if (crash_) crash_("ack");
  consecutive_failures_ = 0;
  if (!kept.empty()) {
    buffer_.mark_failed(kept);
    log_.warn("node", "ledger does not know this device yet", {{"pending", kept.size()}});
    schedule_retry();
    return;
  }
  drain_now();
}

void NodeAgent::submit_failed(const std::vector<BufferEntry>& batch, const std::string& why) {
  std::vector<EntryId> ids;
  for (const auto& e : batch) ids.push_back(e.id);
  buffer_.mark_failed(ids);
  ++consecutive_failures_;
  ++counters_.submit_failures;
  log_.debug("node", "submission failed", {{"error", why}, {"batch", batch.size()}});
  schedule_retry();
}

void NodeAgent::schedule_retry() {
  if (retry_timer_) return;
  auto token = lifetime_.token();
  retry_timer_ = sched_.schedule_after(options_.retry_interval, [this, token] {
    if (!Lifetime::alive(token)) return;
    retry_timer_.reset();
    drain_now();
  });
}

// --- Motes -------------------------------------------------------------------------------------------

void NodeAgent::start_motes() {
  if (!short_range_ || options_.motes.empty() || !motes_.empty()) return;
  central_ = std::make_unique<Central>(options_.device_id, options_.motes, *short_range_);
  for (const auto& peer : options_.motes) {
    auto link = std::make_unique<MoteLink>();
    link->peer = peer;
    if (!peer.public_key.empty()) link->key = PublicKey::from_pem(peer.public_key);
    motes_.push_back(std::move(link));
  }
  auto token = lifetime_.token();
  for (auto& link : motes_) {
    auto* raw = link.get();
    raw->reconnector = auto_reconnect(sched_, *central_, raw->peer, options_.reconnect,
                                      [this, token, raw](std::shared_ptr<Session> s) {
                                        if (Lifetime::alive(token)) on_mote_session(*raw, std::move(s));
                                      });
  }
}

void NodeAgent::stop_motes() {
  for (auto& m : motes_)
    if (m->reconnector) m->reconnector->cancel();
  motes_.clear();
  central_.reset();
}

void NodeAgent::on_mote_session(MoteLink& link, std::shared_ptr<Session> session) {
  link.session = session;
  auto token = lifetime_.token();
  std::weak_ptr<Session> weak = session;
  log_.info("node", "mote connected", {{"mote", link.peer.device_id}});
  try {
    session->subscribe(kReadingsCharacteristic, [this, token, &link, weak](const StreamItem& item) {
      if (!Lifetime::alive(token)) return;
      auto s = weak.lock();
      if (!s) return;
      on_mote_item(link, *s, item);
    });
    session->write(kConfigCharacteristic, canonical_json(mote_config_json()));
  } catch (const Error& e) {
    log_.debug("node", "mote session ended early", {{"mote", link.peer.device_id}, {"error", e.what()}});
  }
}

void NodeAgent::on_mote_item(MoteLink& link, Session& session, const StreamItem& item) {
  if (item.disconnected) {
    if (link.session.get() == &session) link.session.reset();
    log_.info("node", "mote disconnected", {{"mote", link.peer.device_id}});
    return;
  }
  const auto& n = item.notification;
  bool accept = true;
  SensorReading reading;
  try {
    auto envelope = json::parse(n.payload).get<SignedEnvelope>();
    reading = attested_reading(envelope);
    if (envelope.signer != link.peer.device_id || reading.source_device != link.peer.device_id) accept = false;
    if (accept && link.key && !verify_attestation(*link.key, reading)) accept = false;
  } catch (const std::exception&) {
    accept = false;
  }
  if (!accept) {
    ++counters_.relay_rejected;
    log_.warn("node", "mote reading rejected", {{"mote", link.peer.device_id}, {"sequence", n.sequence}});
  } else if (accept_reading(reading)) {
    ++counters_.relayed;
  } else if (readings_.full()) {
    return;  // leave it on the Mote
  } else {
    ++counters_.relay_duplicates;
  }
  if (session.open()) session.write(kAckCharacteristic, canonical_json(json{{"sequence", n.sequence}}));
}

json NodeAgent::mote_config_json() const {
  MoteConfig c;
  c.monitoring = state() == NodeState::Monitoring;
  if (c.monitoring) {
    c.since = config_.device.since;
    c.sample_interval = config_.device.job->sample_interval;
    c.sensor_params = config_.device.job->sensor_params;
  }
  return mote_config_to_json(c);
}

void NodeAgent::push_mote_config() {
  auto body = canonical_json(mote_config_json());
  for (auto& m : motes_) {
    if (!m->session || !m->session->open()) continue;
    try {
      m->session->write(kConfigCharacteristic, body);
    } catch (const Error&) {
    }
  }
}

}  // namespace ambox
