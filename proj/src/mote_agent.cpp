#include "ambox/mote_agent.hpp"

#include <cmath>

#include "ambox/config_store.hpp"
#include "ambox/error.hpp"

namespace ambox {

using json = nlohmann::json;

MoteConfig mote_config_from_json(const json& j) {
  MoteConfig c;
  try {
    c.monitoring = j.at("monitoring").get<bool>();
    if (c.monitoring) {
      c.since = from_millis(j.at("since_ms").get<std::int64_t>());
      c.sample_interval = Duration{j.at("sample_interval_ms").get<std::int64_t>()};
      if (j.contains("sensor_params"))
        for (const auto& [name, p] : j.at("sensor_params").items()) c.sensor_params[name] = p.get<SensorParam>();
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("mote config: ") + e.what());
  }
  if (c.monitoring && c.sample_interval <= Duration::zero())
    throw Error(ErrorCode::InvalidArgument, "sample interval must be positive");
  return c;
}

json mote_config_to_json(const MoteConfig& c) {
  json j = {{"monitoring", c.monitoring}};
  if (c.monitoring) {
    j["since_ms"] = to_millis(c.since);
    j["sample_interval_ms"] = c.sample_interval.count();
    json params = json::object();
    for (const auto& [name, p] : c.sensor_params) params[name] = p;
    j["sensor_params"] = params;
  }
  return j;
}

MoteAgent::MoteAgent(MoteOptions options, Scheduler& sched, ShortRangeBackend& short_range, KeyPair key,
                     std::vector<std::unique_ptr<SensorDriver>> sensors, Logger& log)
    : options_(std::move(options)),
      sched_(sched),
      short_range_(short_range),
      key_(std::move(key)),
      sensors_(std::move(sensors)),
      log_(log),
      config_path_(options_.data_dir / "mote_config.json"),
      buffer_({options_.data_dir, "buffer", options_.buffer_capacity, options_.sync}) {
  if (options_.device_id.empty()) throw Error(ErrorCode::ConfigInvalid, "mote needs a device_id");
  if (auto stored = load_versioned_json(config_path_)) {
    try {
      config_ = mote_config_from_json(*stored);
    } catch (const Error& e) {
      throw Error(ErrorCode::CorruptConfig, e.what());
    }
  }
  if (!buffer_.empty()) {
    for (const auto& e : buffer_.peek_batch(buffer_.size())) {
      auto r = attested_reading(e.envelope);
      auto& last = last_sampled_[r.quantity.name()];
      last = std::max(last, r.sampled_at);
    }
  }
  sample_timers_.resize(sensors_.size());

  auto token = lifetime_.token();
  PeripheralHandlers handlers;
  handlers.accept = [this, token](const std::string& central) {
    return Lifetime::alive(token) && central == options_.paired_node;
  };
  handlers.on_subscribe = [this, token](const std::string& characteristic) {
    if (!Lifetime::alive(token) || characteristic != "readings") return;
    subscribed_ = true;
    sent_.clear();
    stream_pending();
  };
  handlers.on_write = [this, token](const std::string& characteristic, const std::string& payload) {
    if (Lifetime::alive(token)) on_write(characteristic, payload);
  };
  handlers.on_disconnect = [this, token] {
    if (!Lifetime::alive(token)) return;
    subscribed_ = false;
    sent_.clear();
  };
  port_ = short_range_.advertise(identity(), std::move(handlers));
  start_sampling();
}

MoteAgent::~MoteAgent() {
  stop_sampling();
  short_range_.stop_advertising(options_.device_id);
}

void MoteAgent::apply_config(const MoteConfig& c) {
  save_versioned_json(config_path_, mote_config_to_json(c), options_.sync);
  bool restart = !(c == config_);
  config_ = c;
  if (restart) {
    stop_sampling();
    start_sampling();
  }
  log_.info("mote", "config applied", mote_config_to_json(c));
}

void MoteAgent::on_write(const std::string& characteristic, const std::string& payload) {
  if (characteristic == "config") {
    try {
      apply_config(mote_config_from_json(json::parse(payload)));
    } catch (const std::exception& e) {
      ++counters_.config_rejected;
      log_.warn("mote", "config rejected", {{"error", e.what()}});
    }
    return;
  }
  if (characteristic == "ack") {
    std::uint64_t through = 0;
    try {
      through = json::parse(payload).at("sequence").get<std::uint64_t>();
    } catch (const std::exception&) {
      return;
    }
    std::vector<EntryId> ids;
    for (auto it = sent_.begin(); it != sent_.end();) {
      if (it->second <= through) {
        ids.push_back(it->first);
        it = sent_.erase(it);
      } else {
        ++it;
      }
    }
    if (!ids.empty()) {
      buffer_.ack(ids);
      counters_.acked += ids.size();
    }
  }
}

void MoteAgent::stream_pending() {
  if (!subscribed_ || !port_ || !port_->connected() || buffer_.empty()) return;
  for (const auto& e : buffer_.peek_batch(buffer_.size())) {
    if (sent_.count(e.id)) continue;
    auto seq = port_->notify("readings", canonical_json(json(e.envelope)));
    if (!seq) return;
    sent_[e.id] = *seq;
    ++counters_.notified;
  }
}

void MoteAgent::start_sampling() {
  if (!config_.monitoring) return;
  auto now = sched_.now();
  for (std::size_t i = 0; i < sensors_.size(); ++i) {
    const auto& q = sensors_[i]->spec().quantity;
    auto p = config_.sensor_params.find(q.name());
    if (p != config_.sensor_params.end() && !p->second.enabled) continue;
    Timestamp floor = now;
    auto last = last_sampled_.find(q.name());
    if (last != last_sampled_.end() && last->second >= floor) floor = last->second + Duration{1};
    Timestamp at = config_.since;
    if (floor > at) {
      auto k = (floor - config_.since + config_.sample_interval - Duration{1}) / config_.sample_interval;
      at = config_.since + k * config_.sample_interval;
    }
    schedule_sample(i, at);
  }
}

void MoteAgent::stop_sampling() {
  for (auto& t : sample_timers_) {
    if (t) sched_.cancel(*t);
    t.reset();
  }
}

void MoteAgent::schedule_sample(std::size_t sensor, Timestamp at) {
  auto token = lifetime_.token();
  sample_timers_[sensor] = sched_.schedule_at(at, [this, token, sensor, at] {
    if (!Lifetime::alive(token)) return;
    sample_timers_[sensor].reset();
    if (!config_.monitoring) return;
    schedule_sample(sensor, at + config_.sample_interval);
    sample(sensor, at);
  });
}

void MoteAgent::sample(std::size_t sensor, Timestamp at) {
  auto& driver = *sensors_[sensor];
  const auto& spec = driver.spec();
  auto value = driver.read(at);
  if (!value) {
    ++counters_.sensor_failures;
    return;
  }
  if (!std::isfinite(*value) || !spec.in_range(*value)) {
    ++counters_.out_of_range;
    return;
  }
  SensorReading r{spec.quantity, *value, at, options_.device_id, std::nullopt};
  try {
    buffer_.enqueue(sign_reading(key_, r), sched_.now());
  } catch (const Error& e) {
    if (e.code() != ErrorCode::StorageFull) throw;
    ++counters_.storage_full;
    return;
  }
  last_sampled_[spec.quantity.name()] = at;
  ++counters_.sampled;
  if (observer_) observer_(r);
  stream_pending();
}

}  // namespace ambox
