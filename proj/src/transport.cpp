#include "ambox/transport.hpp"

#include <algorithm>
#include <charconv>
#include <limits>

namespace ambox {

// --- FaultSchedule -------------------------------------------------------------

FaultSchedule::FaultSchedule(std::vector<FaultWindow> windows) : windows_(std::move(windows)) {
  std::stable_sort(windows_.begin(), windows_.end(), [](const FaultWindow& a, const FaultWindow& b) {
    return a.link != b.link ? a.link < b.link : a.start < b.start;
  });
  for (std::size_t i = 0; i < windows_.size(); ++i) {
    const auto& w = windows_[i];
    if (w.link.empty()) throw Error(ErrorCode::InvalidArgument, "fault window without link");
    if (w.end <= w.start) throw Error(ErrorCode::InvalidArgument, "fault window on " + w.link + " is empty");
    if (w.start < Duration::zero()) throw Error(ErrorCode::InvalidArgument, "fault window starts before scenario");
    if (w.mode == FaultMode::AddedLatency && w.latency < Duration::zero())
      throw Error(ErrorCode::InvalidArgument, "negative latency");
    if (i > 0 && windows_[i - 1].link == w.link && windows_[i - 1].end > w.start)
      throw Error(ErrorCode::InvalidArgument, "overlapping fault windows on " + w.link);
  }
}

bool FaultSchedule::is_down(const std::string& link, Duration offset) const {
  for (const auto& w : windows_)
    if (w.link == link && w.mode == FaultMode::Down && offset >= w.start && offset < w.end) return true;
  return false;
}

Duration FaultSchedule::latency(const std::string& link, Duration offset) const {
  for (const auto& w : windows_)
    if (w.link == link && w.mode == FaultMode::AddedLatency && offset >= w.start && offset < w.end) return w.latency;
  return Duration::zero();
}

std::vector<FaultWindow> FaultSchedule::windows_for(const std::string& link) const {
  std::vector<FaultWindow> out;
  for (const auto& w : windows_)
    if (w.link == link) out.push_back(w);
  return out;
}

FaultSchedule FaultSchedule::from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw Error(ErrorCode::InvalidArgument, "fault schedule must be a JSON list");
  std::vector<FaultWindow> windows;
  for (const auto& item : j) {
    FaultWindow w;
    try {
      w.link = item.at("link").get<std::string>();
      w.start = Duration{item.at("start_ms").get<std::int64_t>()};
      w.end = Duration{item.at("end_ms").get<std::int64_t>()};
      auto mode = item.at("mode").get<std::string>();
      if (mode == "down") {
        w.mode = FaultMode::Down;
      } else if (mode == "latency") {
        w.mode = FaultMode::AddedLatency;
        w.latency = Duration{item.at("latency_ms").get<std::int64_t>()};
      } else {
        throw Error(ErrorCode::InvalidArgument, "unknown fault mode '" + mode + "'");
      }
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::InvalidArgument, std::string("fault window: ") + e.what());
    }
    windows.push_back(std::move(w));
  }
  return FaultSchedule(std::move(windows));
}

nlohmann::json FaultSchedule::to_json() const {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& w : windows_) {
    nlohmann::json item = {{"link", w.link},
                           {"start_ms", w.start.count()},
                           {"end_ms", w.end.count()},
                           {"mode", w.mode == FaultMode::Down ? "down" : "latency"}};
    if (w.mode == FaultMode::AddedLatency) item["latency_ms"] = w.latency.count();
    out.push_back(std::move(item));
  }
  return out;
}

// --- endpoints and frames -------------------------------------------------------

Endpoint parse_endpoint(const std::string& text) {
  auto colon = text.rfind(':');
  if (colon == std::string::npos || colon == 0 || colon + 1 == text.size())
    throw Error(ErrorCode::InvalidArgument, "expected host:port, got '" + text + "'");
  Endpoint ep;
  ep.host = text.substr(0, colon);
  unsigned port = 0;
  auto tail = std::string_view(text).substr(colon + 1);
  auto [ptr, ec] = std::from_chars(tail.data(), tail.data() + tail.size(), port);
  if (ec != std::errc{} || ptr != tail.data() + tail.size() || port == 0 || port > 65535)
    throw Error(ErrorCode::InvalidArgument, "bad port in '" + text + "'");
  ep.port = static_cast<std::uint16_t>(port);
  return ep;
}

std::string encode_frame(std::string_view body) {
  auto n = static_cast<std::uint32_t>(body.size());
  std::string out;
  out.reserve(4 + body.size());
  out.push_back(static_cast<char>((n >> 24) & 0xFF));
  out.push_back(static_cast<char>((n >> 16) & 0xFF));
  out.push_back(static_cast<char>((n >> 8) & 0xFF));
  out.push_back(static_cast<char>(n & 0xFF));
  out.append(body);
  return out;
}

std::optional<std::string> take_frame(std::string& buffer, std::size_t max_frame) {
  if (buffer.size() < 4) return std::nullopt;
  std::uint32_t n = 0;
  for (int i = 0; i < 4; ++i) n = (n << 8) | static_cast<unsigned char>(buffer[static_cast<std::size_t>(i)]);
  if (n > max_frame) throw Error(ErrorCode::MalformedMessage, "frame of " + std::to_string(n) + " bytes");
  if (buffer.size() < 4 + static_cast<std::size_t>(n)) return std::nullopt;
  std::string body = buffer.substr(4, n);
  buffer.erase(0, 4 + static_cast<std::size_t>(n));
  return body;
}

// --- Central / Reconnector ---------------------------------------------------------

std::shared_ptr<Session> Central::connect(const PeripheralIdentity& peer) {
  auto allowed = std::any_of(allow_.begin(), allow_.end(), [&](const PeripheralIdentity& p) {
    return p.device_id == peer.device_id && p.address == peer.address;
  });
  if (!allowed) throw Error(ErrorCode::Unauthorized, peer.device_id + " is not in the allow-list of " + id_);
  return backend_.open_session(id_, peer);
}

Reconnector::Reconnector(Scheduler& sched, Central& central, PeripheralIdentity peer, ReconnectPolicy policy,
                         OnSession on_session)
    : sched_(sched), central_(central), peer_(std::move(peer)), policy_(policy), on_session_(std::move(on_session)) {
  attempt();
}

Reconnector::~Reconnector() { cancel(); }

void Reconnector::cancel() {
  cancelled_ = true;
  if (timer_) sched_.cancel(*timer_);
  timer_.reset();
  if (session_) {
    auto s = std::move(session_);
    s->close();
  }
}

void Reconnector::schedule_retry() {
  if (cancelled_) return;
  auto token = lifetime_.token();
  timer_ = sched_.schedule_after(policy_.interval, [this, token] {
    if (!Lifetime::alive(token)) return;
    timer_.reset();
    attempt();
  });
}

void Reconnector::attempt() {
  if (cancelled_) return;
  ++attempts_;
  std::shared_ptr<Session> session;
  try {
    session = central_.connect(peer_);
  } catch (const Error&) {
    schedule_retry();
    return;
  }
  ++sessions_;
  session_ = session;
  auto token = lifetime_.token();
  session->on_close([this, token, raw = session.get()] {
    if (!Lifetime::alive(token)) return;
    if (session_.get() != raw) return;
    session_.reset();
    schedule_retry();
  });
  if (on_session_) on_session_(session);
}

std::unique_ptr<Reconnector> auto_reconnect(Scheduler& sched, Central& central, const PeripheralIdentity& peer,
                                            ReconnectPolicy policy, Reconnector::OnSession on_session) {
  return std::make_unique<Reconnector>(sched, central, peer, policy, std::move(on_session));
}

// --- RTT -----------------------------------------------------------------------------

nlohmann::json to_json_value(const LatencyStats& s) {
  return {{"probe", s.probe},   {"requested", s.requested}, {"completed", s.completed}, {"avg_ms", s.avg_ms},
          {"min_ms", s.min_ms}, {"max_ms", s.max_ms},       {"aborted", s.aborted}};
}

LatencyStats rtt_benchmark(EventLoop& loop, RequestChannel& channel, std::size_t n, Duration timeout,
                           std::string probe) {
  if (n == 0) throw Error(ErrorCode::InvalidArgument, "rtt_benchmark needs n >= 1");
  LatencyStats stats;
  stats.probe = std::move(probe);
  stats.requested = n;
  std::int64_t total = 0;
  std::int64_t lo = std::numeric_limits<std::int64_t>::max();
  std::int64_t hi = 0;

  for (std::size_t i = 0; i < n && !stats.aborted; ++i) {
    bool done = false;
    Timestamp sent = loop.now();
    nlohmann::json req = {{"op", "Echo"}, {"seq", i}};
    channel.request(req.dump(), timeout, [&](Response r) {
      done = true;
      if (!r.ok()) {
        stats.aborted = true;
        return;
      }
      auto rtt = (loop.now() - sent).count();
      total += rtt;
      lo = std::min(lo, rtt);
      hi = std::max(hi, rtt);
      ++stats.completed;
    });
    while (!done) {
      if (loop.is_virtual()) {
        if (!loop.step()) break;
      } else {
        loop.run_until(loop.now() + Duration{5});
      }
    }
    if (!done) stats.aborted = true;
  }
  if (stats.completed > 0) {
    stats.avg_ms = static_cast<double>(total) / static_cast<double>(stats.completed);
    stats.min_ms = lo;
    stats.max_ms = hi;
  }
  return stats;
}

}  // namespace ambox
