#include "ambox/ledger.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <set>

#include "ambox/error.hpp"
#include "ambox/fs_util.hpp"

namespace ambox {

using json = nlohmann::json;

std::string to_string(RejectReason r) {
  switch (r) {
    case RejectReason::UnknownSigner: return "unknown-signer";
    case RejectReason::MalformedEnvelope: return "malformed-envelope";
    case RejectReason::SignatureInvalid: return "signature-invalid";
    case RejectReason::InvalidReport: return "invalid-report";
    case RejectReason::SignerMismatch: return "signer-mismatch";
  }
  return "unknown";
}

std::optional<RejectReason> reject_reason_from_string(const std::string& s) {
  for (auto r : {RejectReason::UnknownSigner, RejectReason::MalformedEnvelope, RejectReason::SignatureInvalid,
                 RejectReason::InvalidReport, RejectReason::SignerMismatch})
    if (to_string(r) == s) return r;
  return std::nullopt;
}

// --- blocks ------------------------------------------------------------------------

json block_to_json(const LedgerBlock& b) {
  json txs = json::array();
  for (const auto& e : b.transactions) txs.push_back(e);
  json regs = json::array();
  for (const auto& r : b.registrations) regs.push_back(r);
  return {{"height", b.height},
          {"prev_hash", b.prev_hash},
          {"committed_at", format_rfc3339(b.committed_at)},
          {"transactions", std::move(txs)},
          {"registrations", std::move(regs)}};
}

LedgerBlock block_from_json(const json& j) {
  LedgerBlock b;
  b.height = j.at("height").get<std::uint64_t>();
  b.prev_hash = j.at("prev_hash").get<std::string>();
  b.committed_at = parse_rfc3339(j.at("committed_at").get<std::string>());
  for (const auto& t : j.at("transactions")) b.transactions.push_back(t.get<SignedEnvelope>());
  for (const auto& r : j.at("registrations")) b.registrations.push_back(r.get<DeviceIdentity>());
  return b;
}

std::string block_hash(const LedgerBlock& b) { return sha256_hex(canonical_json(block_to_json(b))); }

std::string block_line(const LedgerBlock& b) {
  return canonical_json(json{{"block", block_to_json(b)}, {"hash", block_hash(b)}});
}

namespace {

// Parses and fully re-derives one stored line; nullopt on any mismatch.
std::optional<LedgerBlock> check_line(const std::string& line, std::uint64_t expected_height,
                                      const std::string& expected_prev) {
  try {
    auto j = json::parse(line);
    if (canonical_json(j) != line) return std::nullopt;
    auto b = block_from_json(j.at("block"));
    if (b.height != expected_height || b.prev_hash != expected_prev) return std::nullopt;
    if (canonical_json(block_to_json(b)) != canonical_json(j.at("block"))) return std::nullopt;
    if (j.at("hash").get<std::string>() != block_hash(b)) return std::nullopt;
    if (j.size() != 2) return std::nullopt;
    return b;
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

std::vector<std::string> split_lines(const std::string& text) {
  std::vector<std::string> lines;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string::npos) {
      lines.push_back(text.substr(pos));
      break;
    }
    lines.push_back(text.substr(pos, nl - pos));
    pos = nl + 1;
  }
  return lines;
}

}  // namespace

std::optional<std::uint64_t> verify_chain_lines(const std::vector<std::string>& lines) {
  std::string prev = kZeroHash;
  for (std::uint64_t h = 0; h < lines.size(); ++h) {
    auto b = check_line(lines[h], h, prev);
    if (!b) return h;
    prev = block_hash(*b);
  }
  return std::nullopt;
}

std::optional<std::uint64_t> verify_block_log(const std::filesystem::path& path) {
  return verify_chain_lines(split_lines(read_file(path)));
}

// --- Ledger ----------------------------------------------------------------------------

Ledger::Ledger(Options options, Clock clock) : options_(std::move(options)), clock_(std::move(clock)) {
  std::vector<std::string> existing;
  std::filesystem::path log_path;
  if (options_.dir) {
    std::error_code ec;
    std::filesystem::create_directories(*options_.dir, ec);
    if (ec) throw Error(ErrorCode::IoFailure, "cannot create " + options_.dir->string() + ": " + ec.message());
    log_path = *options_.dir / "blocks.log";
    if (std::filesystem::exists(log_path)) {
      auto text = read_file(log_path);
      // A block whose append never finished was never acknowledged.
      if (!text.empty() && text.back() != '\n') {
        auto keep = text.rfind('\n');
        keep = keep == std::string::npos ? 0 : keep + 1;
        truncate_file(log_path, keep);
        text.resize(keep);
      }
      existing = split_lines(text);
    }
    fd_ = ::open(log_path.c_str(), O_WRONLY | O_APPEND | O_CREAT | O_CLOEXEC, 0644);
    if (fd_ < 0) throw Error(ErrorCode::IoFailure, "open " + log_path.string() + ": " + std::strerror(errno));
  }

  if (existing.empty()) {
    LedgerBlock genesis;
    genesis.height = 0;
    genesis.prev_hash = kZeroHash;
    genesis.committed_at = clock_();
    commit_block(std::move(genesis));
    return;
  }
  if (auto broken = verify_chain_lines(existing))
    throw Error(ErrorCode::IoFailure, "block log broken at height " + std::to_string(*broken));
  for (const auto& line : existing) {
    auto b = block_from_json(json::parse(line).at("block"));
    apply_block(state_, b);
    tip_hash_ = block_hash(b);
  }
  lines_ = std::move(existing);
}

Ledger::~Ledger() {
  if (fd_ >= 0) ::close(fd_);
}

void Ledger::apply_block(State& st, const LedgerBlock& b) {
  for (const auto& r : b.registrations) {
    st.devices[r.device_id] = r.public_key;
    st.keys[r.device_id] = PublicKey::from_pem(r.public_key);
  }
  for (const auto& e : b.transactions) {
    auto report = parse_report(e.payload);
    if (st.reports.count(report.report_id)) continue;
    st.reports[report.report_id] = StoredEvent{report, e, b.height};
    st.order.push_back(report.report_id);
  }
}

std::string Ledger::dump_state(const State& st) {
  json devices = json::object();
  for (const auto& [id, pem] : st.devices) devices[id] = pem;
  json reports = json::object();
  for (const auto& [id, ev] : st.reports) reports[id] = {{"envelope", ev.envelope}, {"height", ev.height}};
  return canonical_json(json{{"devices", devices}, {"reports", reports}});
}

void Ledger::commit_block(LedgerBlock b) {
  b.height = lines_.size();
  b.prev_hash = lines_.empty() ? kZeroHash : tip_hash_;
  auto line = block_line(b);
  if (fd_ >= 0) {
    write_all(fd_, line + "\n");
    if (options_.sync && ::fdatasync(fd_) != 0)
      throw Error(ErrorCode::IoFailure, std::string("fdatasync: ") + std::strerror(errno));
  }
  apply_block(state_, b);
  tip_hash_ = block_hash(b);
  lines_.push_back(std::move(line));
}

void Ledger::register_device(const DeviceIdentity& identity) {
  if (identity.device_id.empty()) throw Error(ErrorCode::InvalidArgument, "empty device_id");
  PublicKey::from_pem(identity.public_key);  // MalformedKey
  std::lock_guard lock(mu_);
  if (state_.devices.count(identity.device_id))
    throw Error(ErrorCode::AlreadyRegistered, identity.device_id + " is already registered");
  LedgerBlock b;
  b.committed_at = clock_();
  b.registrations.push_back(identity);
  commit_block(std::move(b));
}

std::optional<std::string> Ledger::registered_key(const std::string& device_id) const {
  std::lock_guard lock(mu_);
  auto it = state_.devices.find(device_id);
  if (it == state_.devices.end()) return std::nullopt;
  return it->second;
}

std::vector<Verdict> Ledger::add_events(const std::vector<SignedEnvelope>& envelopes) {
  std::lock_guard lock(mu_);
  std::vector<Verdict> verdicts;
  verdicts.reserve(envelopes.size());
  LedgerBlock block;
  std::set<std::string> in_block;

  for (const auto& e : envelopes) {
    Verdict v;
    std::optional<EventReport> report;
    try {
      report = parse_report(e.payload);
      v.report_id = report->report_id;
    } catch (const std::exception&) {
    }
    auto reject = [&](RejectReason r) {
      v.reason = r;
      verdicts.push_back(v);
    };

    auto key = state_.keys.find(e.signer);
    if (key == state_.keys.end()) {
      reject(RejectReason::UnknownSigner);
      continue;
    }
    bool good = false;
    try {
      good = verify(key->second, e);
    } catch (const Error&) {
      reject(RejectReason::MalformedEnvelope);
      continue;
    }
    if (!good) {
      reject(RejectReason::SignatureInvalid);
      continue;
    }
    if (!report || !validate_report(*report).empty()) {
      reject(RejectReason::InvalidReport);
      continue;
    }
    if (report->device_id != e.signer) {
      reject(RejectReason::SignerMismatch);
      continue;
    }
    v.committed = true;
    if (state_.reports.count(report->report_id) || in_block.count(report->report_id)) {
      v.replay = true;
    } else {
      in_block.insert(report->report_id);
      block.transactions.push_back(e);
    }
    verdicts.push_back(v);
  }

  if (!block.transactions.empty()) {
    block.committed_at = clock_();
    commit_block(std::move(block));
  }
  return verdicts;
}

Ledger::StoredEvent Ledger::get_event(const std::string& report_id) const {
  std::lock_guard lock(mu_);
  auto it = state_.reports.find(report_id);
  if (it == state_.reports.end()) throw Error(ErrorCode::NotFound, "no event " + report_id);
  return it->second;
}

std::vector<EventReport> Ledger::get_recent(const RecentFilter& filter, std::size_t limit) const {
  if (limit == 0) throw Error(ErrorCode::InvalidArgument, "limit must be >= 1");
  std::vector<const EventReport*> matches;
  std::lock_guard lock(mu_);
  for (const auto& [id, ev] : state_.reports) {
    if (filter.device_id && ev.report.device_id != *filter.device_id) continue;
    if (filter.batch_no && ev.report.batch_no != *filter.batch_no) continue;
    matches.push_back(&ev.report);
  }
  auto newer = [](const EventReport* a, const EventReport* b) {
    if (a->created_at != b->created_at) return a->created_at > b->created_at;
    return a->report_id < b->report_id;
  };
  std::size_t n = std::min(limit, matches.size());
  std::partial_sort(matches.begin(), matches.begin() + static_cast<std::ptrdiff_t>(n), matches.end(), newer);
  std::vector<EventReport> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(*matches[i]);
  return out;
}

std::optional<std::uint64_t> Ledger::verify_chain() const {
  std::lock_guard lock(mu_);
  return verify_chain_lines(lines_);
}

std::uint64_t Ledger::height() const {
  std::lock_guard lock(mu_);
  return lines_.size() - 1;
}

std::size_t Ledger::event_count() const {
  std::lock_guard lock(mu_);
  return state_.reports.size();
}

std::vector<LedgerBlock> Ledger::blocks(std::uint64_t from, std::size_t limit) const {
  std::lock_guard lock(mu_);
  std::vector<LedgerBlock> out;
  for (auto h = from; h < lines_.size() && out.size() < limit; ++h)
    out.push_back(block_from_json(json::parse(lines_[h]).at("block")));
  return out;
}

std::vector<std::string> Ledger::commit_order() const {
  std::lock_guard lock(mu_);
  return state_.order;
}

std::string Ledger::world_state_json() const {
  std::lock_guard lock(mu_);
  return dump_state(state_);
}

std::vector<std::string> Ledger::stored_lines() const {
  std::lock_guard lock(mu_);
  return lines_;
}

std::string Ledger::replay_world_state(const std::vector<std::string>& lines) {
  State st;
  for (const auto& line : lines) apply_block(st, block_from_json(json::parse(line).at("block")));
  return dump_state(st);
}

void Ledger::corrupt_stored_byte(std::uint64_t height, std::size_t offset, unsigned char xor_mask) {
  std::lock_guard lock(mu_);
  auto& line = lines_.at(height);
  line.at(offset) = static_cast<char>(static_cast<unsigned char>(line.at(offset)) ^ xor_mask);
}

// --- wire protocol --------------------------------------------------------------------

nlohmann::json verdict_to_json(const Verdict& v) {
  json j = {{"report_id", v.report_id}, {"status", v.committed ? "committed" : "rejected"}};
  if (v.committed) j["replay"] = v.replay;
  if (v.reason) j["reason"] = to_string(*v.reason);
  return j;
}

Verdict verdict_from_json(const nlohmann::json& j) {
  Verdict v;
  v.report_id = j.at("report_id").get<std::string>();
  auto status = j.at("status").get<std::string>();
  if (status == "committed") {
    v.committed = true;
    v.replay = j.value("replay", false);
  } else if (status == "rejected") {
    v.reason = reject_reason_from_string(j.at("reason").get<std::string>());
    if (!v.reason) throw Error(ErrorCode::MalformedMessage, "unknown rejection reason");
  } else {
    throw Error(ErrorCode::MalformedMessage, "unknown verdict status '" + status + "'");
  }
  return v;
}

namespace {

json failure(ErrorCode code, const std::string& detail) {
  return {{"ok", false}, {"error", std::string(to_string(code))}, {"detail", detail}};
}

json dispatch(Ledger& ledger, const json& req) {
  auto op = req.at("op").get<std::string>();
  if (op == "AddEvents") {
    const auto& list = req.at("envelopes");
    if (!list.is_array()) throw Error(ErrorCode::MalformedMessage, "envelopes must be a list");
    std::vector<SignedEnvelope> good;
    std::vector<std::optional<Verdict>> slots(list.size());
    for (std::size_t i = 0; i < list.size(); ++i) {
      try {
        good.push_back(list[i].get<SignedEnvelope>());
      } catch (const Error&) {
        slots[i] = Verdict{{}, false, false, RejectReason::MalformedEnvelope};
      }
    }
    auto verdicts = ledger.add_events(good);
    json out = json::array();
    std::size_t k = 0;
    for (auto& slot : slots) out.push_back(verdict_to_json(slot ? *slot : verdicts[k++]));
    return {{"ok", true}, {"verdicts", out}, {"height", ledger.height()}};
  }
  if (op == "GetEvent") {
    auto ev = ledger.get_event(req.at("report_id").get<std::string>());
    return {{"ok", true}, {"report", ev.report}, {"envelope", ev.envelope}, {"height", ev.height}};
  }
  if (op == "GetRecent") {
    Ledger::RecentFilter f;
    if (req.contains("device_id")) f.device_id = req.at("device_id").get<std::string>();
    if (req.contains("batch_no")) f.batch_no = req.at("batch_no").get<std::string>();
    auto limit = req.value("limit", std::int64_t{10});
    if (limit < 1) throw Error(ErrorCode::InvalidArgument, "limit must be >= 1");
    json reports = json::array();
    for (const auto& r : ledger.get_recent(f, static_cast<std::size_t>(limit))) reports.push_back(r);
    return {{"ok", true}, {"reports", reports}};
  }
  if (op == "RegisterDevice") {
    auto identity = req.at("identity").get<DeviceIdentity>();
    try {
      ledger.register_device(identity);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::AlreadyRegistered) throw;
      auto out = failure(e.code(), e.what());
      out["same_key"] = ledger.registered_key(identity.device_id) == identity.public_key;
      return out;
    }
    return {{"ok", true}, {"height", ledger.height()}};
  }
  if (op == "VerifyChain") {
    auto broken = ledger.verify_chain();
    json out = {{"ok", true}, {"intact", !broken.has_value()}, {"height", ledger.height()}};
    if (broken) out["first_broken_height"] = *broken;
    return out;
  }
  if (op == "GetBlocks") {
    auto from = req.value("from", std::uint64_t{0});
    auto limit = req.value("limit", std::uint64_t{100});
    json blocks = json::array();
    for (const auto& b : ledger.blocks(from, static_cast<std::size_t>(limit)))
      blocks.push_back({{"block", block_to_json(b)}, {"hash", block_hash(b)}});
    return {{"ok", true}, {"blocks", blocks}, {"height", ledger.height()}};
  }
  if (op == "Echo") return {{"ok", true}, {"seq", req.value("seq", json())}};
  throw Error(ErrorCode::MalformedMessage, "unknown op '" + op + "'");
}

}  // namespace

std::string handle_ledger_request(Ledger& ledger, const std::string& body) {
  json out;
  json req;
  try {
    req = json::parse(body);
    if (!req.is_object()) throw Error(ErrorCode::MalformedMessage, "request must be an object");
    out = dispatch(ledger, req);
  } catch (const Error& e) {
    out = failure(e.code(), e.what());
  } catch (const json::exception& e) {
    out = failure(ErrorCode::MalformedMessage, e.what());
  } catch (const std::exception& e) {
    out = failure(ErrorCode::IoFailure, e.what());
  }
  if (req.is_object()) {
    for (const char* k : {"channel", "chaincode"})
      if (req.contains(k)) out[k] = req[k];
  }
  return canonical_json(out);
}

std::string make_add_events_request(const std::vector<SignedEnvelope>& envelopes, const std::string& channel,
                                    const std::string& chaincode) {
  json list = json::array();
  for (const auto& e : envelopes) list.push_back(e);
  return canonical_json(json{{"op", "AddEvents"}, {"channel", channel}, {"chaincode", chaincode}, {"envelopes", list}});
}

std::vector<Verdict> parse_add_events_response(const std::string& body) {
  try {
    auto j = json::parse(body);
    if (!j.at("ok").get<bool>())
      throw Error(ErrorCode::MalformedMessage, "ledger error: " + j.value("error", std::string("unknown")));
    std::vector<Verdict> out;
    for (const auto& v : j.at("verdicts")) out.push_back(verdict_from_json(v));
    return out;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::MalformedMessage, e.what());
  }
}

std::string make_register_request(const DeviceIdentity& identity) {
  return canonical_json(json{{"op", "RegisterDevice"}, {"identity", identity}});
}

}  // namespace ambox
