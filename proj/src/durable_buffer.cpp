#include "ambox/durable_buffer.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "ambox/error.hpp"
#include "ambox/fs_util.hpp"

namespace ambox {

namespace {

constexpr int kSchemaVersion = 1;
constexpr std::size_t kCompactThreshold = 1024;

nlohmann::json record_line(const JournalRecord& r) {
  return {{"id", r.id}, {"enqueued_at", format_rfc3339(r.enqueued_at)}, {"meta", r.meta}, {"record", r.record}};
}

std::string header_line(const std::string& name) {
  nlohmann::ordered_json header;
  header["schema_version"] = kSchemaVersion;
  header["kind"] = name + ".journal";
  return header.dump() + "\n";
}

}  // namespace

Journal::Journal(Options options) : options_(std::move(options)) {
  journal_path_ = options_.dir / (options_.name + ".journal");
  ack_path_ = options_.dir / (options_.name + ".ack");
  std::error_code ec;
  std::filesystem::create_directories(options_.dir, ec);
  if (ec) throw Error(ErrorCode::IoFailure, "cannot create " + options_.dir.string() + ": " + ec.message());
  recover();
  open_for_append();
}

Journal::~Journal() {
  if (fd_ >= 0) ::close(fd_);
}

void Journal::recover() {
  EntryId watermark = 0;
  std::set<EntryId> acked;
  std::map<EntryId, std::uint32_t> attempts;
  if (std::filesystem::exists(ack_path_)) {
    try {
      auto j = nlohmann::json::parse(read_file(ack_path_));
      watermark = j.at("watermark").get<EntryId>();
      for (auto id : j.at("acked")) acked.insert(id.get<EntryId>());
      for (auto& [k, v] : j.at("attempts").items()) attempts[std::stoull(k)] = v.get<std::uint32_t>();
    } catch (const std::exception& e) {
      throw Error(ErrorCode::IoFailure, "unreadable ack file " + ack_path_.string() + ": " + e.what());
    }
  }

  std::string content = std::filesystem::exists(journal_path_) ? read_file(journal_path_) : std::string{};
  std::size_t good_end = 0;
  bool header_seen = false;
  EntryId max_id = watermark;
  if (!acked.empty()) max_id = std::max(max_id, *acked.rbegin());

  std::size_t pos = 0;
  while (pos < content.size()) {
    auto nl = content.find('\n', pos);
    if (nl == std::string::npos) break;  // torn tail
    std::string_view line(content.data() + pos, nl - pos);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::IoFailure, "corrupt journal line in " + journal_path_.string() + ": " + e.what());
    }
    if (!header_seen) {
      if (j.value("schema_version", 0) != kSchemaVersion)
        throw Error(ErrorCode::IoFailure, "unsupported journal schema in " + journal_path_.string());
      header_seen = true;
    } else {
      JournalRecord r;
      try {
        r.id = j.at("id").get<EntryId>();
        r.enqueued_at = parse_rfc3339(j.at("enqueued_at").get<std::string>());
        r.meta = j.at("meta");
        r.record = j.at("record");
      } catch (const std::exception& e) {
        throw Error(ErrorCode::IoFailure, "malformed journal record: " + std::string(e.what()));
      }
      max_id = std::max(max_id, r.id);
      if (r.id <= watermark || acked.count(r.id) != 0) {
        ++dead_lines_;
      } else {
        if (auto it = attempts.find(r.id); it != attempts.end()) r.attempts = it->second;
        pending_[r.id] = std::move(r);
      }
    }
    pos = nl + 1;
    good_end = pos;
  }

  if (!header_seen) {
    write_file_atomic(journal_path_, header_line(options_.name), options_.sync);
  } else if (good_end != content.size()) {
    truncate_file(journal_path_, good_end);
  }
  next_id_ = max_id + 1;
}

void Journal::open_for_append() {
  if (fd_ >= 0) ::close(fd_);
  fd_ = ::open(journal_path_.c_str(), O_WRONLY | O_APPEND | O_CLOEXEC);
  if (fd_ < 0) throw Error(ErrorCode::IoFailure, "open " + journal_path_.string() + ": " + std::strerror(errno));
}

void Journal::append_line(const std::string& line) {
  write_all(fd_, line);
  if (options_.sync && ::fdatasync(fd_) != 0)
    throw Error(ErrorCode::IoFailure, std::string("fdatasync: ") + std::strerror(errno));
}

EntryId Journal::enqueue(const nlohmann::json& record, Timestamp now, const nlohmann::json& meta) {
  std::lock_guard lock(mu_);
  if (pending_.size() >= options_.capacity)
    throw Error(ErrorCode::StorageFull, std::to_string(pending_.size()) + " entries pending");
  JournalRecord r{next_id_, now, 0, meta, record};
  append_line(record_line(r).dump() + "\n");
  pending_.emplace(r.id, r);
  return next_id_++;
}

std::vector<JournalRecord> Journal::peek_batch(std::size_t n) const {
  if (n == 0) throw Error(ErrorCode::InvalidArgument, "peek_batch needs n >= 1");
  std::lock_guard lock(mu_);
  std::vector<JournalRecord> out;
  for (auto it = pending_.begin(); it != pending_.end() && out.size() < n; ++it) out.push_back(it->second);
  return out;
}

void Journal::ack(std::span<const EntryId> ids) {
  std::lock_guard lock(mu_);
  std::set<EntryId> unique(ids.begin(), ids.end());
  for (auto id : unique)
    if (pending_.count(id) == 0) throw Error(ErrorCode::UnknownId, "entry " + std::to_string(id) + " is not pending");
  for (auto id : unique) pending_.erase(id);
  dead_lines_ += unique.size();
  write_ack_file();
  maybe_compact();
}

void Journal::mark_failed(std::span<const EntryId> ids) {
  std::lock_guard lock(mu_);
  for (auto id : ids) {
    auto it = pending_.find(id);
    if (it == pending_.end()) throw Error(ErrorCode::UnknownId, "entry " + std::to_string(id) + " is not pending");
    ++it->second.attempts;
  }
  write_ack_file();
}

std::size_t Journal::size() const {
  std::lock_guard lock(mu_);
  return pending_.size();
}

bool Journal::full() const {
  std::lock_guard lock(mu_);
  return pending_.size() >= options_.capacity;
}

void Journal::write_ack_file() {
  EntryId watermark = pending_.empty() ? next_id_ - 1 : pending_.begin()->first - 1;
  nlohmann::json acked = nlohmann::json::array();
  for (EntryId id = watermark + 1; id < next_id_; ++id)
    if (pending_.count(id) == 0) acked.push_back(id);
  nlohmann::json attempts = nlohmann::json::object();
  for (const auto& [id, r] : pending_)
    if (r.attempts > 0) attempts[std::to_string(id)] = r.attempts;
  nlohmann::ordered_json j;
  j["schema_version"] = kSchemaVersion;
  j["watermark"] = watermark;
  j["acked"] = acked;
  j["attempts"] = attempts;
  write_file_atomic(ack_path_, j.dump(), options_.sync);
}

void Journal::maybe_compact() {
  bool worth_it = (pending_.empty() && dead_lines_ > 0) ||
                  (dead_lines_ >= kCompactThreshold && dead_lines_ > pending_.size());
  if (!worth_it) return;
  std::string body = header_line(options_.name);
  for (const auto& [id, r] : pending_) body += record_line(r).dump() + "\n";
  write_file_atomic(journal_path_, body, options_.sync);
  dead_lines_ = 0;
  open_for_append();
}

std::vector<BufferEntry> DurableBuffer::peek_batch(std::size_t n) const {
  std::vector<BufferEntry> out;
  for (auto& r : journal_.peek_batch(n)) {
    BufferEntry e;
    e.id = r.id;
    e.envelope = r.record.get<SignedEnvelope>();
    e.enqueued_at = r.enqueued_at;
    e.attempts = r.attempts;
    e.meta = std::move(r.meta);
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace ambox
