#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ambox/crypto.hpp"
#include "ambox/time.hpp"

namespace ambox {

using EntryId = std::uint64_t;

/// One persisted record of a journal, with its bookkeeping.
struct JournalRecord {
  EntryId id = 0;
  Timestamp enqueued_at{};
  std::uint32_t attempts = 0;
  nlohmann::json meta;    // caller-defined, stored verbatim
  nlohmann::json record;  // payload

  bool operator==(const JournalRecord&) const = default;
};

/// Crash-safe FIFO of JSON records.
///
/// Layout in `dir`:
///   <name>.journal  header line + one JSON line per enqueued record (append-only)
///   <name>.ack      {"schema_version", "watermark", "acked", "attempts"}, replaced atomically
///
/// Ids are assigned in enqueue order and never reused. An id is gone only
/// once acknowledged. A torn trailing journal line (crash mid-append) is
/// discarded at open; the enqueue that wrote it never returned.
///
/// One writer and one drainer may use the journal concurrently; every
/// method takes the internal lock.
class Journal {
 public:
  struct Options {
    std::filesystem::path dir;
    std::string name = "buffer";
    std::size_t capacity = 1'000'000;
    bool sync = true;  // fsync every append and ack
  };

  explicit Journal(Options options);
  ~Journal();
  Journal(const Journal&) = delete;
  Journal& operator=(const Journal&) = delete;

  /// Durable before return. Throws Error(StorageFull) at capacity,
  /// Error(IoFailure) when the write or sync fails.
  EntryId enqueue(const nlohmann::json& record, Timestamp now, const nlohmann::json& meta = nlohmann::json::object());

  /// Up to n oldest unacknowledged records, oldest first, non-destructive.
  std::vector<JournalRecord> peek_batch(std::size_t n) const;

  /// Removes the records permanently. Throws Error(UnknownId) if any id is
  /// not pending; in that case nothing is removed.
  void ack(std::span<const EntryId> ids);

  /// Failure notice: bumps `attempts` of the given pending records.
  void mark_failed(std::span<const EntryId> ids);

  std::size_t size() const;
  bool empty() const { return size() == 0; }
  bool full() const;
  std::size_t capacity() const { return options_.capacity; }

  const std::filesystem::path& journal_path() const { return journal_path_; }
  const std::filesystem::path& ack_path() const { return ack_path_; }

 private:
  void recover();
  void open_for_append();
  void append_line(const std::string& line);
  void write_ack_file();
  void maybe_compact();

  Options options_;
  std::filesystem::path journal_path_;
  std::filesystem::path ack_path_;
  int fd_ = -1;

  mutable std::mutex mu_;
  std::map<EntryId, JournalRecord> pending_;
  EntryId next_id_ = 1;
  std::size_t dead_lines_ = 0;  // acked records still present in the journal file
};

/// An entry of the signed-envelope buffer.
struct BufferEntry {
  EntryId id = 0;
  SignedEnvelope envelope;
  Timestamp enqueued_at{};
  std::uint32_t attempts = 0;
  nlohmann::json meta;
};

/// Local store of signed envelopes awaiting ledger submission (Node) or
/// Node acknowledgment (Mote).
class DurableBuffer {
 public:
  using Options = Journal::Options;

  explicit DurableBuffer(Options options) : journal_(std::move(options)) {}

  EntryId enqueue(const SignedEnvelope& e, Timestamp now, const nlohmann::json& meta = nlohmann::json::object()) {
    return journal_.enqueue(nlohmann::json(e), now, meta);
  }
  std::vector<BufferEntry> peek_batch(std::size_t n) const;
  void ack(std::span<const EntryId> ids) { journal_.ack(ids); }
  void mark_failed(std::span<const EntryId> ids) { journal_.mark_failed(ids); }
  std::size_t size() const { return journal_.size(); }
  bool empty() const { return journal_.empty(); }
  bool full() const { return journal_.full(); }

  Journal& journal() { return journal_; }

 private:
  Journal journal_;
};

}  // namespace ambox
