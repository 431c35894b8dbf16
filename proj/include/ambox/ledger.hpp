#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ambox/crypto.hpp"
#include "ambox/domain.hpp"

namespace ambox {

/// Why the ledger refused an envelope.
enum class RejectReason { UnknownSigner, MalformedEnvelope, SignatureInvalid, InvalidReport, SignerMismatch };

std::string to_string(RejectReason r);
std::optional<RejectReason> reject_reason_from_string(const std::string& s);

struct Verdict {
  std::string report_id;  // empty when the payload could not be parsed
  bool committed = false;
  bool replay = false;    // committed earlier; nothing appended this time
  std::optional<RejectReason> reason;

  bool operator==(const Verdict&) const = default;
};

struct LedgerBlock {
  std::uint64_t height = 0;
  std::string prev_hash;  // hex; 64 zeros at height 0
  Timestamp committed_at{};
  std::vector<SignedEnvelope> transactions;
  std::vector<DeviceIdentity> registrations;

  bool operator==(const LedgerBlock&) const = default;
};

nlohmann::json block_to_json(const LedgerBlock& b);
LedgerBlock block_from_json(const nlohmann::json& j);
/// SHA-256 hex of the block's canonical bytes.
std::string block_hash(const LedgerBlock& b);
/// The stored line for a block: {"block":..., "hash":...}, canonical.
std::string block_line(const LedgerBlock& b);

inline const std::string kZeroHash(64, '0');

/// std::nullopt when intact; otherwise the first height whose stored bytes
/// do not re-derive (unparseable, non-canonical, wrong hash, broken link,
/// wrong height).
std::optional<std::uint64_t> verify_chain_lines(const std::vector<std::string>& lines);
/// Same over a blocks.log file.
std::optional<std::uint64_t> verify_block_log(const std::filesystem::path& path);

/// Single-node verifiable ledger: signature-checking ingest, hash-chained
/// block log, world state derived from that log.
///
/// Ingest is serialized under one lock (one block writer); queries take the
/// same lock and so always see a committed snapshot.
class Ledger {
 public:
  struct Options {
    std::optional<std::filesystem::path> dir;  // blocks.log lives here; in-memory when unset
    bool sync = true;
  };
  using Clock = std::function<Timestamp()>;

  /// Replays an existing blocks.log. Throws Error(IoFailure) when the
  /// stored chain does not verify.
  Ledger(Options options, Clock clock);
  ~Ledger();
  Ledger(const Ledger&) = delete;
  Ledger& operator=(const Ledger&) = delete;

  /// Throws Error(MalformedKey) or Error(AlreadyRegistered).
  void register_device(const DeviceIdentity& identity);
  std::optional<std::string> registered_key(const std::string& device_id) const;

  std::vector<Verdict> add_events(const std::vector<SignedEnvelope>& envelopes);

  struct StoredEvent {
    EventReport report;
    SignedEnvelope envelope;  // payload byte-identical to what was signed
    std::uint64_t height = 0;
  };
  /// Throws Error(NotFound).
  StoredEvent get_event(const std::string& report_id) const;

  struct RecentFilter {
    std::optional<std::string> device_id;
    std::optional<std::string> batch_no;
  };
  /// Newest first by created_at, report_id ascending on ties.
  /// Throws Error(InvalidArgument) when limit == 0.
  std::vector<EventReport> get_recent(const RecentFilter& filter, std::size_t limit) const;

  std::optional<std::uint64_t> verify_chain() const;

  std::uint64_t height() const;  // tip height; genesis is 0
  std::size_t event_count() const;
  std::vector<LedgerBlock> blocks(std::uint64_t from, std::size_t limit) const;
  /// report_ids in commit order.
  std::vector<std::string> commit_order() const;
  /// Canonical dump of {devices, reports}; equal dumps mean equal state.
  std::string world_state_json() const;
  std::vector<std::string> stored_lines() const;

  /// Fresh world state built by replaying stored lines (safety check).
  static std::string replay_world_state(const std::vector<std::string>& lines);

  /// Test hook: overwrite one byte of a stored block (as a disk fault would).
  void corrupt_stored_byte(std::uint64_t height, std::size_t offset, unsigned char xor_mask);

 private:
  struct State {
    std::map<std::string, std::string> devices;  // device_id -> PEM
    std::map<std::string, PublicKey> keys;
    std::map<std::string, StoredEvent> reports;
    std::vector<std::string> order;
  };

  static void apply_block(State& st, const LedgerBlock& b);
  static std::string dump_state(const State& st);
  void commit_block(LedgerBlock b);

  Options options_;
  Clock clock_;
  mutable std::mutex mu_;
  State state_;
  std::vector<std::string> lines_;
  std::string tip_hash_;
  int fd_ = -1;
};

// --- wire protocol ------------------------------------------------------------
//
// Request  {"op": "...", "channel": ..., "chaincode": ..., args...}
// Response {"ok": true, ...} | {"ok": false, "error": "<code>", "detail": ...}

/// Serves one request body against the ledger; never throws.
std::string handle_ledger_request(Ledger& ledger, const std::string& body);

std::string make_add_events_request(const std::vector<SignedEnvelope>& envelopes, const std::string& channel,
                                    const std::string& chaincode);
/// Throws Error(MalformedMessage) for anything that is not a well-formed
/// AddEvents response.
std::vector<Verdict> parse_add_events_response(const std::string& body);

std::string make_register_request(const DeviceIdentity& identity);

/// Verdict JSON helpers.
nlohmann::json verdict_to_json(const Verdict& v);
Verdict verdict_from_json(const nlohmann::json& j);

}  // namespace ambox
