#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <random>
#include <set>

#include "ambox/crypto.hpp"
#include "ambox/error.hpp"
#include "ambox/fs_util.hpp"
#include "ambox/ledger.hpp"
#include "test_util.hpp"

using namespace ambox;
using nlohmann::json;

namespace {

struct Fixture {
  Timestamp now = test::t0();
  KeyPair node = KeyPair::derive("node-1", "ledger-test");
  KeyPair mote = KeyPair::derive("mote-1", "ledger-test");
  std::uint64_t counter = 0;

  Ledger::Clock clock() {
    return [this] { return now; };
  }

  EventReport report(const std::string& batch = "b", std::string device = "node-1") {
    ++counter;
    EventReport r;
    r.device_id = std::move(device);
    r.product_id = "p";
    r.batch_no = batch;
    r.created_at = test::t0() + Duration{static_cast<std::int64_t>(counter) * 60'000};
    r.report_id = make_report_id(r.device_id, r.created_at, counter);
    r.readings.push_back({Quantity::temperature(), 4.0, r.created_at - Duration{1'000}, r.device_id, std::nullopt});
    return r;
  }
};

void register_both(Ledger& l, Fixture& f) {
  l.register_device(f.node.identity(DeviceKind::Node));
  l.register_device(f.mote.identity(DeviceKind::Mote));
}

}  // namespace

TEST_CASE("genesis and registration") {
  Fixture f;
  Ledger l({}, f.clock());
  CHECK(l.height() == 0);
  CHECK_FALSE(l.verify_chain().has_value());
  l.register_device(f.node.identity(DeviceKind::Node));
  CHECK(l.height() == 1);
  CHECK(l.registered_key("node-1") == f.node.public_key().pem());
  CHECK_FALSE(l.registered_key("mote-1").has_value());
  try {
    l.register_device(f.node.identity(DeviceKind::Node));
    FAIL("expected AlreadyRegistered");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::AlreadyRegistered);
  }
  CHECK_THROWS_AS(l.register_device({"x", DeviceKind::Node, "not a key"}), Error);
  CHECK(l.height() == 1);
}

TEST_CASE("ingest checks: signer, envelope, signature, report, ownership") {
  Fixture f;
  Ledger l({}, f.clock());
  register_both(l, f);
  auto stranger = KeyPair::derive("node-9", "ledger-test");

  auto good = sign(f.node, f.report());
  auto unknown = sign(stranger, f.report("b", "node-9"));
  auto bad_sig = sign(f.node, f.report());
  bad_sig.signature[3] = static_cast<char>(bad_sig.signature[3] ^ 0x40);
  auto malformed = sign(f.node, f.report());
  malformed.signature.resize(5);
  // signed by mote-1 but claims to come from node-1
  auto theirs = f.report();
  SignedEnvelope mismatch{canonicalize(theirs), {}, "mote-1"};
  mismatch.signature = f.mote.sign_raw(mismatch.payload);
  // well-signed but invalid content
  SignedEnvelope invalid{R"({"not":"a report"})", {}, "node-1"};
  invalid.signature = f.node.sign_raw(invalid.payload);

  auto v = l.add_events({good, unknown, bad_sig, malformed, mismatch, invalid});
  REQUIRE(v.size() == 6);
  CHECK(v[0].committed);
  CHECK_FALSE(v[0].replay);
  CHECK(v[1].reason == RejectReason::UnknownSigner);
  CHECK(v[2].reason == RejectReason::SignatureInvalid);
  CHECK(v[3].reason == RejectReason::MalformedEnvelope);
  CHECK(v[4].reason == RejectReason::SignerMismatch);
  CHECK(v[5].reason == RejectReason::InvalidReport);
  CHECK(v[5].report_id.empty());
  CHECK(l.event_count() == 1);
  CHECK(l.get_event(v[0].report_id).envelope == good);
  CHECK_THROWS_AS(l.get_event("nope"), Error);
}

TEST_CASE("resubmission is acknowledged without a second entry") {
  Fixture f;
  Ledger l({}, f.clock());
  register_both(l, f);
  auto e = sign(f.node, f.report());
  auto first = l.add_events({e, e});
  CHECK(first[0].committed);
  CHECK_FALSE(first[0].replay);
  CHECK(first[1].committed);
  CHECK(first[1].replay);
  auto h = l.height();
  auto again = l.add_events({e});
  CHECK(again[0].replay);
  CHECK(l.height() == h);  // nothing new, no block
  CHECK(l.commit_order().size() == 1);
}

// Independent oracle for get_recent: full sort of everything that matches.
TEST_CASE("property: get_recent equals a full sort") {
  std::mt19937_64 rng(17);
  Fixture f;
  Ledger l({}, f.clock());
  register_both(l, f);
  std::vector<EventReport> all;
  for (int i = 0; i < 120; ++i) {
    auto r = f.report(rng() % 2 ? "A" : "B");
    r.created_at = test::t0() + Duration{static_cast<std::int64_t>(rng() % 40) * 60'000};  // many ties
    r.readings[0].sampled_at = r.created_at - Duration{1};
    all.push_back(r);
  }
  std::vector<SignedEnvelope> envs;
  for (const auto& r : all) envs.push_back(sign(f.node, r));
  l.add_events(envs);

  for (int q = 0; q < 50; ++q) {
    Ledger::RecentFilter filter;
    if (rng() % 2) filter.batch_no = rng() % 2 ? "A" : "B";
    if (rng() % 3 == 0) filter.device_id = rng() % 2 ? "node-1" : "mote-1";
    std::size_t limit = 1 + rng() % 150;
    std::vector<EventReport> expected;
    for (const auto& r : all)
      if ((!filter.batch_no || r.batch_no == *filter.batch_no) && (!filter.device_id || r.device_id == *filter.device_id))
        expected.push_back(r);
    std::sort(expected.begin(), expected.end(), [](const auto& a, const auto& b) {
      return a.created_at != b.created_at ? a.created_at > b.created_at : a.report_id < b.report_id;
    });
    if (expected.size() > limit) expected.resize(limit);
    CHECK(l.get_recent(filter, limit) == expected);
  }
  CHECK_THROWS_AS(l.get_recent({}, 0), Error);
}

// Oracle: recompute the chain from the raw stored JSON with plain sha256.
TEST_CASE("stored blocks hash-link under an independent recomputation") {
  Fixture f;
  Ledger l({}, f.clock());
  register_both(l, f);
  for (int i = 0; i < 5; ++i) {
    f.now += Duration{60'000};
    l.add_events({sign(f.node, f.report())});
  }
  std::string prev(64, '0');
  std::uint64_t h = 0;
  for (const auto& line : l.stored_lines()) {
    auto j = json::parse(line);
    CHECK(j["block"]["height"] == h);
    CHECK(j["block"]["prev_hash"] == prev);
    auto hash = sha256_hex(j["block"].dump());  // nlohmann sorts keys; no whitespace
    CHECK(j["hash"] == hash);
    prev = hash;
    ++h;
  }
  CHECK(h == 8);
}

TEST_CASE("any single-byte flip is detected at its height") {
  Fixture f;
  Ledger l({}, f.clock());
  register_both(l, f);
  for (int i = 0; i < 6; ++i) l.add_events({sign(f.node, f.report())});
  std::mt19937_64 rng(5);
  auto lines = l.stored_lines();
  for (std::uint64_t h = 0; h < lines.size(); ++h) {
    for (int k = 0; k < 40; ++k) {
      auto offset = rng() % lines[h].size();
      auto mask = static_cast<unsigned char>(1 + rng() % 255);
      l.corrupt_stored_byte(h, offset, mask);
      CHECK(l.verify_chain() == h);
      l.corrupt_stored_byte(h, offset, mask);
    }
  }
  CHECK_FALSE(l.verify_chain().has_value());
}

TEST_CASE("on-disk ledger reopens to the same state; a damaged log refuses to open") {
  test::TempDir d("ledger");
  Fixture f;
  std::string state;
  {
    Ledger l({d.path, false}, f.clock());
    register_both(l, f);
    for (int i = 0; i < 4; ++i) l.add_events({sign(f.node, f.report()), sign(f.mote, f.report("m", "mote-1"))});
    state = l.world_state_json();
    CHECK(Ledger::replay_world_state(l.stored_lines()) == state);
  }
  {
    Ledger l({d.path, false}, f.clock());
    CHECK(l.world_state_json() == state);
    CHECK(l.event_count() == 8);
    CHECK_FALSE(verify_block_log(d / "blocks.log").has_value());
  }
  // a torn final append is discarded
  {
    std::ofstream out(d / "blocks.log", std::ios::app);
    out << R"({"block":{"height":7)";
  }
  {
    Ledger l({d.path, false}, f.clock());
    CHECK(l.world_state_json() == state);
  }
  auto text = read_file(d / "blocks.log");
  auto pos = text.find("\"prev_hash\"", text.find('\n') + 1) + 20;
  text[pos] = text[pos] == 'a' ? 'b' : 'a';
  write_file_atomic(d / "blocks.log", text, false);
  CHECK(verify_block_log(d / "blocks.log") == 1);
  CHECK_THROWS_AS(Ledger({d.path, false}, f.clock()), Error);
}

TEST_CASE("wire protocol") {
  Fixture f;
  Ledger l({}, f.clock());
  auto reg = json::parse(handle_ledger_request(l, make_register_request(f.node.identity(DeviceKind::Node))));
  CHECK(reg["ok"] == true);
  auto dup = json::parse(handle_ledger_request(l, make_register_request(f.node.identity(DeviceKind::Node))));
  CHECK(dup["ok"] == false);
  CHECK(dup["error"] == "already-registered");

  auto e = sign(f.node, f.report());
  auto body = make_add_events_request({e}, "ambox", "events");
  auto verdicts = parse_add_events_response(handle_ledger_request(l, body));
  REQUIRE(verdicts.size() == 1);
  CHECK(verdicts[0].committed);

  json req = json::parse(body);
  req["envelopes"].push_back({{"signer", "node-1"}});
  auto mixed = parse_add_events_response(handle_ledger_request(l, req.dump()));
  REQUIRE(mixed.size() == 2);
  CHECK(mixed[0].replay);
  CHECK(mixed[1].reason == RejectReason::MalformedEnvelope);

  auto got = json::parse(handle_ledger_request(l, json{{"op", "GetEvent"}, {"report_id", verdicts[0].report_id}}.dump()));
  CHECK(got["ok"] == true);
  CHECK(got["envelope"].get<SignedEnvelope>() == e);

  CHECK(json::parse(handle_ledger_request(l, "garbage"))["ok"] == false);
  CHECK(json::parse(handle_ledger_request(l, R"({"op":"Explode"})"))["ok"] == false);
  CHECK(json::parse(handle_ledger_request(l, R"({"op":"GetRecent","limit":0})"))["ok"] == false);
  CHECK_THROWS_AS(parse_add_events_response(R"({"ok":true})"), Error);
  CHECK_THROWS_AS(parse_add_events_response(R"({"ok":false,"error":"x"})"), Error);

  for (auto r : {RejectReason::UnknownSigner, RejectReason::MalformedEnvelope, RejectReason::SignatureInvalid,
                 RejectReason::InvalidReport, RejectReason::SignerMismatch}) {
    Verdict v{"id", false, false, r};
    CHECK(verdict_from_json(verdict_to_json(v)) == v);
  }
}
