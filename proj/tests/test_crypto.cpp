#include <doctest.h>

#include <openssl/evp.h>
#include <openssl/pem.h>

#include <random>

#include "ambox/crypto.hpp"
#include "ambox/error.hpp"
#include "test_util.hpp"

using namespace ambox;
using nlohmann::json;

namespace {

const KeyPair& node_key() {
  static KeyPair k = KeyPair::derive("node-1", "crypto-test");
  return k;
}

EventReport report(std::uint64_t counter = 1) {
  EventReport r;
  r.device_id = "node-1";
  r.product_id = "vaccine";
  r.batch_no = "B-1";
  r.created_at = test::at_min(10);
  r.report_id = make_report_id("node-1", r.created_at, counter);
  for (int i = 0; i < 3; ++i) {
    SensorReading s;
    s.quantity = Quantity::temperature();
    s.value = 4.0 + i * 0.25;
    s.sampled_at = test::at_min(i + 1);
    s.source_device = "node-1";
    r.readings.push_back(s);
  }
  return r;
}

// Independent check straight against libcrypto.
bool openssl_verify(const std::string& pem, const std::string& payload, const std::string& sig) {
  BIO* bio = BIO_new_mem_buf(pem.data(), static_cast<int>(pem.size()));
  EVP_PKEY* pkey = PEM_read_bio_PUBKEY(bio, nullptr, nullptr, nullptr);
  BIO_free(bio);
  if (!pkey) return false;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  bool ok = EVP_DigestVerifyInit(ctx, nullptr, EVP_sha256(), nullptr, pkey) == 1 &&
            EVP_DigestVerify(ctx, reinterpret_cast<const unsigned char*>(sig.data()), sig.size(),
                             reinterpret_cast<const unsigned char*>(payload.data()), payload.size()) == 1;
  EVP_MD_CTX_free(ctx);
  EVP_PKEY_free(pkey);
  return ok;
}

}  // namespace

TEST_CASE("sha256 and base64 known answers") {
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(base64_encode("foobar") == "Zm9vYmFy");
  CHECK(base64_encode("fo") == "Zm8=");
  CHECK(base64_decode("Zm9vYg==") == "foob");
  CHECK_THROWS_AS(base64_decode("Zm9v!mFy"), Error);
  CHECK_THROWS_AS(base64_decode("Zm9"), Error);

  Sha256Stream s;
  s.update("a");
  s.update("bc");
  CHECK(s.hex() == sha256_hex("abc"));
}

TEST_CASE("property: base64 round trip over random bytes") {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 1000; ++i) {
    std::string bytes(rng() % 70, '\0');
    for (auto& c : bytes) c = static_cast<char>(rng());
    CHECK(base64_decode(base64_encode(bytes)) == bytes);
  }
}

TEST_CASE("derived keys are deterministic per (device, seed)") {
  auto a = KeyPair::derive("node-1", "crypto-test");
  CHECK(a.public_key() == node_key().public_key());
  auto b = KeyPair::derive("node-1", "other-seed");
  CHECK_FALSE(b.public_key() == a.public_key());
  CHECK(a.identity(DeviceKind::Node).public_key == a.public_key().pem());
}

TEST_CASE("sign then verify; signature checks out under plain libcrypto") {
  auto env = sign(node_key(), report());
  CHECK(env.signer == "node-1");
  CHECK(env.payload == canonicalize(report()));
  CHECK(verify(node_key().public_key(), env));
  CHECK(openssl_verify(node_key().public_key().pem(), env.payload, env.signature));
  CHECK(parse_report(env.payload) == report());

  auto other = KeyPair::derive("node-1", "someone-else");
  CHECK_FALSE(verify(other.public_key(), env));
}

TEST_CASE("signing refuses invalid reports and foreign devices") {
  auto r = report();
  r.readings.clear();
  CHECK_THROWS_AS(sign(node_key(), r), Error);
  r = report();
  r.device_id = "node-2";
  CHECK_THROWS_AS(sign(node_key(), r), Error);
}

TEST_CASE("verify distinguishes malformed envelopes from forgeries") {
  auto env = sign(node_key(), report());
  auto bad = env;
  bad.signature.pop_back();
  CHECK_THROWS_AS(verify(node_key().public_key(), bad), Error);
  bad = env;
  bad.payload = "not json";
  CHECK_THROWS_AS(verify(node_key().public_key(), bad), Error);
  bad = env;
  bad.signature[10] = static_cast<char>(bad.signature[10] ^ 1);
  CHECK_FALSE(verify(node_key().public_key(), bad));
}

TEST_CASE("single-byte payload mutations never verify (sampled positions)") {
  auto env = sign(node_key(), report(9));
  std::mt19937_64 rng(9);
  for (int i = 0; i < 400; ++i) {
    auto m = env;
    auto pos = rng() % m.payload.size();
    m.payload[pos] = static_cast<char>(m.payload[pos] ^ static_cast<char>(1 + rng() % 255));
    bool accepted = false;
    try {
      accepted = verify(node_key().public_key(), m);
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::MalformedEnvelope);
    }
    CHECK_FALSE(accepted);
  }
}

TEST_CASE("property: canonical payloads re-canonicalize to the same bytes") {
  std::mt19937_64 rng(4);
  for (std::uint64_t c = 1; c < 60; ++c) {
    auto r = report(c);
    r.readings[1].value = static_cast<double>(static_cast<std::int64_t>(rng() % 100000)) / 1000.0 - 40.0;
    auto payload = canonicalize(r);
    CHECK(canonicalize(parse_report(payload)) == payload);
  }
}

TEST_CASE("envelope JSON") {
  auto env = sign(node_key(), report());
  json j = env;
  CHECK(j.at("signer") == "node-1");
  CHECK(base64_decode(j.at("payload_b64").get<std::string>()) == env.payload);
  CHECK(j.get<SignedEnvelope>() == env);
  j["signature_b64"] = "%%%";
  CHECK_THROWS_AS(j.get<SignedEnvelope>(), Error);
  json missing = {{"payload_b64", "e30="}};
  CHECK_THROWS_AS(missing.get<SignedEnvelope>(), Error);
}

TEST_CASE("Mote attestations") {
  auto mote = KeyPair::derive("mote-1", "crypto-test");
  SensorReading s;
  s.quantity = Quantity::humidity();
  s.value = 71.5;
  s.sampled_at = test::at_min(4);
  s.source_device = "mote-1";
  auto env = sign_reading(mote, s);
  CHECK(env.payload == canonicalize_reading(s));
  auto carried = attested_reading(env);
  REQUIRE(carried.attestation.has_value());
  CHECK(carried.attestation->signer == "mote-1");
  CHECK(verify_attestation(mote.public_key(), carried));
  CHECK(canonicalize_reading(carried) == canonicalize_reading(s));
  CHECK_FALSE(verify_attestation(node_key().public_key(), carried));
  carried.value += 0.01;
  CHECK_FALSE(verify_attestation(mote.public_key(), carried));
}

TEST_CASE("key files") {
  test::TempDir dir("keys");
  auto path = dir / "k.pem";
  CHECK_THROWS_AS(KeyPair::load(path, "node-1"), Error);
  auto k = KeyPair::load_or_generate(path, "node-1");
  auto again = KeyPair::load_or_generate(path, "node-1");
  CHECK(k.public_key() == again.public_key());
  auto env = sign(k, report());
  CHECK(verify(again.public_key(), env));
  CHECK((std::filesystem::status(path).permissions() & std::filesystem::perms::group_read) ==
        std::filesystem::perms::none);
  CHECK(PublicKey::from_pem(k.public_key().pem()) == k.public_key());
  CHECK_THROWS_AS(PublicKey::from_pem("-----BEGIN PUBLIC KEY-----\nxx\n-----END PUBLIC KEY-----\n"), Error);
}
