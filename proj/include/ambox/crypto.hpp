#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <string_view>

#include <json.hpp>

#include "ambox/domain.hpp"

struct evp_pkey_st;

namespace ambox {

std::string sha256_hex(std::string_view data);
std::string sha256_raw(std::string_view data);

std::string base64_encode(std::string_view bytes);
/// Strict decoding; throws Error(ParseError) on bad characters or padding.
std::string base64_decode(std::string_view text);

/// Streaming SHA-256 used for message-log digests.
class Sha256Stream {
 public:
  Sha256Stream();
  ~Sha256Stream();
  Sha256Stream(const Sha256Stream&) = delete;
  Sha256Stream& operator=(const Sha256Stream&) = delete;

  void update(std::string_view data);
  /// Hex digest of everything fed so far; the stream stays usable.
  std::string hex() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

using PkeyHandle = std::shared_ptr<evp_pkey_st>;

class PublicKey {
 public:
  PublicKey() = default;
  /// Throws Error(MalformedKey).
  static PublicKey from_pem(const std::string& pem);

  const std::string& pem() const { return pem_; }
  std::size_t signature_size() const;
  bool valid() const { return static_cast<bool>(key_); }
  /// Raw RSA-SHA256 (PKCS#1 v1.5) check; no structural checks on payload.
  bool verify_raw(std::string_view payload, std::string_view signature) const;

  bool operator==(const PublicKey& o) const { return pem_ == o.pem_; }

 private:
  PkeyHandle key_;
  std::string pem_;
};

class KeyPair {
 public:
  KeyPair() = default;

  /// Fresh 2048-bit key from the system RNG.
  static KeyPair generate(std::string device_id, int bits = 2048);
  /// Same (device_id, seed) always yields the same key. Used by the harness
  /// so that simulated runs are reproducible byte for byte.
  static KeyPair derive(std::string device_id, std::string_view seed, int bits = 2048);
  /// Throws Error(KeyUnavailable) if the file is missing or unreadable.
  static KeyPair load(const std::filesystem::path& private_pem, std::string device_id);
  /// Loads the key if present, otherwise generates and stores one.
  static KeyPair load_or_generate(const std::filesystem::path& private_pem, std::string device_id);

  /// Writes PKCS#8 PEM with owner-only permissions.
  void save(const std::filesystem::path& private_pem) const;

  const std::string& device_id() const { return device_id_; }
  const PublicKey& public_key() const { return public_; }
  bool valid() const { return static_cast<bool>(private_); }

  std::string sign_raw(std::string_view payload) const;
  DeviceIdentity identity(DeviceKind kind) const { return {device_id_, kind, public_.pem()}; }

 private:
  KeyPair(std::string device_id, PkeyHandle key);

  std::string device_id_;
  PkeyHandle private_;
  PublicKey public_;
};

struct SignedEnvelope {
  std::string payload;    // canonical bytes
  std::string signature;  // raw signature bytes
  std::string signer;

  bool operator==(const SignedEnvelope&) const = default;
};

/// {payload_b64, signature_b64, signer}
void to_json(nlohmann::json& j, const SignedEnvelope& e);
/// Throws Error(MalformedEnvelope) on missing fields or bad base64.
void from_json(const nlohmann::json& j, SignedEnvelope& e);

/// Throws Error(InvalidReport) when validate_report finds violations.
std::string canonicalize(const EventReport& r);
/// Throws Error(ParseError) if the bytes are not a report.
EventReport parse_report(std::string_view bytes);

/// The key must belong to the report's device (the Node co-signs relayed
/// Mote readings by signing its own report). Throws InvalidReport or
/// KeyUnavailable.
SignedEnvelope sign(const KeyPair& key, const EventReport& r);

/// True iff the signature is valid RSA-SHA256 over the payload.
/// Throws Error(MalformedEnvelope) when the payload is not a JSON document
/// or the signature has the wrong length, which is distinct from a forgery.
bool verify(const PublicKey& key, const SignedEnvelope& e);

/// Canonical bytes of a reading with any attestation stripped.
std::string canonicalize_reading(const SensorReading& r);
/// Mote-side: signs one reading; the payload is canonicalize_reading(r).
SignedEnvelope sign_reading(const KeyPair& key, const SensorReading& r);
/// Reading carried by a Mote envelope with the attestation filled in.
SensorReading attested_reading(const SignedEnvelope& e);
/// Checks a relayed reading's attestation against the Mote key.
bool verify_attestation(const PublicKey& key, const SensorReading& r);

}  // namespace ambox
