#include "ambox/crypto.hpp"

#include <openssl/bn.h>
#include <openssl/core_names.h>
#include <openssl/evp.h>
#include <openssl/param_build.h>
#include <openssl/pem.h>
#include <openssl/rsa.h>

#include <fstream>
#include <sstream>

#include "ambox/error.hpp"

namespace ambox {

namespace {

template <class T, void (*Free)(T*)>
struct Deleter {
  void operator()(T* p) const { Free(p); }
};

using BioPtr = std::unique_ptr<BIO, Deleter<BIO, BIO_free_all>>;
using MdCtxPtr = std::unique_ptr<EVP_MD_CTX, Deleter<EVP_MD_CTX, EVP_MD_CTX_free>>;
using BnPtr = std::unique_ptr<BIGNUM, Deleter<BIGNUM, BN_clear_free>>;
using BnCtxPtr = std::unique_ptr<BN_CTX, Deleter<BN_CTX, BN_CTX_free>>;
using ParamBldPtr = std::unique_ptr<OSSL_PARAM_BLD, Deleter<OSSL_PARAM_BLD, OSSL_PARAM_BLD_free>>;
using ParamPtr = std::unique_ptr<OSSL_PARAM, Deleter<OSSL_PARAM, OSSL_PARAM_free>>;
using PkeyCtxPtr = std::unique_ptr<EVP_PKEY_CTX, Deleter<EVP_PKEY_CTX, EVP_PKEY_CTX_free>>;

PkeyHandle wrap(EVP_PKEY* key) { return PkeyHandle(key, EVP_PKEY_free); }

std::string bio_to_string(BIO* bio) {
  BUF_MEM* mem = nullptr;
  BIO_get_mem_ptr(bio, &mem);
  return std::string(mem->data, mem->length);
}

std::string public_pem(EVP_PKEY* key) {
  BioPtr bio(BIO_new(BIO_s_mem()));
  if (!PEM_write_bio_PUBKEY(bio.get(), key)) throw Error(ErrorCode::MalformedKey, "cannot encode public key");
  return bio_to_string(bio.get());
}

// Counter-mode SHA-256 stream; only feeds deterministic key derivation.
class HashDrbg {
 public:
  explicit HashDrbg(std::string seed) : seed_(std::move(seed)) {}

  std::string bytes(std::size_t n) {
    std::string out;
    while (out.size() < n) {
      out += sha256_raw(seed_ + "#" + std::to_string(counter_++));
    }
    out.resize(n);
    return out;
  }

 private:
  std::string seed_;
  std::uint64_t counter_ = 0;
};

BnPtr derive_prime(HashDrbg& drbg, int bits, const BIGNUM* e, BN_CTX* ctx) {
  auto raw = drbg.bytes(static_cast<std::size_t>(bits / 8));
  raw.front() = static_cast<char>(static_cast<unsigned char>(raw.front()) | 0xC0);  // top two bits
  raw.back() = static_cast<char>(static_cast<unsigned char>(raw.back()) | 0x01);
  BnPtr p(BN_bin2bn(reinterpret_cast<const unsigned char*>(raw.data()), static_cast<int>(raw.size()), nullptr));
  BnPtr p_minus_1(BN_new());
  BnPtr g(BN_new());
  for (;;) {
    if (BN_check_prime(p.get(), ctx, nullptr) == 1) {
      BN_sub(p_minus_1.get(), p.get(), BN_value_one());
      BN_gcd(g.get(), p_minus_1.get(), e, ctx);
      if (BN_is_one(g.get())) return p;
    }
    BN_add_word(p.get(), 2);
  }
}

}  // namespace

// --- hashing / encoding ----------------------------------------------------

std::string sha256_raw(std::string_view data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (!EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr))
    throw Error(ErrorCode::IoFailure, "sha256 failed");
  return std::string(reinterpret_cast<char*>(md), len);
}

std::string sha256_hex(std::string_view data) {
  static constexpr char kHex[] = "0123456789abcdef";
  auto raw = sha256_raw(data);
  std::string out;
  out.reserve(raw.size() * 2);
  for (unsigned char c : raw) {
    out.push_back(kHex[c >> 4]);
    out.push_back(kHex[c & 0xF]);
  }
  return out;
}

std::string base64_encode(std::string_view bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                          reinterpret_cast<const unsigned char*>(bytes.data()), static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::string base64_decode(std::string_view text) {
  if (text.size() % 4 != 0) throw Error(ErrorCode::ParseError, "base64 length not a multiple of 4");
  for (std::size_t i = 0; i < text.size(); ++i) {
    char c = text[i];
    bool alpha = (c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '+' || c == '/';
    bool pad = c == '=' && i + 2 >= text.size() && (i + 1 == text.size() || text[i + 1] == '=');
    if (!alpha && !pad) throw Error(ErrorCode::ParseError, "invalid base64 character");
  }
  std::string out(3 * text.size() / 4, '\0');
  int n = EVP_DecodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                          reinterpret_cast<const unsigned char*>(text.data()), static_cast<int>(text.size()));
  if (n < 0) throw Error(ErrorCode::ParseError, "invalid base64");
  std::size_t padding = 0;
  if (!text.empty() && text.back() == '=') ++padding;
  if (text.size() > 1 && text[text.size() - 2] == '=') ++padding;
  out.resize(static_cast<std::size_t>(n) - padding);
  return out;
}

struct Sha256Stream::Impl {
  MdCtxPtr ctx{EVP_MD_CTX_new()};
};

Sha256Stream::Sha256Stream() : impl_(std::make_unique<Impl>()) {
  EVP_DigestInit_ex(impl_->ctx.get(), EVP_sha256(), nullptr);
}

Sha256Stream::~Sha256Stream() = default;

void Sha256Stream::update(std::string_view data) { EVP_DigestUpdate(impl_->ctx.get(), data.data(), data.size()); }

std::string Sha256Stream::hex() const {
  MdCtxPtr copy(EVP_MD_CTX_new());
  EVP_MD_CTX_copy_ex(copy.get(), impl_->ctx.get());
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(copy.get(), md, &len);
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned i = 0; i < len; ++i) {
    out.push_back(kHex[md[i] >> 4]);
    out.push_back(kHex[md[i] & 0xF]);
  }
  return out;
}

// --- keys ------------------------------------------------------------------

PublicKey PublicKey::from_pem(const std::string& pem) {
  BioPtr bio(BIO_new_mem_buf(pem.data(), static_cast<int>(pem.size())));
  EVP_PKEY* raw = PEM_read_bio_PUBKEY(bio.get(), nullptr, nullptr, nullptr);
  if (raw == nullptr) throw Error(ErrorCode::MalformedKey, "not a PEM public key");
  PublicKey key;
  key.key_ = wrap(raw);
  if (EVP_PKEY_get_base_id(raw) != EVP_PKEY_RSA) throw Error(ErrorCode::MalformedKey, "not an RSA key");
  key.pem_ = public_pem(raw);
  return key;
}

std::size_t PublicKey::signature_size() const {
  return key_ ? static_cast<std::size_t>(EVP_PKEY_get_size(key_.get())) : 0;
}

bool PublicKey::verify_raw(std::string_view payload, std::string_view signature) const {
  if (!key_) throw Error(ErrorCode::MalformedKey, "empty public key");
  MdCtxPtr ctx(EVP_MD_CTX_new());
  if (EVP_DigestVerifyInit(ctx.get(), nullptr, EVP_sha256(), nullptr, key_.get()) != 1)
    throw Error(ErrorCode::MalformedKey, "verify init failed");
  int rc = EVP_DigestVerify(ctx.get(), reinterpret_cast<const unsigned char*>(signature.data()), signature.size(),
                            reinterpret_cast<const unsigned char*>(payload.data()), payload.size());
  return rc == 1;
}

KeyPair::KeyPair(std::string device_id, PkeyHandle key) : device_id_(std::move(device_id)), private_(std::move(key)) {
  public_ = PublicKey::from_pem(public_pem(private_.get()));
}

KeyPair KeyPair::generate(std::string device_id, int bits) {
  EVP_PKEY* raw = EVP_RSA_gen(static_cast<unsigned>(bits));
  if (raw == nullptr) throw Error(ErrorCode::KeyUnavailable, "RSA key generation failed");
  return KeyPair(std::move(device_id), wrap(raw));
}

KeyPair KeyPair::derive(std::string device_id, std::string_view seed, int bits) {
  HashDrbg drbg("ambox-key|" + std::string(seed) + "|" + device_id);
  BnCtxPtr ctx(BN_CTX_new());
  BnPtr e(BN_new());
  BN_set_word(e.get(), RSA_F4);

  BnPtr p, q, n(BN_new());
  for (;;) {
    p = derive_prime(drbg, bits / 2, e.get(), ctx.get());
    q = derive_prime(drbg, bits / 2, e.get(), ctx.get());
    if (BN_cmp(p.get(), q.get()) == 0) continue;
    if (BN_cmp(p.get(), q.get()) < 0) std::swap(p, q);
    BN_mul(n.get(), p.get(), q.get(), ctx.get());
    if (BN_num_bits(n.get()) == bits) break;
  }
  BnPtr p1(BN_new()), q1(BN_new()), phi(BN_new()), d(BN_new()), dp(BN_new()), dq(BN_new()), qinv(BN_new());
  BN_sub(p1.get(), p.get(), BN_value_one());
  BN_sub(q1.get(), q.get(), BN_value_one());
  BN_mul(phi.get(), p1.get(), q1.get(), ctx.get());
  BN_mod_inverse(d.get(), e.get(), phi.get(), ctx.get());
  BN_mod(dp.get(), d.get(), p1.get(), ctx.get());
  BN_mod(dq.get(), d.get(), q1.get(), ctx.get());
  BN_mod_inverse(qinv.get(), q.get(), p.get(), ctx.get());

  ParamBldPtr bld(OSSL_PARAM_BLD_new());
  OSSL_PARAM_BLD_push_BN(bld.get(), OSSL_PKEY_PARAM_RSA_N, n.get());
  OSSL_PARAM_BLD_push_BN(bld.get(), OSSL_PKEY_PARAM_RSA_E, e.get());
  OSSL_PARAM_BLD_push_BN(bld.get(), OSSL_PKEY_PARAM_RSA_D, d.get());
  OSSL_PARAM_BLD_push_BN(bld.get(), OSSL_PKEY_PARAM_RSA_FACTOR1, p.get());
  OSSL_PARAM_BLD_push_BN(bld.get(), OSSL_PKEY_PARAM_RSA_FACTOR2, q.get());
  OSSL_PARAM_BLD_push_BN(bld.get(), OSSL_PKEY_PARAM_RSA_EXPONENT1, dp.get());
  OSSL_PARAM_BLD_push_BN(bld.get(), OSSL_PKEY_PARAM_RSA_EXPONENT2, dq.get());
  OSSL_PARAM_BLD_push_BN(bld.get(), OSSL_PKEY_PARAM_RSA_COEFFICIENT1, qinv.get());
  ParamPtr params(OSSL_PARAM_BLD_to_param(bld.get()));

  PkeyCtxPtr pctx(EVP_PKEY_CTX_new_from_name(nullptr, "RSA", nullptr));
  EVP_PKEY* raw = nullptr;
  if (!pctx || EVP_PKEY_fromdata_init(pctx.get()) != 1 ||
      EVP_PKEY_fromdata(pctx.get(), &raw, EVP_PKEY_KEYPAIR, params.get()) != 1)
    throw Error(ErrorCode::KeyUnavailable, "cannot assemble derived RSA key");
  return KeyPair(std::move(device_id), wrap(raw));
}

KeyPair KeyPair::load(const std::filesystem::path& private_pem, std::string device_id) {
  std::ifstream in(private_pem, std::ios::binary);
  if (!in) throw Error(ErrorCode::KeyUnavailable, "cannot read " + private_pem.string());
  std::stringstream ss;
  ss << in.rdbuf();
  auto pem = ss.str();
  BioPtr bio(BIO_new_mem_buf(pem.data(), static_cast<int>(pem.size())));
  EVP_PKEY* raw = PEM_read_bio_PrivateKey(bio.get(), nullptr, nullptr, nullptr);
  if (raw == nullptr) throw Error(ErrorCode::KeyUnavailable, "not a PEM private key: " + private_pem.string());
  return KeyPair(std::move(device_id), wrap(raw));
}

KeyPair KeyPair::load_or_generate(const std::filesystem::path& private_pem, std::string device_id) {
  if (std::filesystem::exists(private_pem)) return load(private_pem, std::move(device_id));
  auto key = generate(std::move(device_id));
  key.save(private_pem);
  return key;
}

void KeyPair::save(const std::filesystem::path& private_pem) const {
  BioPtr bio(BIO_new(BIO_s_mem()));
  if (!PEM_write_bio_PrivateKey(bio.get(), private_.get(), nullptr, nullptr, 0, nullptr, nullptr))
    throw Error(ErrorCode::IoFailure, "cannot encode private key");
  auto pem = bio_to_string(bio.get());
  if (private_pem.has_parent_path()) std::filesystem::create_directories(private_pem.parent_path());
  {
    std::ofstream out(private_pem, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + private_pem.string());
    out << pem;
  }
  using std::filesystem::perms;
  std::filesystem::permissions(private_pem, perms::owner_read | perms::owner_write);
}

std::string KeyPair::sign_raw(std::string_view payload) const {
  if (!private_) throw Error(ErrorCode::KeyUnavailable, "no private key for " + device_id_);
  MdCtxPtr ctx(EVP_MD_CTX_new());
  if (EVP_DigestSignInit(ctx.get(), nullptr, EVP_sha256(), nullptr, private_.get()) != 1)
    throw Error(ErrorCode::KeyUnavailable, "sign init failed");
  std::size_t len = 0;
  const auto* data = reinterpret_cast<const unsigned char*>(payload.data());
  EVP_DigestSign(ctx.get(), nullptr, &len, data, payload.size());
  std::string sig(len, '\0');
  if (EVP_DigestSign(ctx.get(), reinterpret_cast<unsigned char*>(sig.data()), &len, data, payload.size()) != 1)
    throw Error(ErrorCode::KeyUnavailable, "signing failed");
  sig.resize(len);
  return sig;
}

// --- envelopes ---------------------------------------------------------------

void to_json(nlohmann::json& j, const SignedEnvelope& e) {
  j = nlohmann::json{{"payload_b64", base64_encode(e.payload)},
                     {"signature_b64", base64_encode(e.signature)},
                     {"signer", e.signer}};
}

void from_json(const nlohmann::json& j, SignedEnvelope& e) {
  try {
    e.payload = base64_decode(j.at("payload_b64").get<std::string>());
    e.signature = base64_decode(j.at("signature_b64").get<std::string>());
    e.signer = j.at("signer").get<std::string>();
  } catch (const Error& err) {
    throw Error(ErrorCode::MalformedEnvelope, err.what());
  } catch (const nlohmann::json::exception& err) {
    throw Error(ErrorCode::MalformedEnvelope, err.what());
  }
}

std::string canonicalize(const EventReport& r) {
  auto violations = validate_report(r);
  if (!violations.empty()) {
    std::string detail;
    for (const auto& v : violations) detail += (detail.empty() ? "" : "; ") + v;
    throw Error(ErrorCode::InvalidReport, detail);
  }
  return canonical_json(nlohmann::json(r));
}

EventReport parse_report(std::string_view bytes) {
  try {
    return nlohmann::json::parse(bytes).get<EventReport>();
  } catch (const nlohmann::json::exception& err) {
    throw Error(ErrorCode::ParseError, err.what());
  }
}

SignedEnvelope sign(const KeyPair& key, const EventReport& r) {
  auto payload = canonicalize(r);
  if (key.device_id() != r.device_id)
    throw Error(ErrorCode::KeyUnavailable, "key of '" + key.device_id() + "' cannot sign for '" + r.device_id + "'");
  return SignedEnvelope{payload, key.sign_raw(payload), key.device_id()};
}

bool verify(const PublicKey& key, const SignedEnvelope& e) {
  if (!key.valid()) throw Error(ErrorCode::MalformedKey, "empty public key");
  if (e.signature.size() != key.signature_size())
    throw Error(ErrorCode::MalformedEnvelope, "signature length does not match key");
  if (!nlohmann::json::accept(e.payload)) throw Error(ErrorCode::MalformedEnvelope, "payload is not a JSON document");
  return key.verify_raw(e.payload, e.signature);
}

std::string canonicalize_reading(const SensorReading& r) {
  SensorReading bare = r;
  bare.attestation.reset();
  return canonical_json(nlohmann::json(bare));
}

SignedEnvelope sign_reading(const KeyPair& key, const SensorReading& r) {
  if (key.device_id() != r.source_device)
    throw Error(ErrorCode::KeyUnavailable, "reading source differs from key owner");
  auto payload = canonicalize_reading(r);
  return SignedEnvelope{payload, key.sign_raw(payload), key.device_id()};
}

SensorReading attested_reading(const SignedEnvelope& e) {
  SensorReading r;
  try {
    r = nlohmann::json::parse(e.payload).get<SensorReading>();
  } catch (const nlohmann::json::exception& err) {
    throw Error(ErrorCode::MalformedEnvelope, err.what());
  } catch (const Error& err) {
    throw Error(ErrorCode::MalformedEnvelope, err.what());
  }
  r.attestation = Attestation{e.signer, base64_encode(e.signature)};
  return r;
}

bool verify_attestation(const PublicKey& key, const SensorReading& r) {
  if (!r.attestation) return false;
  SignedEnvelope e{canonicalize_reading(r), base64_decode(r.attestation->signature_b64), r.attestation->signer};
  return verify(key, e);
}

}  // namespace ambox
