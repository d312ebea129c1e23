#include "vflab/paillier.hpp"

#include <fmt/format.h>

#include <cmath>
#include <random>

namespace vflab::he {

namespace {

std::uint64_t low_limb(const mpz_class& v) {
  return static_cast<std::uint64_t>(mpz_getlimbn(v.get_mpz_t(), 0));
}

std::size_t byte_width(const mpz_class& v) { return (mpz_sizeinbase(v.get_mpz_t(), 2) + 7) / 8; }

std::unique_ptr<gmp_randclass> make_rng(std::optional<std::uint64_t> seed) {
  auto rng = std::make_unique<gmp_randclass>(gmp_randinit_mt);
  std::uint64_t s = 0;
  if (seed) {
    s = *seed;
  } else {
    std::random_device rd;
    s = (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
  }
  rng->seed(mpz_class(std::to_string(s)));
  return rng;
}

mpz_class random_prime(gmp_randclass& rng, unsigned bits) {
  while (true) {
    mpz_class candidate = rng.get_z_bits(bits);
    // Top two bits set so that the product of two such primes has exactly 2*bits bits.
    mpz_setbit(candidate.get_mpz_t(), bits - 1);
    mpz_setbit(candidate.get_mpz_t(), bits - 2);
    mpz_nextprime(candidate.get_mpz_t(), candidate.get_mpz_t());
    if (mpz_sizeinbase(candidate.get_mpz_t(), 2) == bits) return candidate;
  }
}

PublicKey make_public(const mpz_class& n, unsigned bits) {
  PublicKey pk;
  pk.n = n;
  pk.n_squared = n * n;
  pk.half_n = n / 2;
  pk.bits = bits;
  pk.fingerprint = low_limb(n);
  return pk;
}

void check_compatible(const PublicKey& pk, const Ciphertext& a, const Ciphertext& b) {
  if (a.scale_bits != b.scale_bits)
    throw CryptoError(fmt::format("scale mismatch: 2^{} vs 2^{}", a.scale_bits, b.scale_bits));
  if (a.key != pk.fingerprint || b.key != pk.fingerprint)
    throw CryptoError("ciphertexts were produced under a different public key");
}

}  // namespace

KeyPair keygen(unsigned bit_length, std::optional<std::uint64_t> seed) {
  if (bit_length != 512 && bit_length != 1024 && bit_length != 2048)
    throw CryptoError(fmt::format("unsupported key size {} (use 512, 1024 or 2048)", bit_length));

  auto rng = make_rng(seed);
  const unsigned half = bit_length / 2;
  mpz_class p, q, n;
  while (true) {
    p = random_prime(*rng, half);
    q = random_prime(*rng, half);
    if (p == q) continue;
    n = p * q;
    const mpz_class phi = (p - 1) * (q - 1);
    mpz_class g;
    mpz_gcd(g.get_mpz_t(), n.get_mpz_t(), phi.get_mpz_t());
    if (g == 1 && mpz_sizeinbase(n.get_mpz_t(), 2) == bit_length) break;
  }
  if (p < q) std::swap(p, q);

  KeyPair kp;
  kp.pub = make_public(n, bit_length);
  auto& sk = kp.priv;
  sk.p = p;
  sk.q = q;
  const mpz_class pm1 = p - 1, qm1 = q - 1;
  mpz_lcm(sk.lambda.get_mpz_t(), pm1.get_mpz_t(), qm1.get_mpz_t());
  // With g = n + 1, L(g^lambda mod n^2) = lambda mod n.
  if (mpz_invert(sk.mu.get_mpz_t(), sk.lambda.get_mpz_t(), n.get_mpz_t()) == 0)
    throw CryptoError("lambda not invertible mod n");

  sk.p_squared = p * p;
  sk.q_squared = q * q;
  const mpz_class g = n + 1;
  auto h_factor = [&](const mpz_class& prime, const mpz_class& prime_sq, mpz_class& out) {
    mpz_class t;
    const mpz_class e = prime - 1;
    mpz_powm(t.get_mpz_t(), g.get_mpz_t(), e.get_mpz_t(), prime_sq.get_mpz_t());
    t = (t - 1) / prime;
    if (mpz_invert(out.get_mpz_t(), t.get_mpz_t(), prime.get_mpz_t()) == 0)
      throw CryptoError("CRT constant not invertible");
  };
  h_factor(p, sk.p_squared, sk.hp);
  h_factor(q, sk.q_squared, sk.hq);
  mpz_invert(sk.q_inv_p.get_mpz_t(), q.get_mpz_t(), p.get_mpz_t());
  return kp;
}

// ---------------------------------------------------------------------------

mpz_class FixedPoint::encode(double m, const PublicKey& pk) const {
  if (!std::isfinite(m)) throw CryptoError("cannot encode a non-finite value");
  const double scaled = std::nearbyint(std::ldexp(m, scale_bits));
  mpz_class z(scaled);
  if (abs(z) > pk.half_n) throw CryptoError(fmt::format("plaintext {} overflows the key's range", m));
  if (z < 0) z += pk.n;
  return z;
}

double FixedPoint::decode(const mpz_class& v, const PublicKey& pk) const {
  mpz_class z = v;
  if (z > pk.half_n) z -= pk.n;
  mpz_class q, r;
  mpz_fdiv_q_2exp(q.get_mpz_t(), z.get_mpz_t(), static_cast<mp_bitcnt_t>(scale_bits));
  mpz_fdiv_r_2exp(r.get_mpz_t(), z.get_mpz_t(), static_cast<mp_bitcnt_t>(scale_bits));
  return q.get_d() + std::ldexp(r.get_d(), -scale_bits);
}

// ---------------------------------------------------------------------------

Encryptor::Encryptor(PublicKey pk, std::optional<std::uint64_t> seed, int scale_bits)
    : pk_(std::move(pk)), scale_bits_(scale_bits), rng_(make_rng(seed)) {}
Encryptor::Encryptor(Encryptor&&) noexcept = default;
Encryptor& Encryptor::operator=(Encryptor&&) noexcept = default;
Encryptor::~Encryptor() = default;

Ciphertext Encryptor::encrypt(double m) {
  return encrypt_encoded(FixedPoint{scale_bits_}.encode(m, pk_));
}

Ciphertext Encryptor::encrypt_encoded(const mpz_class& plain) {
  mpz_class r;
  do {
    r = rng_->get_z_range(pk_.n);
  } while (r == 0);
  Ciphertext c;
  c.scale_bits = scale_bits_;
  c.key = pk_.fingerprint;
  mpz_powm(c.value.get_mpz_t(), r.get_mpz_t(), pk_.n.get_mpz_t(), pk_.n_squared.get_mpz_t());
  // (n+1)^m = 1 + m*n (mod n^2)
  mpz_class gm = plain * pk_.n + 1;
  c.value = (c.value * gm) % pk_.n_squared;
  return c;
}

Ciphertext add(const PublicKey& pk, const Ciphertext& a, const Ciphertext& b) {
  check_compatible(pk, a, b);
  Ciphertext out{(a.value * b.value) % pk.n_squared, a.scale_bits, a.key};
  return out;
}

void add_into(const PublicKey& pk, Ciphertext& acc, const Ciphertext& b) {
  check_compatible(pk, acc, b);
  mpz_mul(acc.value.get_mpz_t(), acc.value.get_mpz_t(), b.value.get_mpz_t());
  mpz_mod(acc.value.get_mpz_t(), acc.value.get_mpz_t(), pk.n_squared.get_mpz_t());
}

Ciphertext sum_encrypted(const PublicKey& pk, std::span<const Ciphertext> cs, int scale_bits) {
  Ciphertext acc{mpz_class(1), cs.empty() ? scale_bits : cs.front().scale_bits, pk.fingerprint};
  for (const auto& c : cs) add_into(pk, acc, c);
  return acc;
}

std::vector<Ciphertext> add_vector(const PublicKey& pk, std::span<const Ciphertext> a,
                                   std::span<const Ciphertext> b) {
  if (a.size() != b.size()) throw CryptoError("add_vector: length mismatch");
  std::vector<Ciphertext> out;
  out.reserve(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out.push_back(add(pk, a[i], b[i]));
  return out;
}

Ciphertext multiply_plain(const PublicKey& pk, const Ciphertext& c, std::int64_t k) {
  if (c.key != pk.fingerprint) throw CryptoError("ciphertext was produced under a different public key");
  mpz_class e;
  if (k >= 0) {
    e = static_cast<unsigned long>(k);
  } else {
    e = pk.n - mpz_class(static_cast<unsigned long>(-(k + 1))) - 1;
  }
  Ciphertext out{0, c.scale_bits, c.key};
  mpz_powm(out.value.get_mpz_t(), c.value.get_mpz_t(), e.get_mpz_t(), pk.n_squared.get_mpz_t());
  return out;
}

Ciphertext subtract(const PublicKey& pk, const Ciphertext& a, const Ciphertext& b) {
  check_compatible(pk, a, b);
  mpz_class inv;
  if (mpz_invert(inv.get_mpz_t(), b.value.get_mpz_t(), pk.n_squared.get_mpz_t()) == 0)
    throw CryptoError("ciphertext not invertible");
  return Ciphertext{(a.value * inv) % pk.n_squared, a.scale_bits, a.key};
}

mpz_class decrypt_raw(const KeyPair& keys, const Ciphertext& c) {
  const auto& pk = keys.pub;
  const auto& sk = keys.priv;
  if (c.key != pk.fingerprint) throw CryptoError("ciphertext was produced under a different key pair");
  if (c.value <= 0 || c.value >= pk.n_squared) throw CryptoError("ciphertext outside [1, n^2)");

  auto half = [&](const mpz_class& prime, const mpz_class& prime_sq, const mpz_class& h) {
    mpz_class t;
    const mpz_class e = prime - 1;
    const mpz_class base = c.value % prime_sq;
    mpz_powm(t.get_mpz_t(), base.get_mpz_t(), e.get_mpz_t(), prime_sq.get_mpz_t());
    t = (t - 1) / prime;
    return mpz_class((t * h) % prime);
  };
  const mpz_class mp = half(sk.p, sk.p_squared, sk.hp);
  const mpz_class mq = half(sk.q, sk.q_squared, sk.hq);
  mpz_class diff = ((mp - mq) * sk.q_inv_p) % sk.p;
  if (diff < 0) diff += sk.p;
  return mq + diff * sk.q;
}

double decrypt(const KeyPair& keys, const Ciphertext& c) {
  return FixedPoint{c.scale_bits}.decode(decrypt_raw(keys, c), keys.pub);
}

// ---------------------------------------------------------------------------

std::size_t serialized_size(const PublicKey& pk) { return byte_width(pk.n_squared) + 4; }

std::vector<std::uint8_t> serialize(const Ciphertext& c, const PublicKey& pk) {
  if (c.key != pk.fingerprint) throw CryptoError("serializing a ciphertext under the wrong key");
  const std::size_t width = byte_width(pk.n_squared);
  std::vector<std::uint8_t> out(width + 4, 0);
  std::size_t count = 0;
  const std::size_t used = byte_width(c.value);
  if (used > width) throw CryptoError("ciphertext larger than n^2");
  mpz_export(out.data() + (width - used), &count, 1, 1, 1, 0, c.value.get_mpz_t());
  const auto tag = static_cast<std::uint32_t>(c.scale_bits);
  out[width + 0] = static_cast<std::uint8_t>(tag >> 24);
  out[width + 1] = static_cast<std::uint8_t>(tag >> 16);
  out[width + 2] = static_cast<std::uint8_t>(tag >> 8);
  out[width + 3] = static_cast<std::uint8_t>(tag);
  return out;
}

Ciphertext deserialize(std::span<const std::uint8_t> bytes, const PublicKey& pk) {
  const std::size_t width = byte_width(pk.n_squared);
  if (bytes.size() != width + 4) throw CryptoError("serialized ciphertext has the wrong length");
  Ciphertext c;
  mpz_import(c.value.get_mpz_t(), width, 1, 1, 1, 0, bytes.data());
  if (c.value >= pk.n_squared) throw CryptoError("deserialized ciphertext outside [0, n^2)");
  c.scale_bits = static_cast<int>((std::uint32_t{bytes[width]} << 24) | (std::uint32_t{bytes[width + 1]} << 16) |
                                  (std::uint32_t{bytes[width + 2]} << 8) | std::uint32_t{bytes[width + 3]});
  c.key = pk.fingerprint;
  return c;
}

std::vector<std::uint8_t> serialize_public_key(const PublicKey& pk) {
  const std::size_t width = (pk.bits + 7) / 8;
  std::vector<std::uint8_t> out(4 + width, 0);
  out[0] = static_cast<std::uint8_t>(pk.bits >> 24);
  out[1] = static_cast<std::uint8_t>(pk.bits >> 16);
  out[2] = static_cast<std::uint8_t>(pk.bits >> 8);
  out[3] = static_cast<std::uint8_t>(pk.bits);
  std::size_t count = 0;
  mpz_export(out.data() + 4 + (width - byte_width(pk.n)), &count, 1, 1, 1, 0, pk.n.get_mpz_t());
  return out;
}

PublicKey deserialize_public_key(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4) throw CryptoError("truncated public key");
  const unsigned bits = (unsigned{bytes[0]} << 24) | (unsigned{bytes[1]} << 16) | (unsigned{bytes[2]} << 8) | bytes[3];
  const std::size_t width = (bits + 7) / 8;
  if (bytes.size() != 4 + width) throw CryptoError("public key has the wrong length");
  mpz_class n;
  mpz_import(n.get_mpz_t(), width, 1, 1, 1, 0, bytes.data() + 4);
  return make_public(n, bits);
}

}  // namespace vflab::he
