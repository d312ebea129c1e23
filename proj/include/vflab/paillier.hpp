#pragma once

#include <gmpxx.h>

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "vflab/common.hpp"

namespace vflab::he {

inline constexpr int kDefaultScaleBits = 40;
inline constexpr unsigned kDefaultKeyBits = 2048;

/// Public half of a Paillier key with generator g = n + 1.
struct PublicKey {
  mpz_class n;
  mpz_class n_squared;
  mpz_class half_n;  // plaintexts >= n/2 decode as negative
  unsigned bits = 0;
  std::uint64_t fingerprint = 0;  // low 64 bits of n; identifies the key in ciphertexts

  mpz_class g() const { return n + 1; }
};

struct PrivateKey {
  mpz_class lambda;  // lcm(p-1, q-1)
  mpz_class mu;      // L(g^lambda mod n^2)^-1 mod n
  mpz_class p, q;
  // CRT decryption constants
  mpz_class p_squared, q_squared, hp, hq, q_inv_p;
};

struct KeyPair {
  PublicKey pub;
  PrivateKey priv;
};

/// Supported sizes: 512 (tests), 1024, 2048. Seeded generation is deterministic.
KeyPair keygen(unsigned bit_length, std::optional<std::uint64_t> seed = std::nullopt);

/// Fixed-point real encoding into Z_n: round(m * 2^scale_bits), negatives wrap to n - |z|.
struct FixedPoint {
  int scale_bits = kDefaultScaleBits;

  mpz_class encode(double m, const PublicKey& pk) const;
  double decode(const mpz_class& v, const PublicKey& pk) const;
};

struct Ciphertext {
  mpz_class value;  // in [0, n^2)
  int scale_bits = kDefaultScaleBits;
  std::uint64_t key = 0;  // PublicKey::fingerprint
};

/// Randomized encryption. Owns its randomness so that parties can encrypt independently.
class Encryptor {
 public:
  explicit Encryptor(PublicKey pk, std::optional<std::uint64_t> seed = std::nullopt,
                     int scale_bits = kDefaultScaleBits);
  Encryptor(Encryptor&&) noexcept;
  Encryptor& operator=(Encryptor&&) noexcept;
  ~Encryptor();

  /// Throws CryptoError if |m| >= n / 2^(scale_bits+1).
  Ciphertext encrypt(double m);
  /// Encrypts an already-encoded plaintext in [0, n).
  Ciphertext encrypt_encoded(const mpz_class& plain);

  const PublicKey& public_key() const { return pk_; }
  int scale_bits() const { return scale_bits_; }

 private:
  PublicKey pk_;
  int scale_bits_;
  std::unique_ptr<gmp_randclass> rng_;
};

/// Homomorphic addition. Operands must carry the same scale tag and key.
Ciphertext add(const PublicKey& pk, const Ciphertext& a, const Ciphertext& b);
/// In-place variant used by histogram accumulation.
void add_into(const PublicKey& pk, Ciphertext& acc, const Ciphertext& b);
/// Sum of a list; the empty sum is the trivial encryption of zero (value 1).
Ciphertext sum_encrypted(const PublicKey& pk, std::span<const Ciphertext> cs,
                         int scale_bits = kDefaultScaleBits);
std::vector<Ciphertext> add_vector(const PublicKey& pk, std::span<const Ciphertext> a,
                                   std::span<const Ciphertext> b);
/// Multiplies the plaintext by an integer (ciphertext exponentiation); scale tag unchanged.
Ciphertext multiply_plain(const PublicKey& pk, const Ciphertext& c, std::int64_t k);
/// a - b, via the modular inverse of b.
Ciphertext subtract(const PublicKey& pk, const Ciphertext& a, const Ciphertext& b);

/// Raw plaintext in [0, n) (CRT decryption).
mpz_class decrypt_raw(const KeyPair& keys, const Ciphertext& c);
double decrypt(const KeyPair& keys, const Ciphertext& c);

/// Big-endian `value` padded to the width of n^2, followed by the scale tag (u32 BE).
std::vector<std::uint8_t> serialize(const Ciphertext& c, const PublicKey& pk);
Ciphertext deserialize(std::span<const std::uint8_t> bytes, const PublicKey& pk);
std::size_t serialized_size(const PublicKey& pk);

std::vector<std::uint8_t> serialize_public_key(const PublicKey& pk);
PublicKey deserialize_public_key(std::span<const std::uint8_t> bytes);

}  // namespace vflab::he
