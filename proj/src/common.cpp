// SPDX-License-Identifier: Apache-2.0

#include "revdedup/common.hpp"

#include <openssl/evp.h>
#include <zlib.h>

#include <utility>

namespace revdedup {

namespace {

constexpr char kHexDigits[] = "0123456789abcdef";

int hex_value(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  return -1;
}

EVP_MD_CTX* new_sha1_ctx() {
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (ctx == nullptr || EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) != 1) {
    EVP_MD_CTX_free(ctx);
    throw IoError("sha1: digest context initialisation failed");
  }
  return ctx;
}

}  // namespace

std::string Fingerprint::hex() const {
  std::string out;
  out.reserve(kSize * 2);
  for (std::uint8_t b : bytes) {
    out.push_back(kHexDigits[b >> 4]);
    out.push_back(kHexDigits[b & 0xf]);
  }
  return out;
}

Fingerprint Fingerprint::from_hex(std::string_view text) {
  if (text.size() != kSize * 2) {
    throw UsageError("fingerprint: expected 40 hex digits, got " +
                     std::to_string(text.size()));
  }
  Fingerprint fp;
  for (std::size_t i = 0; i < kSize; ++i) {
    int hi = hex_value(text[2 * i]);
    int lo = hex_value(text[2 * i + 1]);
    if (hi < 0 || lo < 0) {
      throw UsageError("fingerprint: invalid hex digit");
    }
    fp.bytes[i] = static_cast<std::uint8_t>(hi << 4 | lo);
  }
  return fp;
}

Fingerprint sha1(std::span<const std::uint8_t> data) {
  Fingerprint fp;
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), fp.bytes.data(), &len, EVP_sha1(),
                 nullptr) != 1 ||
      len != Fingerprint::kSize) {
    throw IoError("sha1: digest computation failed");
  }
  return fp;
}

Sha1Stream::Sha1Stream() : ctx_(new_sha1_ctx()) {}

Sha1Stream::Sha1Stream(Sha1Stream&& other) noexcept
    : ctx_(std::exchange(other.ctx_, nullptr)),
      bytes_seen_(std::exchange(other.bytes_seen_, 0)) {}

Sha1Stream& Sha1Stream::operator=(Sha1Stream&& other) noexcept {
  if (this != &other) {
    EVP_MD_CTX_free(static_cast<EVP_MD_CTX*>(ctx_));
    ctx_ = std::exchange(other.ctx_, nullptr);
    bytes_seen_ = std::exchange(other.bytes_seen_, 0);
  }
  return *this;
}

Sha1Stream::~Sha1Stream() { EVP_MD_CTX_free(static_cast<EVP_MD_CTX*>(ctx_)); }

void Sha1Stream::update(std::span<const std::uint8_t> data) {
  if (EVP_DigestUpdate(static_cast<EVP_MD_CTX*>(ctx_), data.data(),
                       data.size()) != 1) {
    throw IoError("sha1: digest update failed");
  }
  bytes_seen_ += data.size();
}

Fingerprint Sha1Stream::finish() {
  Fingerprint fp;
  unsigned int len = 0;
  auto* ctx = static_cast<EVP_MD_CTX*>(ctx_);
  if (EVP_DigestFinal_ex(ctx, fp.bytes.data(), &len) != 1 ||
      len != Fingerprint::kSize ||
      EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) != 1) {
    throw IoError("sha1: digest finalisation failed");
  }
  bytes_seen_ = 0;
  return fp;
}

std::uint32_t crc32(std::span<const std::uint8_t> data) {
  return static_cast<std::uint32_t>(
      ::crc32_z(0, data.data(), data.size()));
}

bool all_zero(std::span<const std::uint8_t> data) {
  for (std::uint8_t b : data) {
    if (b != 0) return false;
  }
  return true;
}

}  // namespace revdedup
