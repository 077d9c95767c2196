// SPDX-License-Identifier: Apache-2.0

#include "revdedup/store.hpp"

#include <cerrno>
#include <cstdio>
#include <cstring>

namespace revdedup {

namespace {

constexpr std::uint32_t kStoreMetaMagic = 0x4f545352;  // "RSTO"
constexpr std::uint32_t kFormatVersion = 1;
constexpr std::size_t kStoreMetaSize = 32;

}  // namespace

void Store::create(const std::filesystem::path& root,
                   const StoreOptions& options) {
  if (std::filesystem::exists(root / "store.meta")) {
    throw UsageError("store already exists at " + root.string());
  }
  std::filesystem::create_directories(root);
  root_ = root;
  capacity_ = options.container_capacity;
  next_timestamp_ = 1;
  write_store_meta();
  meta_.open(root_);
  containers_.open(root_, capacity_);
}

void Store::open(const std::filesystem::path& root) {
  if (!std::filesystem::exists(root / "store.meta")) {
    throw UsageError("no store at " + root.string());
  }
  root_ = root;
  read_store_meta();
  meta_.open(root_);
  containers_.open(root_, capacity_);
}

void Store::flush() {
  meta_.flush();
  containers_.flush();
}

void Store::write_store_meta() {
  std::uint8_t buf[kStoreMetaSize] = {};
  put_u32(buf, kStoreMetaMagic);
  put_u32(buf + 8, kFormatVersion);
  put_u64(buf + 16, capacity_);
  put_u64(buf + 24, next_timestamp_);
  put_u32(buf + 4, crc32(std::span(buf + 8, kStoreMetaSize - 8)));

  auto path = root_ / "store.meta";
  auto tmp = root_ / "store.meta.tmp";
  std::FILE* f = std::fopen(tmp.c_str(), "wb");
  if (f == nullptr) {
    throw IoError("open " + tmp.string() + ": " + std::strerror(errno));
  }
  bool ok = std::fwrite(buf, 1, sizeof(buf), f) == sizeof(buf) &&
            std::fflush(f) == 0;
  std::fclose(f);
  if (!ok) {
    throw IoError("write " + tmp.string() + ": " + std::strerror(errno));
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    throw IoError("rename " + tmp.string() + ": " + ec.message());
  }
}

void Store::read_store_meta() {
  auto path = root_ / "store.meta";
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (f == nullptr) {
    throw IoError("open " + path.string() + ": " + std::strerror(errno));
  }
  std::uint8_t buf[kStoreMetaSize];
  bool ok = std::fread(buf, 1, sizeof(buf), f) == sizeof(buf);
  std::fclose(f);
  if (!ok) {
    throw IntegrityError(path.string() + ": truncated store metadata");
  }
  if (get_u32(buf) != kStoreMetaMagic) {
    throw IntegrityError(path.string() + ": bad store magic");
  }
  if (get_u32(buf + 4) != crc32(std::span(buf + 8, kStoreMetaSize - 8))) {
    throw IntegrityError(path.string() + ": store metadata checksum mismatch");
  }
  std::uint32_t version = get_u32(buf + 8);
  if (version != kFormatVersion) {
    throw IntegrityError(path.string() + ": unsupported format version " +
                         std::to_string(version));
  }
  capacity_ = get_u64(buf + 16);
  next_timestamp_ = get_u64(buf + 24);
}

Timestamp Store::allocate_timestamp() {
  Timestamp t = next_timestamp_++;
  write_store_meta();
  return t;
}

std::vector<std::uint8_t> Store::segment_bytes(const SegmentMeta& seg) {
  if (seg.deleted) {
    throw IntegrityError("segment " + std::to_string(seg.seg_id) +
                         ": payload was reclaimed");
  }
  return containers_.read_payload(seg.container_id, seg.offset_in_container,
                                  seg.stored_length);
}

}  // namespace revdedup
