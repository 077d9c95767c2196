// SPDX-License-Identifier: Apache-2.0

#include "revdedup/container_store.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <cstdio>
#include <cstring>
#include <memory>

namespace revdedup {

namespace {

constexpr std::uint32_t kContainerRecordMagic = 0x52544352;  // "RCTR"
constexpr std::uint32_t kContainerFileMagic = 0x48464352;    // "RCFH"

constexpr std::uint32_t kCtrFlagSealed = 1u << 0;
constexpr std::uint32_t kCtrFlagDeleted = 1u << 1;

void encode_info(const ContainerInfo& info, std::span<std::uint8_t> out) {
  std::uint8_t* p = out.data();
  std::memset(p, 0, kContainerRecordSize);
  put_u32(p, kContainerRecordMagic);
  put_u32(p + 8, info.container_id);
  std::uint32_t flags = (info.sealed ? kCtrFlagSealed : 0) |
                        (info.deleted ? kCtrFlagDeleted : 0);
  put_u32(p + 12, flags);
  put_u64(p + 16, info.timestamp);
  put_u64(p + 24, info.payload_bytes);
  put_u32(p + 32, info.segment_count);
  put_u32(p + 4, crc32(std::span(p + 8, kContainerRecordSize - 8)));
}

ContainerInfo decode_info(std::span<const std::uint8_t> in, std::uint32_t id) {
  const std::uint8_t* p = in.data();
  if (get_u32(p) != kContainerRecordMagic) {
    throw IntegrityError("container record " + std::to_string(id) +
                         ": bad magic");
  }
  if (get_u32(p + 4) != crc32(std::span(p + 8, kContainerRecordSize - 8))) {
    throw IntegrityError("container record " + std::to_string(id) +
                         ": checksum mismatch");
  }
  ContainerInfo info;
  info.container_id = get_u32(p + 8);
  if (info.container_id != id) {
    throw IntegrityError("container record " + std::to_string(id) +
                         ": identity mismatch");
  }
  std::uint32_t flags = get_u32(p + 12);
  info.sealed = (flags & kCtrFlagSealed) != 0;
  info.deleted = (flags & kCtrFlagDeleted) != 0;
  info.timestamp = get_u64(p + 16);
  info.payload_bytes = get_u64(p + 24);
  info.segment_count = get_u32(p + 32);
  return info;
}

int open_fd(const std::filesystem::path& path, int flags, mode_t mode = 0644) {
  int fd = ::open(path.c_str(), flags | O_CLOEXEC, mode);
  if (fd < 0) {
    throw IoError("open " + path.string() + ": " + std::strerror(errno));
  }
  return fd;
}

void pread_exact(int fd, std::span<std::uint8_t> out, std::uint64_t offset,
                 const std::filesystem::path& path) {
  std::size_t done = 0;
  while (done < out.size()) {
    ssize_t n = ::pread(fd, out.data() + done, out.size() - done,
                        static_cast<off_t>(offset + done));
    if (n < 0) {
      if (errno == EINTR) continue;
      throw IoError("read " + path.string() + ": " + std::strerror(errno));
    }
    if (n == 0) {
      throw IntegrityError(path.string() + ": truncated container file");
    }
    done += static_cast<std::size_t>(n);
  }
}

void write_exact(int fd, std::span<const std::uint8_t> data,
                 const std::filesystem::path& path) {
  std::size_t done = 0;
  while (done < data.size()) {
    ssize_t n = ::write(fd, data.data() + done, data.size() - done);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw IoError("write " + path.string() + ": " + std::strerror(errno));
    }
    done += static_cast<std::size_t>(n);
  }
}

}  // namespace

IoCounters::Snapshot IoCounters::snapshot() const {
  return Snapshot{containers_written.load(), containers_read.load(),
                  payload_bytes_written.load(), payload_bytes_read.load()};
}

void IoCounters::reset() {
  containers_written = 0;
  containers_read = 0;
  payload_bytes_written = 0;
  payload_bytes_read = 0;
}

ContainerStore::~ContainerStore() {
  {
    std::lock_guard lock(prefetch_mutex_);
    prefetch_stop_ = true;
  }
  prefetch_cv_.notify_all();
  if (prefetch_thread_.joinable()) prefetch_thread_.join();
}

void ContainerStore::open(const std::filesystem::path& root,
                          std::uint64_t capacity) {
  if (capacity == 0 || capacity > UINT32_MAX) {
    throw UsageError("container capacity must be in (0, 4 GiB)");
  }
  capacity_ = capacity;
  dir_ = root / "containers";
  std::filesystem::create_directories(dir_);
  log_.open(root / "containers.log", kContainerRecordSize,
            kContainerRecordMagic);
  if (!prefetch_thread_.joinable()) {
    prefetch_thread_ = std::thread([this] { prefetch_loop(); });
  }
}

void ContainerStore::flush() { log_.flush(); }

std::uint32_t ContainerStore::container_count() const {
  return static_cast<std::uint32_t>(log_.count());
}

ContainerInfo ContainerStore::info(std::uint32_t id) const {
  return decode_info(std::span(log_.record_ptr(id), kContainerRecordSize), id);
}

std::vector<ContainerInfo> ContainerStore::list() const {
  std::vector<ContainerInfo> out;
  out.reserve(log_.count());
  for (std::uint32_t i = 0; i < log_.count(); ++i) out.push_back(info(i));
  return out;
}

std::filesystem::path ContainerStore::container_path(std::uint32_t id) const {
  return dir_ / ("ctr." + std::to_string(id));
}

std::uint32_t ContainerStore::allocate_id() {
  ContainerInfo placeholder;
  placeholder.container_id = static_cast<std::uint32_t>(log_.count());
  std::uint8_t rec[kContainerRecordSize];
  encode_info(placeholder, rec);
  return static_cast<std::uint32_t>(log_.append(rec));
}

ContainerStore::Builder::Placement ContainerStore::Builder::add(
    std::uint64_t seg_id, std::span<const std::uint8_t> bytes) {
  if (open_ && !payload_.empty() &&
      payload_.size() + bytes.size() > store_.capacity_) {
    seal();
  }
  if (!open_) {
    current_id_ = store_.allocate_id();
    open_ = true;
  }
  Placement placement{current_id_, static_cast<std::uint32_t>(payload_.size())};
  directory_.push_back(
      ContainerSegment{seg_id, payload_.size(), bytes.size()});
  payload_.insert(payload_.end(), bytes.begin(), bytes.end());
  return placement;
}

void ContainerStore::Builder::seal() {
  if (!open_) return;
  store_.seal_container(current_id_, stamp_, directory_, payload_);
  directory_.clear();
  payload_.clear();
  open_ = false;
}

ContainerStore::Builder::~Builder() {
  // Placements were already handed out; losing the buffered bytes would
  // corrupt the store, so a failure to seal here is fatal.
  try {
    seal();
  } catch (const std::exception& e) {
    std::fprintf(stderr, "fatal: container seal failed in destructor: %s\n",
                 e.what());
    std::abort();
  }
}

void ContainerStore::seal_container(std::uint32_t id, Timestamp stamp,
                                    std::span<const ContainerSegment> directory,
                                    std::span<const std::uint8_t> payload) {
  std::vector<std::uint8_t> buf(kContainerHeaderSize +
                                directory.size() * kContainerDirEntrySize);
  std::uint8_t* p = buf.data();
  put_u32(p, kContainerFileMagic);
  put_u32(p + 8, id);
  put_u32(p + 12, static_cast<std::uint32_t>(directory.size()));
  put_u64(p + 16, payload.size());
  put_u64(p + 24, stamp);
  for (std::size_t i = 0; i < directory.size(); ++i) {
    std::uint8_t* d = p + kContainerHeaderSize + i * kContainerDirEntrySize;
    put_u64(d, directory[i].seg_id);
    put_u64(d + 8, directory[i].offset);
    put_u64(d + 16, directory[i].length);
  }
  // The header checksum covers the header tail and the whole directory.
  put_u32(p + 4, crc32(std::span(p + 8, buf.size() - 8)));

  auto path = container_path(id);
  int fd = open_fd(path, O_WRONLY | O_CREAT | O_TRUNC);
  try {
    write_exact(fd, buf, path);
    write_exact(fd, payload, path);
    if (::fsync(fd) != 0) {
      throw IoError("fsync " + path.string() + ": " + std::strerror(errno));
    }
  } catch (...) {
    ::close(fd);
    throw;
  }
  ::close(fd);

  ContainerInfo info;
  info.container_id = id;
  info.timestamp = stamp;
  info.payload_bytes = payload.size();
  info.segment_count = static_cast<std::uint32_t>(directory.size());
  info.sealed = true;
  std::uint8_t rec[kContainerRecordSize];
  encode_info(info, rec);
  log_.write(id, rec);

  counters_.containers_written.fetch_add(1, std::memory_order_relaxed);
  counters_.payload_bytes_written.fetch_add(payload.size(),
                                            std::memory_order_relaxed);
}

LoadedContainer ContainerStore::load(std::uint32_t id) {
  ContainerInfo logged = info(id);
  if (!logged.sealed || logged.deleted) {
    throw IntegrityError("container " + std::to_string(id) +
                         ": not readable (unsealed or deleted)");
  }
  auto path = container_path(id);
  int fd = open_fd(path, O_RDONLY);
  LoadedContainer out;
  try {
    std::vector<std::uint8_t> head(
        kContainerHeaderSize + logged.segment_count * kContainerDirEntrySize);
    pread_exact(fd, head, 0, path);
    const std::uint8_t* p = head.data();
    if (get_u32(p) != kContainerFileMagic || get_u32(p + 8) != id) {
      throw IntegrityError(path.string() + ": bad container header");
    }
    if (get_u32(p + 4) != crc32(std::span(p + 8, head.size() - 8))) {
      throw IntegrityError(path.string() + ": header checksum mismatch");
    }
    std::uint32_t nsegs = get_u32(p + 12);
    std::uint64_t payload_bytes = get_u64(p + 16);
    Timestamp stamp = get_u64(p + 24);
    if (nsegs != logged.segment_count ||
        payload_bytes != logged.payload_bytes || stamp != logged.timestamp) {
      throw IntegrityError(path.string() + ": header disagrees with log");
    }
    out.info = logged;
    out.directory.reserve(nsegs);
    for (std::uint32_t i = 0; i < nsegs; ++i) {
      const std::uint8_t* d =
          p + kContainerHeaderSize + i * kContainerDirEntrySize;
      out.directory.push_back(
          ContainerSegment{get_u64(d), get_u64(d + 8), get_u64(d + 16)});
    }
    out.payload.resize(payload_bytes);
    pread_exact(fd, out.payload, head.size(), path);
  } catch (...) {
    ::close(fd);
    throw;
  }
  ::close(fd);

  counters_.containers_read.fetch_add(1, std::memory_order_relaxed);
  counters_.payload_bytes_read.fetch_add(out.payload.size(),
                                         std::memory_order_relaxed);
  return out;
}

std::vector<std::uint8_t> ContainerStore::read_payload(std::uint32_t id,
                                                       std::uint64_t offset,
                                                       std::uint32_t length) {
  ContainerInfo logged = info(id);
  if (!logged.sealed || logged.deleted) {
    throw IntegrityError("container " + std::to_string(id) +
                         ": not readable (unsealed or deleted)");
  }
  if (offset + length > logged.payload_bytes) {
    throw IntegrityError("container " + std::to_string(id) +
                         ": payload read out of range");
  }
  auto path = container_path(id);
  int fd = open_fd(path, O_RDONLY);
  std::vector<std::uint8_t> out(length);
  try {
    std::uint64_t payload_start =
        kContainerHeaderSize +
        static_cast<std::uint64_t>(logged.segment_count) *
            kContainerDirEntrySize;
    pread_exact(fd, out, payload_start + offset, path);
  } catch (...) {
    ::close(fd);
    throw;
  }
  ::close(fd);

  counters_.containers_read.fetch_add(1, std::memory_order_relaxed);
  counters_.payload_bytes_read.fetch_add(length, std::memory_order_relaxed);
  return out;
}

void ContainerStore::unlink_container(std::uint32_t id, const char* op) {
  ContainerInfo logged = info(id);
  if (!logged.sealed || logged.deleted) {
    throw IntegrityError(std::string(op) + " container " + std::to_string(id) +
                         ": not removable (unsealed or already deleted)");
  }
  std::error_code ec;
  if (!std::filesystem::remove(container_path(id), ec) || ec) {
    throw IoError(std::string(op) + " container " + std::to_string(id) + ": " +
                  (ec ? ec.message() : "file missing"));
  }
  logged.deleted = true;
  std::uint8_t rec[kContainerRecordSize];
  encode_info(logged, rec);
  log_.write(id, rec);
}

void ContainerStore::remove(std::uint32_t id) {
  if (info(id).timestamp == kUndefinedTimestamp) {
    throw IntegrityError("remove container " + std::to_string(id) +
                         ": timestamp undefined (may hold shared segments)");
  }
  unlink_container(id, "remove");
}

void ContainerStore::retire(std::uint32_t id) { unlink_container(id, "retire"); }

void ContainerStore::prefetch(std::span<const std::uint32_t> ids) {
  if (ids.empty()) return;
  {
    std::lock_guard lock(prefetch_mutex_);
    prefetch_queue_.insert(prefetch_queue_.end(), ids.begin(), ids.end());
  }
  prefetch_cv_.notify_one();
}

void ContainerStore::prefetch_loop() {
  for (;;) {
    std::uint32_t id;
    {
      std::unique_lock lock(prefetch_mutex_);
      prefetch_cv_.wait(lock, [this] {
        return prefetch_stop_ || !prefetch_queue_.empty();
      });
      if (prefetch_queue_.empty()) {
        if (prefetch_stop_) return;
        continue;
      }
      id = prefetch_queue_.front();
      prefetch_queue_.pop_front();
    }
    // Advisory only: ignore races with deletion.
    int fd = ::open(container_path(id).c_str(), O_RDONLY | O_CLOEXEC);
    if (fd >= 0) {
      ::posix_fadvise(fd, 0, 0, POSIX_FADV_WILLNEED);
      ::close(fd);
    }
  }
}

}  // namespace revdedup
