#pragma once

#include <cerrno>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <system_error>
#include <vector>

#include <fcntl.h>
#include <unistd.h>

namespace cole {

struct IoCounter {
  std::size_t page_reads = 0;
};

class FileHandle {
 public:
  FileHandle() = default;

  static FileHandle create(const std::filesystem::path& path) {
    FileHandle f;
    f.fd_ = ::open(path.c_str(), O_RDWR | O_CREAT | O_TRUNC, 0644);
    if (f.fd_ < 0) throw std::system_error(errno, std::generic_category(), path.string());
    return f;
  }

  static FileHandle open_rw(const std::filesystem::path& path) {
    FileHandle f;
    f.fd_ = ::open(path.c_str(), O_RDWR);
    if (f.fd_ < 0) throw std::system_error(errno, std::generic_category(), path.string());
    return f;
  }

  static FileHandle open_readonly(const std::filesystem::path& path) {
    FileHandle f;
    f.fd_ = ::open(path.c_str(), O_RDONLY);
    if (f.fd_ < 0) throw std::system_error(errno, std::generic_category(), path.string());
    return f;
  }

  FileHandle(FileHandle&& o) noexcept : fd_(o.fd_) { o.fd_ = -1; }
  FileHandle& operator=(FileHandle&& o) noexcept {
    if (this != &o) {
      close();
      fd_ = o.fd_;
      o.fd_ = -1;
    }
    return *this;
  }
  FileHandle(const FileHandle&) = delete;
  FileHandle& operator=(const FileHandle&) = delete;
  ~FileHandle() { close(); }

  bool valid() const { return fd_ >= 0; }

  void pread_exact(void* buf, std::size_t len, std::uint64_t off) const {
    auto* p = static_cast<std::uint8_t*>(buf);
    while (len > 0) {
      ssize_t r = ::pread(fd_, p, len, static_cast<off_t>(off));
      if (r < 0) throw std::system_error(errno, std::generic_category(), "pread");
      if (r == 0) throw std::runtime_error("pread: unexpected EOF");
      p += r;
      off += static_cast<std::uint64_t>(r);
      len -= static_cast<std::size_t>(r);
    }
  }

  void pwrite_exact(const void* buf, std::size_t len, std::uint64_t off) const {
    const auto* p = static_cast<const std::uint8_t*>(buf);
    while (len > 0) {
      ssize_t r = ::pwrite(fd_, p, len, static_cast<off_t>(off));
      if (r < 0) throw std::system_error(errno, std::generic_category(), "pwrite");
      p += r;
      off += static_cast<std::uint64_t>(r);
      len -= static_cast<std::size_t>(r);
    }
  }

  std::uint64_t size() const {
    off_t end = ::lseek(fd_, 0, SEEK_END);
    if (end < 0) throw std::system_error(errno, std::generic_category(), "lseek");
    return static_cast<std::uint64_t>(end);
  }

  void sync() const { ::fsync(fd_); }

  void close() {
    if (fd_ >= 0) {
      ::close(fd_);
      fd_ = -1;
    }
  }

 private:
  int fd_ = -1;
};

// Reads fixed 4 KB pages, counting fetches. Keeps the last two pages cached
// so a bounded search can probe a neighboring page and still return to the
// one it settled on without paying another IO.
class PageReader {
 public:
  PageReader(const FileHandle& file, std::size_t page_size)
      : file_(&file), page_size_(page_size) {
    for (auto& s : slots_) s.buf.resize(page_size);
  }

  std::span<const std::uint8_t> page(std::uint64_t idx, IoCounter* io) {
    for (auto& s : slots_) {
      if (s.valid && s.idx == idx) {
        s.stamp = ++clock_;
        return {s.buf.data(), s.buf.size()};
      }
    }
    Slot& victim = slots_[0].stamp <= slots_[1].stamp ? slots_[0] : slots_[1];
    std::uint64_t off = idx * page_size_;
    std::uint64_t fsize = file_->size();
    if (off >= fsize) throw std::out_of_range("page index out of range");
    std::size_t len = static_cast<std::size_t>(std::min<std::uint64_t>(page_size_, fsize - off));
    std::memset(victim.buf.data(), 0, victim.buf.size());
    file_->pread_exact(victim.buf.data(), len, off);
    victim.valid = true;
    victim.idx = idx;
    victim.stamp = ++clock_;
    if (io) ++io->page_reads;
    return {victim.buf.data(), victim.buf.size()};
  }

 private:
  struct Slot {
    std::vector<std::uint8_t> buf;
    bool valid = false;
    std::uint64_t idx = 0;
    std::uint64_t stamp = 0;
  };

  const FileHandle* file_;
  std::size_t page_size_;
  Slot slots_[2];
  std::uint64_t clock_ = 0;
};

// Sequential writer of fixed-size records packed records_per_page to a page,
// with zero padding at each page tail.
class PagedRecordWriter {
 public:
  PagedRecordWriter(FileHandle& file, std::size_t page_size, std::size_t record_size,
                    std::size_t records_per_page)
      : file_(&file),
        page_size_(page_size),
        record_size_(record_size),
        records_per_page_(records_per_page),
        page_(page_size, 0) {}

  void append(std::span<const std::uint8_t> record) {
    if (record.size() != record_size_) throw std::invalid_argument("bad record size");
    std::memcpy(page_.data() + slot_ * record_size_, record.data(), record_size_);
    ++slot_;
    ++count_;
    if (slot_ == records_per_page_) flush_page();
  }

  // Pads the current page (if partially filled) and starts a fresh one.
  void pad_to_page() {
    if (slot_ > 0) flush_page();
  }

  void finish() {
    pad_to_page();
    file_->sync();
  }

  std::uint64_t record_count() const { return count_; }
  std::uint64_t page_count() const { return page_idx_; }

 private:
  void flush_page() {
    file_->pwrite_exact(page_.data(), page_size_, page_idx_ * page_size_);
    std::memset(page_.data(), 0, page_.size());
    slot_ = 0;
    ++page_idx_;
  }

  FileHandle* file_;
  std::size_t page_size_, record_size_, records_per_page_;
  std::vector<std::uint8_t> page_;
  std::size_t slot_ = 0;
  std::uint64_t page_idx_ = 0;
  std::uint64_t count_ = 0;
};

}  // namespace cole
