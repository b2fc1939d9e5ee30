#pragma once

#include <condition_variable>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "i2d/protocol.hpp"
#include "i2d/transport.hpp"

namespace i2d {

/// Bounded pool of handles to one backend. Handles are created lazily and a
/// handle that went unhealthy is dropped on release, so the next lease
/// negotiates a fresh connection.
class HandlePool {
 public:
  class Lease {
   public:
    Lease(HandlePool* pool, std::unique_ptr<BackendHandle> handle) : pool_(pool), handle_(std::move(handle)) {}
    Lease(Lease&& other) noexcept : pool_(std::exchange(other.pool_, nullptr)), handle_(std::move(other.handle_)) {}
    Lease& operator=(Lease&&) = delete;
    ~Lease() {
      if (pool_) pool_->release(std::move(handle_));
    }

    BackendHandle& operator*() { return *handle_; }
    BackendHandle* operator->() { return handle_.get(); }

   private:
    HandlePool* pool_;
    std::unique_ptr<BackendHandle> handle_;
  };

  HandlePool(BackendDescriptor descriptor, std::size_t capacity, std::set<std::string> required_metrics = {})
      : descriptor_(std::move(descriptor)), capacity_(capacity ? capacity : 1), required_(std::move(required_metrics)) {}

  const BackendDescriptor& descriptor() const { return descriptor_; }

  /// Blocks until a handle is free. Throws if a new connection cannot be negotiated.
  Lease acquire() {
    std::unique_lock lock(mutex_);
    cv_.wait(lock, [&] { return !idle_.empty() || live_ < capacity_; });
    if (!idle_.empty()) {
      auto h = std::move(idle_.back());
      idle_.pop_back();
      return Lease(this, std::move(h));
    }
    ++live_;
    lock.unlock();
    try {
      return Lease(this, std::make_unique<BackendHandle>(handshake(descriptor_, required_)));
    } catch (...) {
      lock.lock();
      --live_;
      cv_.notify_one();
      throw;
    }
  }

  /// Negotiates one connection eagerly so configuration errors surface early.
  void warm_up() { (void)acquire(); }

 private:
  void release(std::unique_ptr<BackendHandle> handle) {
    std::lock_guard lock(mutex_);
    if (handle && handle->healthy()) {
      idle_.push_back(std::move(handle));
    } else {
      --live_;
    }
    cv_.notify_one();
  }

  BackendDescriptor descriptor_;
  std::size_t capacity_;
  std::set<std::string> required_;
  std::mutex mutex_;
  std::condition_variable cv_;
  std::vector<std::unique_ptr<BackendHandle>> idle_;
  std::size_t live_ = 0;
};

}  // namespace i2d
