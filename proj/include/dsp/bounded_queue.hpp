// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <chrono>
#include <condition_variable>
#include <cstddef>
#include <deque>
#include <mutex>
#include <string>
#include <utility>

#include "dsp/errors.hpp"

namespace dsp {

/// FIFO with a hard capacity for single-context execution. Popping an empty
/// queue or pushing a full one is a protocol violation, never a wait.
template <typename T>
class SerialQueue {
 public:
  SerialQueue(std::string name, std::size_t capacity) : name_(std::move(name)), capacity_(capacity) {}

  void push(T value) {
    if (items_.size() >= capacity_) throw ProtocolError("push onto full queue " + name_);
    items_.push_back(std::move(value));
    high_water_ = std::max(high_water_, items_.size());
  }

  T pop() {
    if (items_.empty()) throw ProtocolError("pop from empty queue " + name_);
    T value = std::move(items_.front());
    items_.pop_front();
    return value;
  }

  std::size_t size() const noexcept { return items_.size(); }
  std::size_t capacity() const noexcept { return capacity_; }
  std::size_t high_water() const noexcept { return high_water_; }
  const std::string& name() const noexcept { return name_; }

 private:
  std::string name_;
  std::size_t capacity_;
  std::deque<T> items_;
  std::size_t high_water_ = 0;
};

class QueueClosed : public Error {
 public:
  explicit QueueClosed(const std::string& name) : Error("queue_closed", "queue " + name + " was closed") {}
};

/// Thread-safe FIFO with a hard capacity. push blocks while full, pop blocks
/// while empty. A wait longer than the watchdog raises DeadlockError;
/// close() wakes every waiter with QueueClosed.
template <typename T>
class BlockingQueue {
 public:
  BlockingQueue(std::string name, std::size_t capacity, std::chrono::milliseconds watchdog)
      : name_(std::move(name)), capacity_(capacity), watchdog_(watchdog) {}

  BlockingQueue(const BlockingQueue&) = delete;
  BlockingQueue& operator=(const BlockingQueue&) = delete;

  void push(T value) {
    std::unique_lock lock(mutex_);
    if (!not_full_.wait_for(lock, watchdog_, [&] { return closed_ || items_.size() < capacity_; })) {
      throw DeadlockError("watchdog expired pushing onto " + name_);
    }
    if (closed_) throw QueueClosed(name_);
    items_.push_back(std::move(value));
    high_water_ = std::max(high_water_, items_.size());
    lock.unlock();
    not_empty_.notify_one();
  }

  T pop() {
    std::unique_lock lock(mutex_);
    if (!not_empty_.wait_for(lock, watchdog_, [&] { return closed_ || !items_.empty(); })) {
      throw DeadlockError("watchdog expired popping from " + name_);
    }
    if (closed_) throw QueueClosed(name_);
    T value = std::move(items_.front());
    items_.pop_front();
    lock.unlock();
    not_full_.notify_one();
    return value;
  }

  void close() {
    {
      std::lock_guard lock(mutex_);
      closed_ = true;
    }
    not_empty_.notify_all();
    not_full_.notify_all();
  }

  std::size_t size() const {
    std::lock_guard lock(mutex_);
    return items_.size();
  }
  std::size_t capacity() const noexcept { return capacity_; }
  std::size_t high_water() const {
    std::lock_guard lock(mutex_);
    return high_water_;
  }
  const std::string& name() const noexcept { return name_; }

 private:
  std::string name_;
  std::size_t capacity_;
  std::chrono::milliseconds watchdog_;
  mutable std::mutex mutex_;
  std::condition_variable not_empty_;
  std::condition_variable not_full_;
  std::deque<T> items_;
  std::size_t high_water_ = 0;
  bool closed_ = false;
};

}  // namespace dsp
