// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <chrono>
#include <thread>
#include <vector>

#include "dsp/bounded_queue.hpp"

namespace dsp {
namespace {

using namespace std::chrono_literals;

TEST(SerialQueue, FifoWithinCapacity) {
  SerialQueue<int> q("Q", 2);
  q.push(1);
  q.push(2);
  EXPECT_THROW(q.push(3), ProtocolError);
  EXPECT_EQ(q.pop(), 1);
  EXPECT_EQ(q.pop(), 2);
  EXPECT_THROW(q.pop(), ProtocolError);
  EXPECT_EQ(q.high_water(), 2u);
}

TEST(BlockingQueue, ProducerConsumerStress) {
  BlockingQueue<int> q("stress", 3, 5000ms);
  constexpr int kItems = 20000;
  std::vector<int> got;
  got.reserve(kItems);
  {
    std::jthread producer([&] {
      for (int i = 0; i < kItems; ++i) q.push(i);
    });
    std::jthread consumer([&] {
      for (int i = 0; i < kItems; ++i) got.push_back(q.pop());
    });
  }
  ASSERT_EQ(got.size(), static_cast<std::size_t>(kItems));
  for (int i = 0; i < kItems; ++i) ASSERT_EQ(got[i], i);
  EXPECT_LE(q.high_water(), 3u);
  EXPECT_EQ(q.size(), 0u);
}

TEST(BlockingQueue, WatchdogRaisesDeadlock) {
  BlockingQueue<int> q("idle", 1, 20ms);
  EXPECT_THROW(q.pop(), DeadlockError);
  q.push(1);
  EXPECT_THROW(q.push(2), DeadlockError);
}

TEST(BlockingQueue, CloseWakesWaiters) {
  BlockingQueue<int> q("closing", 1, 5000ms);
  std::exception_ptr error;
  {
    std::jthread waiter([&] {
      try {
        q.pop();
      } catch (...) {
        error = std::current_exception();
      }
    });
    std::this_thread::sleep_for(10ms);
    q.close();
  }
  ASSERT_TRUE(error);
  EXPECT_THROW(std::rethrow_exception(error), QueueClosed);
  EXPECT_THROW(q.push(1), QueueClosed);
}

}  // namespace
}  // namespace dsp
