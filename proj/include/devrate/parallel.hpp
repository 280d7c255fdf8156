#pragma once

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace devrate {

//! Worker count: DEVRATE_THREADS if set and positive, else the hardware
//! concurrency.
inline unsigned
worker_count()
{
  unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("DEVRATE_THREADS")) {
    try {
      long v = std::stol(env);
      if (v > 0)
        return static_cast<unsigned>(v);
    } catch (...) {
    }
  }
  return hw;
}

//! Runs fn(task) for task in [0, tasks). Tasks write to disjoint slots, so the
//! caller's ordered reduction is independent of the worker count.
template<class F>
void
parallel_for(size_t tasks, F&& fn)
{
  const unsigned workers =
    static_cast<unsigned>(std::min<size_t>(worker_count(), tasks));
  if (workers <= 1) {
    for (size_t t = 0; t < tasks; ++t)
      fn(t);
    return;
  }
  std::atomic<size_t> next{ 0 };
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      while (true) {
        size_t t = next.fetch_add(1);
        if (t >= tasks)
          return;
        try {
          fn(t);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error)
            error = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool)
    th.join();
  if (error)
    std::rethrow_exception(error);
}

} // namespace devrate
