#pragma once

#include <condition_variable>
#include <cstdint>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <utility>
#include <vector>

namespace mlnet {

// Minimal persistent worker pool for loops whose iterations write disjoint
// outputs. Work is split into fixed contiguous chunks, so results do not
// depend on the number of threads. Nested calls from inside a worker run
// inline to avoid deadlock.
class ThreadPool {
 public:
  static ThreadPool& instance() {
    static ThreadPool pool;
    return pool;
  }

  static int default_threads() {
    unsigned hc = std::thread::hardware_concurrency();
    return hc == 0 ? 1 : static_cast<int>(hc);
  }

  int threads() const { return static_cast<int>(workers_.size()) + 1; }

  // fn(begin, end) over [0, n) in `chunks` contiguous pieces.
  void run_chunked(std::int64_t n, int chunks,
                   const std::function<void(std::int64_t, std::int64_t)>& fn) {
    if (n <= 0) return;
    if (chunks <= 1 || threads() == 1 || inside_worker_) {
      fn(0, n);
      return;
    }
    if (chunks > n) chunks = static_cast<int>(n);

    const std::int64_t per = n / chunks;
    const std::int64_t extra = n % chunks;
    std::vector<std::pair<std::int64_t, std::int64_t>> ranges;
    ranges.reserve(static_cast<std::size_t>(chunks));
    std::int64_t at = 0;
    for (int c = 0; c < chunks; ++c) {
      const std::int64_t len = per + (c < extra ? 1 : 0);
      ranges.emplace_back(at, at + len);
      at += len;
    }

    std::mutex m;
    std::size_t next = 0;
    std::exception_ptr error;

    std::function<void()> drain_fn = [&] {
      for (;;) {
        std::pair<std::int64_t, std::int64_t> r;
        {
          std::lock_guard<std::mutex> lk(m);
          if (next >= ranges.size() || error) return;
          r = ranges[next++];
        }
        inside_worker_ = true;
        try {
          fn(r.first, r.second);
        } catch (...) {
          std::lock_guard<std::mutex> lk(m);
          if (!error) error = std::current_exception();
        }
        inside_worker_ = false;
      }
    };

    {
      std::lock_guard<std::mutex> lk(queue_mutex_);
      job_ = &drain_fn;
      ++generation_;
    }
    queue_cv_.notify_all();
    drain_fn();  // caller participates
    {
      // Block new pickups, then wait for workers already inside the job.
      std::unique_lock<std::mutex> lk(queue_mutex_);
      job_ = nullptr;
      idle_cv_.wait(lk, [&] { return running_ == 0; });
    }
    if (error) std::rethrow_exception(error);
  }

  ~ThreadPool() {
    {
      std::lock_guard<std::mutex> lk(queue_mutex_);
      stop_ = true;
    }
    queue_cv_.notify_all();
    for (auto& t : workers_) t.join();
  }

 private:
  ThreadPool() {
    const int n = default_threads() - 1;
    for (int i = 0; i < n; ++i) {
      workers_.emplace_back([this] { worker_loop(); });
    }
  }

  void worker_loop() {
    std::uint64_t seen = 0;
    for (;;) {
      const std::function<void()>* job = nullptr;
      {
        std::unique_lock<std::mutex> lk(queue_mutex_);
        queue_cv_.wait(lk, [&] {
          return stop_ || (job_ != nullptr && generation_ != seen);
        });
        if (stop_) return;
        seen = generation_;
        job = job_;
        ++running_;
      }
      (*job)();
      {
        std::lock_guard<std::mutex> lk(queue_mutex_);
        --running_;
      }
      idle_cv_.notify_all();
    }
  }

  std::vector<std::thread> workers_;
  std::mutex queue_mutex_;
  std::condition_variable queue_cv_;
  std::condition_variable idle_cv_;
  const std::function<void()>* job_ = nullptr;
  std::uint64_t generation_ = 0;
  int running_ = 0;
  bool stop_ = false;
  static thread_local bool inside_worker_;
};

inline thread_local bool ThreadPool::inside_worker_ = false;

// Convenience wrapper; `grain` is the minimum work per chunk.
template <typename Fn>
void parallel_for(std::int64_t n, std::int64_t grain, Fn&& fn) {
  if (n <= 0) return;
  auto& pool = ThreadPool::instance();
  int chunks = pool.threads();
  if (grain > 0) {
    const std::int64_t max_chunks = (n + grain - 1) / grain;
    if (max_chunks < chunks) chunks = static_cast<int>(max_chunks);
  }
  pool.run_chunked(n, chunks,
                   std::function<void(std::int64_t, std::int64_t)>(
                       std::forward<Fn>(fn)));
}

}  // namespace mlnet
