#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdlib>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace masf {

// Minimal persistent worker pool. Work items are index ranges; each output
// element is computed by exactly one worker, so results are bit-identical
// regardless of thread count.
class ThreadPool {
public:
    static ThreadPool& instance() {
        static ThreadPool pool(default_threads());
        return pool;
    }

    explicit ThreadPool(int n_threads) : n_threads_(n_threads < 1 ? 1 : n_threads) {
        for (int i = 1; i < n_threads_; ++i) {
            workers_.emplace_back([this] { worker_loop(); });
        }
    }

    ~ThreadPool() {
        {
            std::lock_guard<std::mutex> lk(mu_);
            stop_ = true;
        }
        cv_.notify_all();
        for (auto& t : workers_) t.join();
    }

    int size() const { return n_threads_; }

    // Runs fn(begin, end) over disjoint chunks of [0, total). Blocks until done.
    void run_chunks(int64_t total, const std::function<void(int64_t, int64_t)>& fn) {
        if (total <= 0) return;
        if (n_threads_ == 1 || total == 1) {
            fn(0, total);
            return;
        }
        int parts = static_cast<int>(std::min<int64_t>(n_threads_, total));
        int64_t chunk = (total + parts - 1) / parts;
        {
            std::lock_guard<std::mutex> lk(mu_);
            job_fn_ = &fn;
            job_total_ = total;
            job_chunk_ = chunk;
            job_next_ = 0;
            pending_ = (total + chunk - 1) / chunk;
            generation_++;
        }
        cv_.notify_all();
        // The calling thread participates.
        drain();
        std::unique_lock<std::mutex> lk(mu_);
        done_cv_.wait(lk, [this] { return pending_ == 0; });
    }

private:
    static int default_threads() {
        if (const char* env = std::getenv("MASF_THREADS")) {
            int v = std::atoi(env);
            if (v >= 1) return v;
        }
        unsigned hc = std::thread::hardware_concurrency();
        return hc ? static_cast<int>(hc) : 1;
    }

    // Not reentrant: kernels expose a single level of parallelism.
    void drain() {
        for (;;) {
            int64_t begin, end;
            const std::function<void(int64_t, int64_t)>* fn;
            {
                std::lock_guard<std::mutex> lk(mu_);
                if (job_next_ >= job_total_) return;
                begin = job_next_;
                job_next_ += job_chunk_;
                end = std::min(begin + job_chunk_, job_total_);
                fn = job_fn_;
            }
            (*fn)(begin, end);
            std::lock_guard<std::mutex> lk(mu_);
            if (--pending_ == 0) done_cv_.notify_all();
        }
    }

    void worker_loop() {
        uint64_t seen = 0;
        for (;;) {
            {
                std::unique_lock<std::mutex> lk(mu_);
                cv_.wait(lk, [&] { return stop_ || generation_ != seen; });
                if (stop_) return;
                seen = generation_;
            }
            drain();
        }
    }

    int n_threads_;
    std::vector<std::thread> workers_;
    std::mutex mu_;
    std::condition_variable cv_;
    std::condition_variable done_cv_;
    const std::function<void(int64_t, int64_t)>* job_fn_ = nullptr;
    int64_t job_total_ = 0;
    int64_t job_chunk_ = 0;
    int64_t job_next_ = 0;
    int64_t pending_ = 0;
    uint64_t generation_ = 0;
    bool stop_ = false;
};

// Below this many scalar operations a job runs inline; waking workers costs
// more than the work.
constexpr int64_t kParallelThreshold = 1 << 16;

// Deterministic parallel loop: fn(i) for i in [0, total). `work_per_item`
// is a rough operation count used to decide whether dispatch pays off.
inline void parallel_for(int64_t total, const std::function<void(int64_t)>& fn,
                         int64_t work_per_item = 1) {
    if (total * work_per_item < kParallelThreshold || ThreadPool::instance().size() == 1) {
        for (int64_t i = 0; i < total; ++i) fn(i);
        return;
    }
    ThreadPool::instance().run_chunks(total, [&](int64_t b, int64_t e) {
        for (int64_t i = b; i < e; ++i) fn(i);
    });
}

// Chunked variant when per-index call overhead matters.
inline void parallel_chunks(int64_t total, const std::function<void(int64_t, int64_t)>& fn,
                            int64_t work_per_item = 1) {
    if (total * work_per_item < kParallelThreshold || ThreadPool::instance().size() == 1) {
        if (total > 0) fn(0, total);
        return;
    }
    ThreadPool::instance().run_chunks(total, fn);
}

}  // namespace masf
