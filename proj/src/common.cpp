#include "ipldm/common.hpp"

#include <algorithm>
#include <condition_variable>
#include <cstring>
#include <functional>
#include <mutex>
#include <thread>

namespace ipldm {

int num_threads() {
    static int n = [] {
        int hw = static_cast<int>(std::thread::hardware_concurrency());
        if (hw <= 0) hw = 1;
        if (const char* env = std::getenv("IPLDM_THREADS")) {
            int cap = std::atoi(env);
            if (cap > 0) hw = std::min(hw, cap);
        }
        return hw;
    }();
    return n;
}

namespace {

// Minimal persistent pool: parallel_for posts one range per worker and joins.
class Pool {
public:
    explicit Pool(int workers) : stop_(false), pending_(0) {
        for (int i = 0; i < workers; ++i) {
            threads_.emplace_back([this] { run(); });
        }
    }
    ~Pool() {
        {
            std::lock_guard<std::mutex> lk(mu_);
            stop_ = true;
        }
        cv_.notify_all();
        for (auto& t : threads_) t.join();
    }

    void dispatch(const std::vector<std::function<void()>>& jobs) {
        {
            std::lock_guard<std::mutex> lk(mu_);
            for (auto& j : jobs) queue_.push_back(j);
            pending_ += static_cast<int>(jobs.size());
        }
        cv_.notify_all();
        std::unique_lock<std::mutex> lk(mu_);
        done_cv_.wait(lk, [this] { return pending_ == 0; });
    }

private:
    void run() {
        for (;;) {
            std::function<void()> job;
            {
                std::unique_lock<std::mutex> lk(mu_);
                cv_.wait(lk, [this] { return stop_ || !queue_.empty(); });
                if (stop_ && queue_.empty()) return;
                job = std::move(queue_.front());
                queue_.erase(queue_.begin());
            }
            job();
            {
                std::lock_guard<std::mutex> lk(mu_);
                if (--pending_ == 0) done_cv_.notify_all();
            }
        }
    }

    std::vector<std::thread> threads_;
    std::vector<std::function<void()>> queue_;
    std::mutex mu_;
    std::condition_variable cv_, done_cv_;
    bool stop_;
    int pending_;
};

Pool& pool() {
    static Pool p(num_threads());
    return p;
}

thread_local bool inside_parallel = false;

}  // namespace

void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& fn) {
    if (n <= 0) return;
    int workers = num_threads();
    // Nested calls (or tiny ranges) degrade to the calling thread.
    if (workers <= 1 || n == 1 || inside_parallel) {
        fn(0, n);
        return;
    }
    int chunks = static_cast<int>(std::min<int64_t>(workers, n));
    int64_t per = (n + chunks - 1) / chunks;
    std::vector<std::function<void()>> jobs;
    for (int c = 0; c < chunks; ++c) {
        int64_t lo = c * per;
        int64_t hi = std::min<int64_t>(n, lo + per);
        if (lo >= hi) break;
        jobs.push_back([lo, hi, &fn] {
            inside_parallel = true;
            fn(lo, hi);
            inside_parallel = false;
        });
    }
    pool().dispatch(jobs);
}

}  // namespace ipldm
