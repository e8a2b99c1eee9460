#pragma once

#include <cstdint>
#include <cstdlib>
#include <functional>
#include <memory>
#include <new>
#include <stdexcept>
#include <string>
#include <vector>

namespace ipldm {

// Shape/contract violations between tensors or layers.
struct DimError : std::runtime_error {
    explicit DimError(const std::string& msg) : std::runtime_error(msg) {}
};

// Value outside the documented input domain (age range, invalid schedule, ...).
struct DomainError : std::runtime_error {
    explicit DomainError(const std::string& msg) : std::runtime_error(msg) {}
};

// API misuse: missing gradient, non-scalar loss, stage ordering, bad checkpoint.
struct ContractError : std::runtime_error {
    explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

// Training blew up numerically (NaN/Inf loss); aborts the stage.
struct NumericAbort : std::runtime_error {
    explicit NumericAbort(const std::string& msg) : std::runtime_error(msg) {}
};

// 64-byte aligned allocator. Tensor buffers get a fixed alignment so the
// vectorized kernels behave identically from run to run.
template <typename T>
struct AlignedAlloc {
    using value_type = T;
    static constexpr std::size_t alignment = 64;

    AlignedAlloc() = default;
    template <typename U>
    AlignedAlloc(const AlignedAlloc<U>&) {}

    T* allocate(std::size_t n) {
        if (n == 0) return nullptr;
        std::size_t bytes = (n * sizeof(T) + alignment - 1) / alignment * alignment;
        void* p = std::aligned_alloc(alignment, bytes);
        if (!p) throw std::bad_alloc();
        return static_cast<T*>(p);
    }
    void deallocate(T* p, std::size_t) noexcept { std::free(p); }

    template <typename U>
    bool operator==(const AlignedAlloc<U>&) const { return true; }
    template <typename U>
    bool operator!=(const AlignedAlloc<U>&) const { return false; }
};

template <typename T>
using AVec = std::vector<T, AlignedAlloc<T>>;

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

// Worker-thread cap: IPLDM_THREADS env var, else hardware concurrency.
int num_threads();

// Runs fn(begin, end) over [0, n) split into contiguous chunks, one per worker.
// Chunk boundaries depend only on (n, num_threads()), so any computation whose
// outputs are disjoint per index stays bit-deterministic.
void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& fn);

}  // namespace ipldm
