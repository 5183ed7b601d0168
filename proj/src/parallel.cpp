#include "sgs/parallel.hpp"

#include <algorithm>
#include <thread>
#include <vector>

namespace sgs {

int resolve_threads(int requested) {
    if (requested > 0) return requested;
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

void parallel_blocks(int n, int threads, const std::function<void(int, int, int)>& fn) {
    const int t = std::min(resolve_threads(threads), std::max(n, 1));
    if (t <= 1 || n <= 1) {
        fn(0, 0, n);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(t - 1);
    auto block = [n, t](int w) { return static_cast<int>(static_cast<long>(n) * w / t); };
    for (int w = 1; w < t; ++w) {
        pool.emplace_back(fn, w, block(w), block(w + 1));
    }
    fn(0, block(0), block(1));
    for (auto& th : pool) th.join();
}

}  // namespace sgs
