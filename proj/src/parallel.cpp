#include "ahmood/parallel.hpp"

#include <atomic>

namespace ahmood {

namespace {
std::atomic<std::size_t> g_threads{0};
}

void set_num_threads(std::size_t n) { g_threads = n; }

std::size_t num_threads() {
    const std::size_t n = g_threads;
    if (n != 0) return n;
    return std::max<std::size_t>(1, std::thread::hardware_concurrency());
}

}  // namespace ahmood
