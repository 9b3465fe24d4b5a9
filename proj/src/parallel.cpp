#include "rssl/parallel.hpp"

#include <tbb/blocked_range.h>
#include <tbb/global_control.h>
#include <tbb/parallel_for.h>

#include <cstdlib>
#include <memory>
#include <mutex>
#include <string>
#include <thread>

namespace rssl {

namespace {

std::mutex g_control_mutex;
std::unique_ptr<tbb::global_control> g_control;
std::size_t g_limit = 0;

std::size_t limit_or_default() {
    std::lock_guard lock(g_control_mutex);
    if (g_limit == 0) {
        g_limit = configured_threads();
        g_control = std::make_unique<tbb::global_control>(
            tbb::global_control::max_allowed_parallelism, g_limit);
    }
    return g_limit;
}

} // namespace

std::size_t configured_threads() {
    if (const char* env = std::getenv("RSSL_THREADS")) {
        try {
            const long v = std::stol(env);
            if (v >= 1) {
                return static_cast<std::size_t>(v);
            }
        } catch (const std::exception&) {
            // fall through to the default
        }
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : hw;
}

void set_thread_limit(std::size_t threads) {
    std::lock_guard lock(g_control_mutex);
    g_limit = threads == 0 ? 1 : threads;
    g_control.reset();
    g_control = std::make_unique<tbb::global_control>(
        tbb::global_control::max_allowed_parallelism, g_limit);
}

void parallel_for(std::size_t n, std::size_t grain,
                  const std::function<void(std::size_t, std::size_t)>& body) {
    if (n == 0) {
        return;
    }
    if (limit_or_default() <= 1 || n <= grain) {
        body(0, n);
        return;
    }
    tbb::parallel_for(tbb::blocked_range<std::size_t>(0, n, grain),
                      [&](const tbb::blocked_range<std::size_t>& r) {
                          body(r.begin(), r.end());
                      });
}

} // namespace rssl
