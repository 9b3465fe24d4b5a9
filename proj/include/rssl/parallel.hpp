#pragma once

#include <cstddef>
#include <functional>

namespace rssl {

/// Worker count taken from RSSL_THREADS, defaulting to the logical core count.
std::size_t configured_threads();

/// Caps TBB parallelism for the lifetime of the process. Safe to call more
/// than once; the latest call wins.
void set_thread_limit(std::size_t threads);

/// Runs body(begin, end) over disjoint chunks of [0, n). Every index is
/// processed exactly once, and callers must make the work for one index
/// independent of how the range was split so results do not depend on the
/// thread count.
void parallel_for(std::size_t n, std::size_t grain,
                  const std::function<void(std::size_t, std::size_t)>& body);

} // namespace rssl
