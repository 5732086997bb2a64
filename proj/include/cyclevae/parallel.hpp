#pragma once

#include <cstdint>
#include <functional>

namespace cyclevae {

/// Worker-thread cap: min(hardware_concurrency, CYCLEVAE_THREADS).
/// Evaluated once per process.
int max_threads();

/// Runs fn(i) for i in [0, n). Iterations must write to disjoint locations;
/// under that contract the result is identical for any thread count, so
/// parallel execution never perturbs reproducibility. Runs inline when the
/// effective thread count is 1 or the range is small.
void parallel_for(std::int64_t n, const std::function<void(std::int64_t)>& fn);

/// Range flavor: fn(begin, end) over contiguous chunks, cheaper per element.
void parallel_for_chunks(std::int64_t n,
                         const std::function<void(std::int64_t, std::int64_t)>& fn);

}  // namespace cyclevae
