#pragma once

#include <cstddef>
#include <functional>

namespace noisecouple {

/// Worker count: NOISECOUPLE_THREADS if set and positive, else hardware concurrency.
std::size_t thread_count();

/// Runs fn(task) for task in [0, tasks). Tasks may execute concurrently and in
/// any order; callers write results into per-task slots and reduce in task order
/// so output does not depend on the worker count.
void parallel_for(std::size_t tasks, const std::function<void(std::size_t)>& fn);

/// Half-open range [begin, end) of the `chunk`-th of `chunks` equal slices of n.
struct ChunkRange {
  std::size_t begin;
  std::size_t end;
};
ChunkRange chunk_range(std::size_t n, std::size_t chunks, std::size_t chunk);

/// Fixed chunk count used by Monte Carlo estimators (independent of threads).
inline constexpr std::size_t kDefaultChunks = 64;

}  // namespace noisecouple
