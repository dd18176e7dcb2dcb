#pragma once

#include <cstddef>
#include <vector>

namespace gplight {

// Execution policy for the batched network kernels. Parallel is the
// production path; Serial is the plain reference loop kept for tests and the
// benchmark target.
enum class Exec { Serial, Parallel };

// Number of accumulation chunks used by the parallel path. Fixed (not tied to
// the thread count) so batch reductions associate the same way no matter how
// many threads run, which keeps results bit-identical across machines.
inline constexpr int kGradChunks = 8;

struct ChunkRange {
  int begin;
  int end;
};

inline ChunkRange chunk_range(int n_items, int n_chunks, int chunk) {
  int base = n_items / n_chunks, rem = n_items % n_chunks;
  int b = chunk * base + (chunk < rem ? chunk : rem);
  int len = base + (chunk < rem ? 1 : 0);
  return {b, b + len};
}

// Runs fn(item) for every item in [0, n_items). Parallelism is over chunks;
// iteration order inside a chunk is serial and fixed.
template <class Fn>
void for_each_chunked(int n_items, Exec exec, Fn&& fn) {
  if (exec == Exec::Serial) {
    for (int i = 0; i < n_items; ++i) fn(i);
    return;
  }
#pragma omp parallel for schedule(dynamic, 1)
  for (int c = 0; c < kGradChunks; ++c) {
    auto [b, e] = chunk_range(n_items, kGradChunks, c);
    for (int i = b; i < e; ++i) fn(i);
  }
}

// Per-chunk accumulator buffers merged in fixed chunk order; makeZero builds
// one zeroed accumulator, fn(item, acc) adds into it, merge(dst, src) folds.
template <class Acc, class MakeZero, class Fn, class Merge>
Acc accumulate_chunked(int n_items, Exec exec, MakeZero&& makeZero, Fn&& fn,
                       Merge&& merge) {
  if (exec == Exec::Serial) {
    Acc total = makeZero();
    for (int i = 0; i < n_items; ++i) fn(i, total);
    return total;
  }
  std::vector<Acc> parts;
  parts.reserve(kGradChunks);
  for (int c = 0; c < kGradChunks; ++c) parts.push_back(makeZero());
#pragma omp parallel for schedule(dynamic, 1)
  for (int c = 0; c < kGradChunks; ++c) {
    auto [b, e] = chunk_range(n_items, kGradChunks, c);
    for (int i = b; i < e; ++i) fn(i, parts[c]);
  }
  Acc total = makeZero();
  for (int c = 0; c < kGradChunks; ++c) merge(total, parts[c]);
  return total;
}

}  // namespace gplight
