#pragma once

#include <cstddef>
#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace rfrp::harness {

// Every tape op allocates fresh matrices; above glibc's default mmap threshold
// each one costs an mmap/munmap pair and a round of page faults. Keeping them
// on the heap is ~10% faster for training and does not change results.
inline void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 32 << 20);
  mallopt(M_TRIM_THRESHOLD, 256 << 20);
#endif
}

}  // namespace rfrp::harness
