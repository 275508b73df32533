#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string_view>

namespace trafficdtl {

/// Keeps freed tensor buffers in the heap instead of returning them to the OS
/// after every batch. Training allocates and frees the same large blocks each
/// step, and with the default glibc thresholds that costs more than the math.
/// No effect on non-glibc platforms. Call once at program start.
void configure_allocator();

/// Runs fn(0..n-1) on up to `jobs` threads. The first exception thrown by any
/// task is rethrown after all workers stop. jobs <= 1 runs inline, in order.
void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn);

/// Stable 64-bit seed for a named task: FNV-1a over the base seed and task id.
std::uint64_t derive_seed(std::uint64_t base, std::string_view task);

}  // namespace trafficdtl
