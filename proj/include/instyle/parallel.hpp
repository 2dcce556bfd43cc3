#pragma once

#include <cstddef>
#include <functional>

namespace instyle {

// Process-wide worker cap. 0 means "use std::thread::hardware_concurrency()".
void set_thread_count(std::size_t threads) noexcept;
std::size_t thread_count() noexcept;

// Runs body(i) for every i in [0, n). Work is split into contiguous chunks, so
// callers that write only to slot i get output independent of the worker count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace instyle
