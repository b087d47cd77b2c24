#pragma once

#include <cstddef>
#include <functional>

namespace passcam {

/// Worker threads used by parallel_for; 0 (the default) means hardware concurrency.
void set_num_threads(int n);
int num_threads();

/// Runs task(i) for i in [0, n). Task boundaries are fixed by the caller, so
/// results that are reduced in index order do not depend on the thread count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& task);

}  // namespace passcam
