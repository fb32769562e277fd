#pragma once

#include <cstddef>
#include <functional>

namespace cmm::detail {

/// Worker budget from the CMM_THREADS environment variable, clamped to
/// hardware concurrency. Unset, empty, or 0 selects the implementation
/// default (sequential execution).
std::size_t thread_budget();

/// Runs fn(i) for every i in [0, count). Work items must be independent;
/// callers store results by index and reduce in index order afterwards, so
/// the outcome is identical for any thread budget. Exceptions thrown by work
/// items are rethrown on the calling thread (lowest index wins).
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& fn);

} // namespace cmm::detail
