#include "cmm/parallel.hpp"

#include <atomic>
#include <cstdlib>
#include <exception>
#include <string>
#include <thread>
#include <vector>

namespace cmm::detail {

std::size_t thread_budget() {
    const char* env = std::getenv("CMM_THREADS");
    if (env == nullptr || *env == '\0') {
        return 1;
    }
    char* end = nullptr;
    const long parsed = std::strtol(env, &end, 10);
    if (end == env || parsed <= 0) {
        return 1;
    }
    const std::size_t hw = std::max<std::size_t>(1, std::thread::hardware_concurrency());
    return std::min(static_cast<std::size_t>(parsed), hw);
}

void parallel_for(std::size_t count, const std::function<void(std::size_t)>& fn) {
    const std::size_t workers = std::min(thread_budget(), count);
    if (workers <= 1) {
        for (std::size_t i = 0; i < count; ++i) {
            fn(i);
        }
        return;
    }

    std::vector<std::exception_ptr> errors(count);
    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= count) {
                return;
            }
            try {
                fn(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };

    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back(worker);
    }
    for (std::thread& t : pool) {
        t.join();
    }
    for (const std::exception_ptr& err : errors) {
        if (err) {
            std::rethrow_exception(err);
        }
    }
}

} // namespace cmm::detail
