#include "mieval/clock.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

#include "mieval/error.hpp"

namespace mieval {

double SteadyClock::now() {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - origin_).count();
}

void SteadyClock::sleep_until(double t) {
    const double wait = t - now();
    if (wait > 0) std::this_thread::sleep_for(std::chrono::duration<double>(wait));
}

double ManualClock::now() {
    std::lock_guard lock(mutex_);
    return now_;
}

void ManualClock::sleep_until(double t) {
    std::lock_guard lock(mutex_);
    now_ = std::max(now_, t);
}

void ManualClock::advance(double seconds) {
    std::lock_guard lock(mutex_);
    now_ += seconds;
}

RateLimiter::RateLimiter(int requests_per_minute, Clock& clock) : clock_(clock) {
    if (requests_per_minute < 1) throw ValidationError("requests_per_minute must be >= 1");
    rpm_ = requests_per_minute;
    interval_ = 60.0 / requests_per_minute;
    start_ = clock_.now();
}

double RateLimiter::acquire() {
    double slot = 0;
    {
        std::lock_guard lock(mutex_);
        // Slot times are start + 60n/rpm with integer n: no drift, and every
        // whole-minute boundary is hit exactly.
        const auto earliest = static_cast<long long>(std::ceil((clock_.now() - start_) * rpm_ / 60.0 - 1e-9));
        const long long index = std::max(earliest, next_index_);
        next_index_ = index + 1;
        slot = start_ + static_cast<double>(index) * 60.0 / rpm_;
    }
    clock_.sleep_until(slot);
    return slot;
}

}  // namespace mieval
