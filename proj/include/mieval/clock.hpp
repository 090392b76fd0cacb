#pragma once

#include <chrono>
#include <mutex>

namespace mieval {

/// Seconds since an arbitrary origin. Injected so throttling and backoff can be
/// tested against virtual time.
class Clock {
public:
    virtual ~Clock() = default;
    virtual double now() = 0;
    virtual void sleep_until(double t) = 0;
    void sleep_for(double seconds) { sleep_until(now() + seconds); }
};

class SteadyClock final : public Clock {
public:
    SteadyClock() : origin_(std::chrono::steady_clock::now()) {}
    double now() override;
    void sleep_until(double t) override;

private:
    std::chrono::steady_clock::time_point origin_;
};

/// Virtual time: sleeping advances the clock instantly.
class ManualClock final : public Clock {
public:
    explicit ManualClock(double start = 0.0) : now_(start) {}
    double now() override;
    void sleep_until(double t) override;
    void advance(double seconds);

private:
    std::mutex mutex_;
    double now_;
};

/// Strict-spacing token bucket: capacity one token, starts empty, refills one
/// token every 60/rpm seconds. Slot k is released at start + k*60/rpm, so no
/// half-open 60 s window ever holds more than rpm slots.
class RateLimiter {
public:
    RateLimiter(int requests_per_minute, Clock& clock);

    /// Blocks until the next slot and returns its time.
    double acquire();
    double interval() const { return interval_; }

private:
    Clock& clock_;
    int rpm_;
    double interval_;
    double start_;
    std::mutex mutex_;
    long long next_index_ = 1;
};

}  // namespace mieval
