#pragma once

#include <condition_variable>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <vector>

#include "ambox/time.hpp"

namespace ambox {

using TimerId = std::uint64_t;

/// Clock plus timer queue that every agent runs on. Agents never read the
/// OS clock; they only see `now()`.
class Scheduler {
 public:
  virtual ~Scheduler() = default;

  virtual Timestamp now() const = 0;
  virtual TimerId schedule_at(Timestamp when, std::function<void()> fn) = 0;
  TimerId schedule_after(Duration delay, std::function<void()> fn) { return schedule_at(now() + delay, std::move(fn)); }
  virtual void cancel(TimerId id) = 0;
  /// Thread-safe; runs fn on the loop as soon as possible.
  virtual void post(std::function<void()> fn) = 0;
  virtual bool is_virtual() const = 0;
};

/// Single-threaded timer loop. Timers due at the same instant fire in the
/// order they were scheduled, which is what makes simulated runs
/// reproducible.
///
/// Two time sources:
///  - virtual: now() jumps straight to the next due timer. With a positive
///    `time_scale` (real seconds per virtual second) the loop sleeps in
///    proportion so runs are paced rather than instantaneous.
///  - wall: now() = anchor + (steady elapsed) / time_scale; timers fire when
///    that clock reaches them.
class EventLoop final : public Scheduler {
 public:
  enum class Mode { Virtual, Wall };

  EventLoop(Mode mode, Timestamp start, double time_scale = 0.0);
  static std::unique_ptr<EventLoop> make_virtual(Timestamp start, double time_scale = 0.0) {
    return std::make_unique<EventLoop>(Mode::Virtual, start, time_scale);
  }
  /// Wall clock in real time (scale 1) anchored at the system clock.
  static std::unique_ptr<EventLoop> make_wall();

  Timestamp now() const override;
  TimerId schedule_at(Timestamp when, std::function<void()> fn) override;
  void cancel(TimerId id) override;
  void post(std::function<void()> fn) override;
  bool is_virtual() const override { return mode_ == Mode::Virtual; }

  /// Runs every timer due at or before `until`, then leaves now() == until
  /// (virtual) or returns once the wall clock passes it.
  void run_until(Timestamp until);
  void run_for(Duration d) { run_until(now() + d); }
  /// Runs the earliest pending timer (virtual mode) or whatever is due
  /// (wall mode). Returns false when nothing ran.
  bool step();
  /// Runs until stop() is called (daemon processes).
  void run();
  /// Thread-safe.
  void stop();

  std::size_t pending_timers() const;
  std::uint64_t fired() const { return fired_; }

 private:
  struct Key {
    Timestamp when;
    std::uint64_t seq;
    bool operator<(const Key& o) const { return when != o.when ? when < o.when : seq < o.seq; }
  };

  bool run_one_due(Timestamp limit);
  void drain_posted();
  void pace(Timestamp from, Timestamp to);

  Mode mode_;
  double time_scale_;
  Timestamp virtual_now_;
  Timestamp anchor_;
  std::chrono::steady_clock::time_point steady_anchor_;

  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::map<Key, std::pair<TimerId, std::function<void()>>> timers_;
  std::map<TimerId, Key> index_;
  std::vector<std::function<void()>> posted_;
  std::uint64_t next_seq_ = 0;
  TimerId next_id_ = 1;
  bool stop_requested_ = false;
  std::uint64_t fired_ = 0;
};

/// Guards callbacks that may outlive their owner: capture `token()` and
/// check `alive()` before touching the owner.
class Lifetime {
 public:
  Lifetime() : flag_(std::make_shared<bool>(true)) {}
  ~Lifetime() { *flag_ = false; }
  Lifetime(const Lifetime&) = delete;
  Lifetime& operator=(const Lifetime&) = delete;

  std::weak_ptr<bool> token() const { return flag_; }
  static bool alive(const std::weak_ptr<bool>& t) {
    auto p = t.lock();
    return p && *p;
  }

 private:
  std::shared_ptr<bool> flag_;
};

}  // namespace ambox
