#include "ambox/event_loop.hpp"

#include <thread>

namespace ambox {

EventLoop::EventLoop(Mode mode, Timestamp start, double time_scale)
    : mode_(mode),
      time_scale_(mode == Mode::Wall && time_scale <= 0.0 ? 1.0 : time_scale),
      virtual_now_(start),
      anchor_(start),
      steady_anchor_(std::chrono::steady_clock::now()) {}

std::unique_ptr<EventLoop> EventLoop::make_wall() {
  auto now = std::chrono::time_point_cast<Duration>(std::chrono::system_clock::now());
  return std::make_unique<EventLoop>(Mode::Wall, now, 1.0);
}

Timestamp EventLoop::now() const {
  if (mode_ == Mode::Virtual) {
    std::lock_guard lock(mu_);
    return virtual_now_;
  }
  auto real = std::chrono::steady_clock::now() - steady_anchor_;
  auto scaled = std::chrono::duration<double, std::milli>(real).count() / time_scale_;
  return anchor_ + Duration{static_cast<std::int64_t>(scaled)};
}

TimerId EventLoop::schedule_at(Timestamp when, std::function<void()> fn) {
  std::lock_guard lock(mu_);
  Key key{when, next_seq_++};
  TimerId id = next_id_++;
  timers_.emplace(key, std::make_pair(id, std::move(fn)));
  index_.emplace(id, key);
  cv_.notify_all();
  return id;
}

void EventLoop::cancel(TimerId id) {
  std::lock_guard lock(mu_);
  auto it = index_.find(id);
  if (it == index_.end()) return;
  timers_.erase(it->second);
  index_.erase(it);
}

void EventLoop::post(std::function<void()> fn) {
  std::lock_guard lock(mu_);
  posted_.push_back(std::move(fn));
  cv_.notify_all();
}

void EventLoop::stop() {
  std::lock_guard lock(mu_);
  stop_requested_ = true;
  cv_.notify_all();
}

std::size_t EventLoop::pending_timers() const {
  std::lock_guard lock(mu_);
  return timers_.size();
}

void EventLoop::drain_posted() {
  for (;;) {
    std::vector<std::function<void()>> batch;
    {
      std::lock_guard lock(mu_);
      if (posted_.empty()) return;
      batch.swap(posted_);
    }
    for (std::size_t i = 0; i < batch.size(); ++i) {
      try {
        batch[i]();
      } catch (...) {
        std::lock_guard lock(mu_);
        posted_.insert(posted_.begin(), std::make_move_iterator(batch.begin() + static_cast<std::ptrdiff_t>(i) + 1),
                       std::make_move_iterator(batch.end()));
        throw;
      }
    }
  }
}

void EventLoop::pace(Timestamp from, Timestamp to) {
  if (time_scale_ <= 0.0 || to <= from) return;
  auto real = std::chrono::duration<double, std::milli>((to - from).count() * time_scale_);
  std::this_thread::sleep_for(real);
}

bool EventLoop::run_one_due(Timestamp limit) {
  std::function<void()> fn;
  {
    std::unique_lock lock(mu_);
    if (timers_.empty()) return false;
    auto it = timers_.begin();
    if (it->first.when > limit) return false;
    if (mode_ == Mode::Virtual) {
      Timestamp target = it->first.when;
      if (target > virtual_now_) {
        Timestamp from = virtual_now_;
        lock.unlock();
        pace(from, target);
        lock.lock();
        // Timers may have been added while pacing; re-pick the earliest.
        it = timers_.begin();
        if (it == timers_.end() || it->first.when > limit) return true;
        virtual_now_ = std::max(virtual_now_, it->first.when);
      }
    } else if (it->first.when > now()) {
      return false;
    }
    fn = std::move(it->second.second);
    index_.erase(it->second.first);
    timers_.erase(it);
  }
  ++fired_;
  fn();
  return true;
}

void EventLoop::run_until(Timestamp until) {
  if (mode_ == Mode::Virtual) {
    for (;;) {
      drain_posted();
      if (!run_one_due(until)) break;
    }
    drain_posted();
    Timestamp from;
    {
      std::lock_guard lock(mu_);
      from = virtual_now_;
    }
    pace(from, until);
    std::lock_guard lock(mu_);
    if (until > virtual_now_) virtual_now_ = until;
    return;
  }
  for (;;) {
    drain_posted();
    while (run_one_due(until)) drain_posted();
    if (now() >= until) return;
    std::unique_lock lock(mu_);
    if (stop_requested_) return;
    auto deadline = until;
    if (!timers_.empty()) deadline = std::min(deadline, timers_.begin()->first.when);
    auto wait_ms = std::chrono::duration<double, std::milli>((deadline - now()).count() * time_scale_);
    if (wait_ms.count() > 0 && posted_.empty())
      cv_.wait_for(lock, std::chrono::duration_cast<std::chrono::microseconds>(wait_ms) + std::chrono::microseconds(200));
  }
}

bool EventLoop::step() {
  drain_posted();
  bool ran = run_one_due(mode_ == Mode::Virtual ? Timestamp::max() : now());
  drain_posted();
  return ran;
}

void EventLoop::run() {
  for (;;) {
    {
      std::lock_guard lock(mu_);
      if (stop_requested_) return;
    }
    if (mode_ == Mode::Virtual) {
      drain_posted();
      if (!run_one_due(Timestamp::max())) {
        std::unique_lock lock(mu_);
        cv_.wait(lock, [&] { return stop_requested_ || !posted_.empty() || !timers_.empty(); });
      }
    } else {
      run_until(now() + Duration{1000});
    }
  }
}

}  // namespace ambox
