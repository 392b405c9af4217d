#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <queue>
#include <unordered_set>
#include <vector>

namespace protokit {

// Discrete-event scheduler with a virtual millisecond clock. Everything in
// deterministic mode (protocol queues, timers, simulated network transit)
// runs through one of these. Tasks at equal virtual times execute in
// insertion order, which makes runs with identical inputs bit-identical.
class Scheduler {
 public:
  using TaskId = uint64_t;

  int64_t now() const { return now_; }

  TaskId schedule(int64_t delayMs, std::function<void()> fn) {
    if (delayMs < 0) delayMs = 0;
    const TaskId id = ++nextId_;
    queue_.push(Task{now_ + delayMs, id, std::move(fn)});
    ++pending_;
    return id;
  }

  void cancel(TaskId id) {
    if (id != 0) cancelled_.insert(id);
  }

  bool empty() const { return pending_ == 0; }
  int64_t nextTime() const { return queue_.empty() ? -1 : queue_.top().time; }

  // Runs the next task; returns false when the queue is exhausted.
  bool step() {
    while (!queue_.empty()) {
      Task t = queue_.top();
      queue_.pop();
      --pending_;
      if (auto it = cancelled_.find(t.id); it != cancelled_.end()) {
        cancelled_.erase(it);
        continue;
      }
      now_ = t.time;
      t.fn();
      return true;
    }
    return false;
  }

  // Runs every task due at or before `untilMs`; the clock ends at `untilMs`.
  size_t runUntil(int64_t untilMs) {
    size_t n = 0;
    while (!queue_.empty() && queue_.top().time <= untilMs) {
      if (step()) ++n;
    }
    if (untilMs > now_) now_ = untilMs;
    return n;
  }

  size_t runAll(size_t maxSteps = std::numeric_limits<size_t>::max()) {
    size_t n = 0;
    while (n < maxSteps && step()) ++n;
    return n;
  }

 private:
  struct Task {
    int64_t time;
    TaskId id;
    std::function<void()> fn;
    bool operator>(const Task& o) const {
      return time != o.time ? time > o.time : id > o.id;
    }
  };

  std::priority_queue<Task, std::vector<Task>, std::greater<>> queue_;
  std::unordered_set<TaskId> cancelled_;
  int64_t now_ = 0;
  TaskId nextId_ = 0;
  size_t pending_ = 0;
};

}  // namespace protokit
