#pragma once

#include <chrono>
#include <condition_variable>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <queue>
#include <thread>
#include <vector>

#include "protokit/errors.hpp"
#include "protokit/event.hpp"
#include "protokit/scheduler.hpp"

namespace protokit {

// One timer wheel serves every protocol in the process. In real-clock mode a
// single worker thread sleeps until the earliest deadline; in deterministic
// mode deadlines become scheduler tasks at exact virtual times. Besides
// protocol timers it also runs internal periodic tasks (heartbeats,
// suspicion sweeps) for channel backends.
//
// Cancellation contract: cancel() removes the record, so a fire event that is
// already sitting in the owner's queue is suppressed at dispatch time. A
// single-shot timer's record is consumed when its handler actually runs.
class TimerService {
 public:
  explicit TimerService(Scheduler* sched = nullptr) : sched_(sched) {
    epoch_ = std::chrono::steady_clock::now();
  }

  ~TimerService() { stop(); }

  void setDeliver(std::function<void(ProtocolId, Event)> fn) { deliver_ = std::move(fn); }

  int64_t nowMs() const {
    if (sched_) return sched_->now();
    return std::chrono::duration_cast<std::chrono::milliseconds>(
               std::chrono::steady_clock::now() - epoch_)
        .count();
  }

  void start() {
    if (sched_ || running_) return;
    running_ = true;
    worker_ = std::thread([this] { runLoop(); });
  }

  void stop() {
    if (sched_) return;
    {
      std::lock_guard lock(mu_);
      if (!running_) return;
      running_ = false;
    }
    cv_.notify_all();
    if (worker_.joinable()) worker_.join();
  }

  TimerId setup(ProtocolId owner, std::shared_ptr<ProtoTimer> payload, int64_t delayMs,
                int64_t periodMs) {
    if (periodMs < 0) throw NonPositivePeriod("timer period must be > 0");
    if (delayMs < 0) delayMs = 0;
    Rec rec;
    rec.owner = owner;
    rec.payload = std::move(payload);
    rec.typeId = rec.payload->typeId;
    rec.periodMs = periodMs;
    return arm(std::move(rec), delayMs);
  }

  // Internal task, invisible to protocols. periodMs == 0 means single-shot.
  TimerId scheduleTask(std::function<void()> fn, int64_t delayMs, int64_t periodMs = 0) {
    Rec rec;
    rec.task = std::move(fn);
    rec.periodMs = periodMs;
    return arm(std::move(rec), delayMs);
  }

  bool cancel(TimerId id) {
    std::lock_guard lock(mu_);
    return recs_.erase(id) != 0;
  }

  // Runtime calls this when dispatching a Timer event. Returns the live
  // payload, or nullptr if the timer was cancelled after the fire was queued.
  std::shared_ptr<ProtoTimer> consumeFire(TimerId id) {
    std::lock_guard lock(mu_);
    auto it = recs_.find(id);
    if (it == recs_.end()) return nullptr;
    auto payload = it->second.payload;
    if (it->second.periodMs == 0) recs_.erase(it);
    return payload;
  }

  bool isActive(TimerId id) const {
    std::lock_guard lock(mu_);
    return recs_.count(id) != 0;
  }

 private:
  struct Rec {
    ProtocolId owner = 0;
    std::shared_ptr<ProtoTimer> payload;
    uint16_t typeId = 0;
    int64_t periodMs = 0;              // 0 = single shot
    std::function<void()> task;        // internal task instead of an event
    int64_t due = 0;                   // real mode only
  };

  TimerId arm(Rec rec, int64_t delayMs) {
    std::unique_lock lock(mu_);
    const TimerId id = ++nextId_;
    rec.due = nowMs() + delayMs;
    recs_.emplace(id, std::move(rec));
    if (sched_) {
      sched_->schedule(delayMs, [this, id] { fire(id); });
    } else {
      heap_.push(HeapEntry{recs_[id].due, id});
      lock.unlock();
      cv_.notify_all();
    }
    return id;
  }

  void fire(TimerId id) {
    Event ev;
    std::function<void()> task;
    {
      std::lock_guard lock(mu_);
      auto it = recs_.find(id);
      if (it == recs_.end()) return;
      Rec& rec = it->second;
      if (rec.periodMs > 0) {
        // Fixed-rate: the next deadline is relative to the schedule, not to
        // handler completion, so periodic timers do not drift.
        rec.due += rec.periodMs;
        if (sched_) {
          sched_->schedule(rec.periodMs, [this, id] { fire(id); });
        } else {
          heap_.push(HeapEntry{rec.due, id});
        }
      }
      if (rec.task) {
        task = rec.task;
        if (rec.periodMs == 0) recs_.erase(it);
      } else {
        ev.kind = EventKind::Timer;
        ev.typeId = rec.typeId;
        ev.timerId = id;
        ev.source = rec.owner;
      }
    }
    if (task) {
      task();
    } else if (deliver_) {
      deliver_(ev.source, std::move(ev));
    }
  }

  void runLoop() {
    std::unique_lock lock(mu_);
    while (running_) {
      if (heap_.empty()) {
        cv_.wait(lock);
        continue;
      }
      const HeapEntry top = heap_.top();
      auto it = recs_.find(top.id);
      if (it == recs_.end() || it->second.due != top.due) {
        heap_.pop();  // cancelled, or superseded by a periodic reschedule
        continue;
      }
      const auto deadline = epoch_ + std::chrono::milliseconds(top.due);
      if (std::chrono::steady_clock::now() < deadline) {
        cv_.wait_until(lock, deadline);
        continue;
      }
      heap_.pop();
      lock.unlock();
      fire(top.id);
      lock.lock();
    }
  }

  struct HeapEntry {
    int64_t due;
    TimerId id;
    bool operator>(const HeapEntry& o) const {
      return due != o.due ? due > o.due : id > o.id;
    }
  };

  Scheduler* sched_;
  std::function<void(ProtocolId, Event)> deliver_;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::map<TimerId, Rec> recs_;
  std::priority_queue<HeapEntry, std::vector<HeapEntry>, std::greater<>> heap_;
  std::thread worker_;
  bool running_ = false;
  TimerId nextId_ = 0;
  std::chrono::steady_clock::time_point epoch_;
};

}  // namespace protokit
