#pragma once

#include <mutex>
#include <set>
#include <string>

#include "enzyme/error.hpp"

namespace enzyme {

/// Process-wide fault injection switchboard used by the reliability tests.
/// Armed points throw when execution passes through them.
class FaultInjector {
public:
  static FaultInjector& instance() {
    static FaultInjector f;
    return f;
  }

  void arm(const std::string& point) {
    std::lock_guard<std::mutex> lk(mu_);
    armed_.insert(point);
  }

  void disarm(const std::string& point) {
    std::lock_guard<std::mutex> lk(mu_);
    armed_.erase(point);
  }

  void disarm_all() {
    std::lock_guard<std::mutex> lk(mu_);
    armed_.clear();
  }

  void fire(const std::string& point) {
    {
      std::lock_guard<std::mutex> lk(mu_);
      if (armed_.find(point) == armed_.end()) return;
    }
    raise(ErrorCode::InjectedFault, "fault injected at '" + point + "'");
  }

  /// Non-throwing query for behavior-corrupting test switches.
  bool is_armed(const std::string& point) {
    std::lock_guard<std::mutex> lk(mu_);
    return armed_.count(point) > 0;
  }

private:
  std::mutex mu_;
  std::set<std::string> armed_;
};

inline void fault_point(const std::string& point) { FaultInjector::instance().fire(point); }

/// RAII arm/disarm for one fault point.
class ScopedFault {
public:
  explicit ScopedFault(std::string point) : point_(std::move(point)) {
    FaultInjector::instance().arm(point_);
  }
  ~ScopedFault() { FaultInjector::instance().disarm(point_); }

  ScopedFault(const ScopedFault&) = delete;
  ScopedFault& operator=(const ScopedFault&) = delete;

private:
  std::string point_;
};

}  // namespace enzyme
