#pragma once

// HTTP service front end for a running scenario: the console API under
// /api/v1, plus the paced run loop that advances the simulation.

#include <atomic>
#include <memory>
#include <mutex>
#include <string>
#include <thread>

#include <nlohmann/json.hpp>

#include "ccic/scenario.hpp"

namespace ccic::serve {

/// A runner shared between the run loop and request handlers. Every access
/// goes through `with`, which holds the lock, so handler mutations reach the
/// nodes between ticks exactly like scripted actors.
class Session {
 public:
  explicit Session(std::unique_ptr<scenario::Runner> runner) : runner_(std::move(runner)) {}

  template <typename F>
  auto with(F&& f) {
    std::lock_guard lock(mu_);
    return f(*runner_);
  }

  /// Steps once unless finished; returns false once the script has ended.
  bool step();

  /// Runs to the end, sleeping so simulated time advances `speed` times
  /// faster than wall time (speed <= 0 runs uncapped). Returns early when
  /// `stop` becomes true.
  void run_paced(double speed, const std::atomic<bool>& stop);

 private:
  std::mutex mu_;
  std::unique_ptr<scenario::Runner> runner_;
};

/// Status code and JSON body for one API call; exposed for tests.
struct Response {
  int status = 200;
  nlohmann::json body;
};

Response get_picture(Session& s);
Response get_advisories(Session& s, const std::string& site);
Response post_action(Session& s, const std::string& site, const std::string& body);
Response post_command(Session& s, const std::string& body);
Response get_log(Session& s, const std::string& since);

class ApiServer {
 public:
  explicit ApiServer(Session& session);
  ~ApiServer();
  ApiServer(const ApiServer&) = delete;
  ApiServer& operator=(const ApiServer&) = delete;

  /// Binds and serves on a background thread. Port 0 picks a free port.
  /// Throws Error when the port is busy.
  void start(const std::string& host, int port);
  void stop();
  int port() const { return port_; }

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  std::thread thread_;
  int port_ = 0;
};

}  // namespace ccic::serve
