#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "mdp/closed_loop.hpp"
#include "mdp/intent.hpp"

namespace mdp {

inline constexpr int kTicksPerFrame = 2;

using PlannerFactory = std::function<std::unique_ptr<EgoPlanner>(const Scenario&)>;

struct ServiceConfig {
  std::string host = "127.0.0.1";
  unsigned short port = 8080;  // 0 picks a free port
  double realtime_factor = 1.0;  // sim seconds per wall second; <= 0 runs unpaced
  double horizon_s = 15.0;
  TrafficMode mode = TrafficMode::reactive;
  std::uint64_t seed = 0;
  std::optional<LlmConfig> llm;
};

/// One simulated drive stepped by its own thread. Frames accumulate so late
/// subscribers replay the whole sequence.
class Session {
 public:
  Session(std::string id, const Scenario& scene, std::unique_ptr<EgoPlanner> planner, const ServiceConfig& cfg);
  ~Session();
  Session(const Session&) = delete;
  Session& operator=(const Session&) = delete;

  const std::string& id() const { return id_; }

  /// Routes `text` and queues the resulting strategy for the next replan.
  /// Throws SessionClosed once the session is closed.
  nlohmann::json command(const std::string& text);
  nlohmann::json status() const;
  void close();
  bool closed() const;

  /// Frame `index`, blocking until it exists; empty once no more will come.
  std::optional<std::string> frame(std::size_t index) const;
  /// Wakes blocked readers (used at shutdown).
  void interrupt();

 private:
  void loop();
  std::string make_frame(const TickRecord& rec);
  std::string state_name() const;

  std::string id_;
  Scenario scene_;
  std::unique_ptr<EgoPlanner> planner_;
  ServiceConfig cfg_;
  Episode episode_;

  mutable std::mutex mu_;
  mutable std::condition_variable cv_;
  std::vector<std::string> frames_;
  std::vector<int> queued_;
  int requested_ = 0;
  bool closed_ = false;
  bool finished_ = false;
  bool interrupted_ = false;
  std::string error_;
  double t_ = 0.0;
  int tick_ = 0;
  int active_ = 0;
  double prev_accel_ = 0.0;
  std::thread thread_;
};

class SessionClosed : public Error {
 public:
  using Error::Error;
};

/// HTTP + WebSocket front end over a set of sessions.
///   POST   /sessions               {scenario_id} -> {session_id}
///   GET    /sessions/{id}          status
///   POST   /sessions/{id}/command  {text} -> intent result
///   DELETE /sessions/{id}
///   WS     /sessions/{id}/stream   JSON frames
///   GET    /scenarios              available scenario ids
class Service {
 public:
  Service(std::vector<Scenario> scenarios, PlannerFactory make_planner, ServiceConfig cfg);
  ~Service();

  /// Binds and starts accepting; returns the bound port.
  unsigned short start();
  void stop();
  /// Blocks until stop() is called from another thread.
  void wait();

  /// Request dispatch without a socket: returns (status, JSON body).
  std::pair<int, nlohmann::json> handle(const std::string& method, const std::string& target,
                                        const std::string& body);
  std::shared_ptr<Session> find(const std::string& id) const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace mdp
