#include "mdp/service.hpp"

#include <sys/socket.h>

#include <chrono>
#include <list>
#include <set>
#include <sstream>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include "mdp/strategy.hpp"

namespace mdp {

namespace net = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using tcp = net::ip::tcp;
using nlohmann::json;

namespace {

json state_json(const AgentState& s) {
  return {{"x", s.x}, {"y", s.y}, {"heading", s.heading}, {"speed", s.speed}};
}

std::vector<std::string> split_path(const std::string& target) {
  const std::string path = target.substr(0, target.find('?'));
  std::vector<std::string> out;
  std::stringstream ss(path);
  std::string part;
  while (std::getline(ss, part, '/'))
    if (!part.empty()) out.push_back(part);
  return out;
}

json error_body(const std::string& msg) { return {{"error", msg}}; }

}  // namespace

// ---------------------------------------------------------------- Session

Session::Session(std::string id, const Scenario& scene, std::unique_ptr<EgoPlanner> planner, const ServiceConfig& cfg)
    : id_(std::move(id)),
      scene_(scene),
      planner_(std::move(planner)),
      cfg_(cfg),
      episode_(*planner_, scene_, EpisodeConfig{0, cfg.horizon_s, cfg.mode, cfg.seed, {}}) {
  frames_.push_back(make_frame(episode_.trace().front()));
  thread_ = std::thread([this] { loop(); });
}

Session::~Session() {
  close();
  if (thread_.joinable()) thread_.join();
}

std::string Session::make_frame(const TickRecord& rec) {
  json agents = json::array();
  for (const auto& a : rec.agents) agents.push_back(state_json(a));
  json plan = json::array();
  for (const auto& p : rec.plan) plan.push_back({p.x, p.y, p.heading});
  const double dt = rec.tick == 0 ? 1.0 : kTicksPerFrame * kTickDt;
  const double jerk = rec.tick == 0 ? 0.0 : (rec.ego_accel - prev_accel_) / dt;
  prev_accel_ = rec.ego_accel;
  const json frame{{"t", rec.t},
                   {"tick", rec.tick},
                   {"ego", state_json(rec.ego)},
                   {"agents", agents},
                   {"planned_trajectory", plan},
                   {"active_strategy", strategy_name(rec.strategy)},
                   {"events", rec.events},
                   {"metrics", {{"speed", rec.ego.speed}, {"accel", rec.ego_accel}, {"jerk", jerk}}}};
  return frame.dump();
}

void Session::loop() {
  using clock = std::chrono::steady_clock;
  const auto period = cfg_.realtime_factor > 0.0
                          ? std::chrono::duration_cast<clock::duration>(
                                std::chrono::duration<double>(kTicksPerFrame * kTickDt / cfg_.realtime_factor))
                          : clock::duration::zero();
  auto next = clock::now() + period;
  for (;;) {
    {
      std::unique_lock lock(mu_);
      if (period > clock::duration::zero())
        cv_.wait_until(lock, next, [this] { return closed_ || interrupted_; });
      if (closed_ || interrupted_) break;
      for (int s : queued_) episode_.request_strategy(s);
      queued_.clear();
    }
    next += period;
    std::string err;
    try {
      for (int k = 0; k < kTicksPerFrame && !episode_.done(); ++k) episode_.step();
    } catch (const std::exception& e) {
      err = e.what();
    }
    std::string frame = make_frame(episode_.trace().back());
    std::lock_guard lock(mu_);
    frames_.push_back(std::move(frame));
    t_ = episode_.world().time;
    tick_ = episode_.world().tick;
    active_ = episode_.active_strategy();
    if (!err.empty()) error_ = err;
    if (!err.empty() || episode_.done()) finished_ = true;
    cv_.notify_all();
    if (finished_) break;
  }
  std::lock_guard lock(mu_);
  finished_ = true;
  cv_.notify_all();
}

json Session::command(const std::string& text) {
  int current = 0;
  {
    std::lock_guard lock(mu_);
    if (closed_) throw SessionClosed("session " + id_ + " is closed");
    current = requested_;
  }
  const IntentResult r = route_intent(text, current, cfg_.llm);
  std::lock_guard lock(mu_);
  if (closed_) throw SessionClosed("session " + id_ + " is closed");
  requested_ = r.strategy;
  queued_.push_back(r.strategy);
  json out = r.to_json();
  out["t"] = t_;
  return out;
}

std::string Session::state_name() const {
  if (closed_) return "closed";
  if (!error_.empty()) return "failed";
  return finished_ ? "finished" : "running";
}

json Session::status() const {
  std::lock_guard lock(mu_);
  json j{{"session_id", id_},
         {"scenario_id", scene_.id},
         {"state", state_name()},
         {"t", t_},
         {"tick", tick_},
         {"active_strategy", strategy_name(active_)},
         {"requested_strategy", strategy_name(requested_)},
         {"frames", frames_.size()}};
  if (!error_.empty()) j["error"] = error_;
  return j;
}

void Session::close() {
  std::lock_guard lock(mu_);
  closed_ = true;
  cv_.notify_all();
}

bool Session::closed() const {
  std::lock_guard lock(mu_);
  return closed_;
}

void Session::interrupt() {
  std::lock_guard lock(mu_);
  interrupted_ = true;
  cv_.notify_all();
}

std::optional<std::string> Session::frame(std::size_t index) const {
  std::unique_lock lock(mu_);
  cv_.wait(lock, [&] { return index < frames_.size() || finished_ || closed_ || interrupted_; });
  if (index < frames_.size() && !interrupted_) return frames_[index];
  return std::nullopt;
}

// ---------------------------------------------------------------- Service

struct Service::Impl {
  std::map<std::string, Scenario> scenarios;
  std::vector<std::string> order;
  PlannerFactory make_planner;
  ServiceConfig cfg;

  mutable std::mutex mu;
  std::map<std::string, std::shared_ptr<Session>> sessions;
  int next_id = 1;

  net::io_context ioc;
  std::optional<tcp::acceptor> acceptor;
  std::thread accept_thread;
  struct Conn {
    std::shared_ptr<tcp::socket> socket;
    std::thread thread;
    std::shared_ptr<std::atomic<bool>> done;
  };
  std::mutex conn_mu;
  std::list<Conn> conns;
  std::atomic<bool> stopping{false};
  std::mutex stop_mu;
  std::condition_variable stop_cv;
  bool stopped = false;

  void accept_loop(Service& svc);
  void serve(Service& svc, std::shared_ptr<tcp::socket> sock);
  void reap();
};

Service::Service(std::vector<Scenario> scenarios, PlannerFactory make_planner, ServiceConfig cfg)
    : impl_(std::make_unique<Impl>()) {
  if (scenarios.empty()) throw Error("service needs at least one scenario");
  for (auto& s : scenarios) {
    impl_->order.push_back(s.id);
    impl_->scenarios.emplace(s.id, std::move(s));
  }
  impl_->make_planner = std::move(make_planner);
  impl_->cfg = std::move(cfg);
}

Service::~Service() { stop(); }

std::shared_ptr<Session> Service::find(const std::string& id) const {
  std::lock_guard lock(impl_->mu);
  const auto it = impl_->sessions.find(id);
  return it == impl_->sessions.end() ? nullptr : it->second;
}

std::pair<int, json> Service::handle(const std::string& method, const std::string& target, const std::string& body) {
  const auto parts = split_path(target);
  auto parse_body = [&]() -> std::optional<json> {
    try {
      json j = json::parse(body);
      if (!j.is_object()) return std::nullopt;
      return j;
    } catch (const json::exception&) {
      return std::nullopt;
    }
  };

  if (parts.size() == 1 && parts[0] == "scenarios") {
    if (method != "GET") return {405, error_body("method not allowed")};
    return {200, {{"scenarios", impl_->order}}};
  }
  if (parts.empty() || parts[0] != "sessions") return {404, error_body("no such route")};

  if (parts.size() == 1) {
    if (method == "GET") {
      json list = json::array();
      std::lock_guard lock(impl_->mu);
      for (const auto& [id, s] : impl_->sessions) list.push_back(s->status());
      return {200, {{"sessions", list}}};
    }
    if (method != "POST") return {405, error_body("method not allowed")};
    const auto j = parse_body();
    if (!j) return {400, error_body("malformed JSON body")};
    if (!j->contains("scenario_id") || !(*j)["scenario_id"].is_string())
      return {400, error_body("scenario_id (string) is required")};
    const std::string sid = (*j)["scenario_id"].get<std::string>();
    const auto it = impl_->scenarios.find(sid);
    if (it == impl_->scenarios.end()) return {404, error_body("unknown scenario " + sid)};
    std::string id;
    ServiceConfig cfg = impl_->cfg;
    {
      std::lock_guard lock(impl_->mu);
      cfg.seed += static_cast<std::uint64_t>(impl_->next_id);
      id = "s" + std::to_string(impl_->next_id++);
    }
    try {
      auto session = std::make_shared<Session>(id, it->second, impl_->make_planner(it->second), cfg);
      std::lock_guard lock(impl_->mu);
      impl_->sessions.emplace(id, std::move(session));
    } catch (const std::exception& e) {
      return {500, error_body(e.what())};
    }
    return {200, {{"session_id", id}, {"scenario_id", sid}}};
  }

  const auto session = find(parts[1]);
  if (!session) return {404, error_body("unknown session " + parts[1])};

  if (parts.size() == 2) {
    if (method == "GET") return {200, session->status()};
    if (method == "DELETE") {
      session->close();
      return {200, session->status()};
    }
    return {405, error_body("method not allowed")};
  }
  if (parts.size() == 3 && parts[2] == "command") {
    if (method != "POST") return {405, error_body("method not allowed")};
    if (session->closed()) return {409, error_body("session is closed")};
    const auto j = parse_body();
    if (!j) return {400, error_body("malformed JSON body")};
    if (!j->contains("text") || !(*j)["text"].is_string()) return {400, error_body("text (string) is required")};
    try {
      return {200, session->command((*j)["text"].get<std::string>())};
    } catch (const SessionClosed& e) {
      return {409, error_body(e.what())};
    }
  }
  return {404, error_body("no such route")};
}

void Service::Impl::reap() {
  std::lock_guard lock(conn_mu);
  for (auto it = conns.begin(); it != conns.end();) {
    if (it->done->load()) {
      it->thread.join();
      it = conns.erase(it);
    } else {
      ++it;
    }
  }
}

void Service::Impl::serve(Service& svc, std::shared_ptr<tcp::socket> sock) {
  beast::error_code ec;
  beast::flat_buffer buf;
  auto cors = [](auto& res) {
    res.set(http::field::access_control_allow_origin, "*");
    res.set(http::field::access_control_allow_methods, "GET, POST, DELETE, OPTIONS");
    res.set(http::field::access_control_allow_headers, "Content-Type");
  };
  for (;;) {
    http::request<http::string_body> req;
    http::read(*sock, buf, req, ec);
    if (ec) break;
    const std::string target(req.target());

    if (websocket::is_upgrade(req)) {
      const auto parts = split_path(target);
      std::shared_ptr<Session> session;
      if (parts.size() == 3 && parts[0] == "sessions" && parts[2] == "stream") session = svc.find(parts[1]);
      if (!session) {
        http::response<http::string_body> res{http::status::not_found, req.version()};
        res.set(http::field::content_type, "application/json");
        res.body() = error_body("unknown session stream").dump();
        res.prepare_payload();
        http::write(*sock, res, ec);
        break;
      }
      websocket::stream<tcp::socket&> ws(*sock);
      ws.accept(req, ec);
      if (ec) break;
      ws.text(true);
      for (std::size_t i = 0;; ++i) {
        const auto f = session->frame(i);
        if (!f) break;
        ws.write(net::buffer(*f), ec);
        if (ec) break;
      }
      if (!ec) ws.close(websocket::close_code::normal, ec);
      break;
    }

    http::response<http::string_body> res;
    res.version(req.version());
    res.keep_alive(req.keep_alive());
    cors(res);
    if (req.method() == http::verb::options) {
      res.result(http::status::no_content);
    } else {
      const auto [status, body] = svc.handle(std::string(req.method_string()), target, req.body());
      res.result(static_cast<unsigned>(status));
      res.set(http::field::content_type, "application/json");
      res.body() = body.dump();
    }
    res.prepare_payload();
    http::write(*sock, res, ec);
    if (ec || !req.keep_alive()) break;
  }
  sock->shutdown(tcp::socket::shutdown_both, ec);
}

void Service::Impl::accept_loop(Service& svc) {
  while (!stopping) {
    auto sock = std::make_shared<tcp::socket>(ioc);
    beast::error_code ec;
    acceptor->accept(*sock, ec);
    if (ec || stopping) break;
    reap();
    auto done = std::make_shared<std::atomic<bool>>(false);
    std::lock_guard lock(conn_mu);
    conns.push_back({sock, std::thread([this, &svc, sock, done] {
                       try {
                         serve(svc, sock);
                       } catch (const std::exception&) {
                       }
                       *done = true;
                     }),
                     done});
  }
}

unsigned short Service::start() {
  auto& im = *impl_;
  if (im.acceptor) throw Error("service already started");
  const tcp::endpoint ep(net::ip::make_address(im.cfg.host), im.cfg.port);
  im.acceptor.emplace(im.ioc);
  im.acceptor->open(ep.protocol());
  im.acceptor->set_option(net::socket_base::reuse_address(true));
  im.acceptor->bind(ep);
  im.acceptor->listen();
  const unsigned short port = im.acceptor->local_endpoint().port();
  im.accept_thread = std::thread([this] { impl_->accept_loop(*this); });
  return port;
}

void Service::stop() {
  auto& im = *impl_;
  if (im.stopping.exchange(true)) return;
  if (im.acceptor) {
    ::shutdown(im.acceptor->native_handle(), SHUT_RDWR);
    if (im.accept_thread.joinable()) im.accept_thread.join();
    beast::error_code ec;
    im.acceptor->close(ec);
  }
  {
    std::lock_guard lock(im.mu);
    for (auto& [id, s] : im.sessions) s->interrupt();
  }
  {
    std::lock_guard lock(im.conn_mu);
    for (auto& c : im.conns) ::shutdown(c.socket->native_handle(), SHUT_RDWR);
  }
  for (auto& c : im.conns)
    if (c.thread.joinable()) c.thread.join();
  im.conns.clear();
  {
    std::lock_guard lock(im.mu);
    im.sessions.clear();
  }
  std::lock_guard lock(im.stop_mu);
  im.stopped = true;
  im.stop_cv.notify_all();
}

void Service::wait() {
  std::unique_lock lock(impl_->stop_mu);
  impl_->stop_cv.wait(lock, [this] { return impl_->stopped; });
}

}  // namespace mdp
