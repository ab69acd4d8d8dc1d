#include <gtest/gtest.h>

#include <chrono>
#include <memory>
#include <string>
#include <thread>
#include <vector>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>

#include "json.hpp"
#include "mdp/checkpoint.hpp"
#include "mdp/closed_loop.hpp"
#include "mdp/scenario_gen.hpp"
#include "mdp/service.hpp"
#include "test_util.hpp"

// After Eigen: resolver headers pulled in here define a _res macro.
#include "httplib.h"

namespace mdp {
namespace {

namespace net = boost::asio;
namespace beast = boost::beast;
namespace websocket = beast::websocket;
using tcp = net::ip::tcp;
using nlohmann::json;

/// Blocking WebSocket reader for one session stream.
class StreamClient {
 public:
  StreamClient(unsigned short port, const std::string& path) : ws_(ioc_) {
    tcp::resolver resolver(ioc_);
    net::connect(ws_.next_layer(), resolver.resolve("127.0.0.1", std::to_string(port)));
    ws_.handshake("127.0.0.1", path);
  }

  /// Next frame, or nullopt once the server closes the stream.
  std::optional<json> next() {
    beast::flat_buffer buf;
    beast::error_code ec;
    ws_.read(buf, ec);
    if (ec) return std::nullopt;
    return json::parse(beast::buffers_to_string(buf.data()));
  }

  std::vector<json> drain() {
    std::vector<json> out;
    while (auto f = next()) out.push_back(std::move(*f));
    return out;
  }

 private:
  net::io_context ioc_;
  websocket::stream<tcp::socket> ws_;
};

class ServiceTest : public ::testing::Test {
 protected:
  void SetUp() override {
    corpus_ = generate_scenarios(5, 3, ScenarioKind::mixed);
    const auto dir = test::scratch_dir("service_ckpt");
    save_checkpoint(test::tiny_checkpoint(corpus_), dir);
    ckpt_ = std::make_shared<const Checkpoint>(load_checkpoint(dir));
    loads_after_setup_ = checkpoint_load_count();
  }

  void start(double realtime_factor, double horizon_s) {
    ServiceConfig cfg;
    cfg.port = 0;
    cfg.realtime_factor = realtime_factor;
    cfg.horizon_s = horizon_s;
    auto ckpt = ckpt_;
    service_ = std::make_unique<Service>(
        corpus_,
        [ckpt](const Scenario&) -> std::unique_ptr<EgoPlanner> {
          SamplerConfig sc;
          sc.n_steps = 3;
          return std::make_unique<DiffusionPlanner>(*ckpt, sc);
        },
        cfg);
    port_ = service_->start();
    http_ = std::make_unique<httplib::Client>("127.0.0.1", port_);
  }

  void TearDown() override {
    http_.reset();
    if (service_) service_->stop();
  }

  std::string create_session(std::size_t scene = 0) {
    const auto res = http_->Post("/sessions", json{{"scenario_id", corpus_[scene].id}}.dump(), "application/json");
    EXPECT_TRUE(res);
    EXPECT_EQ(res->status, 200);
    return json::parse(res->body).at("session_id").get<std::string>();
  }

  std::pair<int, json> post_command(const std::string& id, const std::string& text) {
    const auto res = http_->Post("/sessions/" + id + "/command", json{{"text", text}}.dump(), "application/json");
    return {res->status, json::parse(res->body)};
  }

  std::vector<Scenario> corpus_;
  std::shared_ptr<const Checkpoint> ckpt_;
  std::size_t loads_after_setup_ = 0;
  std::unique_ptr<Service> service_;
  std::unique_ptr<httplib::Client> http_;
  unsigned short port_ = 0;
};

TEST_F(ServiceTest, ListsScenarios) {
  start(0.0, 1.0);
  const auto res = http_->Get("/scenarios");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200);
  EXPECT_EQ(json::parse(res->body).at("scenarios").size(), corpus_.size());
}

TEST_F(ServiceTest, HurryUpSwitchesWithinOnePlanningCycle) {
  start(4.0, 15.0);
  const std::string id = create_session();
  StreamClient stream(port_, "/sessions/" + id + "/stream");
  for (int i = 0; i < 7; ++i) ASSERT_TRUE(stream.next());

  const auto [status, reply] = post_command(id, "please hurry up");
  ASSERT_EQ(status, 200);
  EXPECT_EQ(reply.at("strategy"), "aggressive");
  EXPECT_EQ(reply.at("source"), "keyword");
  const double t_cmd = reply.at("t").get<double>();

  std::optional<double> t_switch;
  while (auto f = stream.next()) {
    if (f->at("active_strategy") == "aggressive") {
      t_switch = f->at("t").get<double>();
      break;
    }
  }
  ASSERT_TRUE(t_switch.has_value());
  EXPECT_GT(*t_switch, t_cmd);
  EXPECT_LE(*t_switch - t_cmd, 0.5 + 1e-9);

  EXPECT_EQ(post_command(id, "drive carefully").second.at("strategy"), "conservative");
  EXPECT_EQ(post_command(id, "stay cautious").second.at("strategy"), "conservative");
  EXPECT_EQ(post_command(id, "zzzz").second.at("source"), "fallback_keep_current");
  EXPECT_EQ(checkpoint_load_count(), loads_after_setup_);
}

TEST_F(ServiceTest, SubscribersSeeIdenticalMonotoneFrames) {
  start(0.0, 2.0);
  const std::string id = create_session(1);
  StreamClient a(port_, "/sessions/" + id + "/stream");
  StreamClient b(port_, "/sessions/" + id + "/stream");
  const auto fa = a.drain();
  const auto fb = b.drain();
  ASSERT_EQ(fa.size(), 21u);
  EXPECT_EQ(fa, fb);
  for (std::size_t i = 1; i < fa.size(); ++i) {
    EXPECT_GT(fa[i].at("t").get<double>(), fa[i - 1].at("t").get<double>());
    EXPECT_EQ(fa[i].at("tick").get<int>() - fa[i - 1].at("tick").get<int>(), kTicksPerFrame);
  }
  for (const char* key : {"t", "ego", "agents", "planned_trajectory", "active_strategy", "metrics"})
    EXPECT_TRUE(fa.back().contains(key)) << key;
  for (const char* key : {"speed", "accel", "jerk"}) EXPECT_TRUE(fa.back().at("metrics").contains(key)) << key;

  // A late subscriber replays the same sequence.
  StreamClient late(port_, "/sessions/" + id + "/stream");
  EXPECT_EQ(late.drain(), fa);
  const auto st = json::parse(http_->Get("/sessions/" + id)->body);
  EXPECT_EQ(st.at("state"), "finished");
}

TEST_F(ServiceTest, ErrorStatuses) {
  start(4.0, 15.0);
  EXPECT_EQ(post_command("nope", "hurry").first, 404);
  EXPECT_EQ(http_->Get("/sessions/nope")->status, 404);
  EXPECT_EQ(http_->Post("/sessions", "{not json", "application/json")->status, 400);
  EXPECT_EQ(http_->Post("/sessions", "{}", "application/json")->status, 400);
  EXPECT_EQ(http_->Post("/sessions", json{{"scenario_id", "missing"}}.dump(), "application/json")->status, 404);

  const std::string id = create_session();
  EXPECT_EQ(http_->Post("/sessions/" + id + "/command", "[1,2", "application/json")->status, 400);
  EXPECT_EQ(http_->Post("/sessions/" + id + "/command", "{\"text\": 3}", "application/json")->status, 400);
  EXPECT_EQ(http_->Delete("/sessions/" + id)->status, 200);
  EXPECT_EQ(post_command(id, "hurry").first, 409);
  EXPECT_EQ(json::parse(http_->Get("/sessions/" + id)->body).at("state"), "closed");
  EXPECT_THROW(StreamClient(port_, "/sessions/nope/stream"), beast::system_error);
}

TEST_F(ServiceTest, DirectDispatchWithoutSocket) {
  Service svc(corpus_, [](const Scenario&) { return std::make_unique<StationaryPlanner>(); }, ServiceConfig{});
  EXPECT_EQ(svc.handle("GET", "/unknown", "").first, 404);
  EXPECT_EQ(svc.handle("PUT", "/scenarios", "").first, 405);
  const auto [status, body] = svc.handle("POST", "/sessions", json{{"scenario_id", corpus_[2].id}}.dump());
  ASSERT_EQ(status, 200);
  const std::string id = body.at("session_id");
  ASSERT_NE(svc.find(id), nullptr);
  EXPECT_EQ(svc.handle("POST", "/sessions/" + id + "/command", R"({"text":"make it smooth"})").second.at("strategy"),
            "comfortable");
  EXPECT_EQ(svc.handle("GET", "/sessions", "").second.at("sessions").size(), 1u);
}

}  // namespace
}  // namespace mdp
