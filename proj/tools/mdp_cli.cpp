// Command-line front end: data generation, training, fine-tuning,
// evaluation and the session server.

#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "mdp/behavior.hpp"
#include "mdp/checkpoint.hpp"
#include "mdp/closed_loop.hpp"
#include "mdp/diffusion.hpp"
#include "mdp/grpo.hpp"
#include "mdp/scenario_gen.hpp"
#include "mdp/scenario_io.hpp"
#include "mdp/service.hpp"
#include "mdp/strategy.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

json read_config(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config " + path);
  try {
    json j = json::parse(in);
    if (!j.is_object()) throw UsageError("config must be a JSON object");
    return j;
  } catch (const json::parse_error& e) {
    throw UsageError("config " + path + ": " + e.what());
  }
}

/// Scalar config keys fill options the command line left unset.
void apply_config(CLI::App* sub, const json& cfg) {
  for (const auto& [key, value] : cfg.items()) {
    if (value.is_object() || value.is_array()) continue;
    CLI::Option* opt = nullptr;
    try {
      opt = sub->get_option("--" + key);
    } catch (const CLI::OptionNotFound&) {
      continue;
    }
    if (opt->count() > 0) continue;
    opt->add_result(value.is_string() ? value.get<std::string>() : value.dump());
    opt->run_callback();
  }
}

mdp::SamplerConfig sampler_config(const json& cfg, int steps) {
  mdp::SamplerConfig s = cfg.contains("sampler") ? mdp::SamplerConfig::from_json(cfg["sampler"]) : mdp::SamplerConfig{};
  if (steps > 0) s.n_steps = steps;
  return s;
}

std::vector<mdp::Scenario> load_corpus(const std::string& path) {
  if (path.empty()) throw UsageError("--data is required");
  return mdp::load_jsonl(path);
}

void ensure_parent(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-head diffusion trajectory planner"};
  app.require_subcommand(1);

  std::uint64_t seed = 0;
  std::string config_path, out, data, checkpoint_path, strategy_arg, kind = "mixed", mode = "reactive";
  std::string host = "127.0.0.1", planner_kind = "diffusion";
  int n = 0, epochs = -1, steps = 0, port = 8080;
  double horizon = 15.0, realtime = 1.0, pre_roll = 0.0;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--seed", seed, "Random seed");
    sub->add_option("--config", config_path, "JSON config mirroring the flags");
    sub->add_option("--out", out, "Output path");
  };

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic scenario corpus (JSONL)");
  common(gen);
  gen->add_option("--n", n, "Number of scenarios");
  gen->add_option("--kind", kind, "straight | lead_vehicle | lane_change | mixed");
  gen->add_option("--pre-roll", pre_roll, "Maximum random lead-in before the history (s)")->check(CLI::NonNegativeNumber);

  auto* train = app.add_subcommand("train", "Pre-train the shared denoiser");
  common(train);
  train->add_option("--data", data, "Training corpus (JSONL)");
  train->add_option("--epochs", epochs, "Epochs");

  auto* ft = app.add_subcommand("finetune", "GRPO fine-tuning of one strategy head");
  common(ft);
  ft->add_option("--data", data, "Fine-tuning corpus (JSONL)");
  ft->add_option("--checkpoint", checkpoint_path, "Input checkpoint directory");
  ft->add_option("--strategy", strategy_arg, "Strategy head")
      ->check(CLI::IsMember({"aggressive", "conservative", "comfortable"}));
  ft->add_option("--epochs", epochs, "Epochs");
  ft->add_option("--steps", steps, "Sampler steps");

  auto* eo = app.add_subcommand("eval-open", "Open-loop behaviour statistics (CSV)");
  common(eo);
  eo->add_option("--data", data, "Evaluation corpus (JSONL)");
  eo->add_option("--checkpoint", checkpoint_path, "Checkpoint directory");
  eo->add_option("--strategy", strategy_arg, "Strategy name or 'all'")
      ->check(CLI::IsMember({"all", "base", "aggressive", "conservative", "comfortable"}));
  eo->add_option("--n", n, "Number of scenarios (default: whole corpus)");
  eo->add_option("--steps", steps, "Sampler steps");

  auto* ec = app.add_subcommand("eval-closed", "Closed-loop episode scores");
  common(ec);
  ec->add_option("--data", data, "Evaluation corpus (JSONL)");
  ec->add_option("--checkpoint", checkpoint_path, "Checkpoint directory");
  ec->add_option("--strategy", strategy_arg, "Strategy name or 'all'")
      ->check(CLI::IsMember({"all", "base", "aggressive", "conservative", "comfortable"}));
  ec->add_option("--n", n, "Number of scenarios (default: whole corpus)");
  ec->add_option("--steps", steps, "Sampler steps");
  ec->add_option("--horizon", horizon, "Episode length in seconds");
  ec->add_option("--mode", mode, "Traffic mode")->check(CLI::IsMember({"reactive", "non_reactive"}));
  ec->add_option("--planner", planner_kind, "diffusion | expert")->check(CLI::IsMember({"diffusion", "expert"}));

  auto* sv = app.add_subcommand("serve", "HTTP + WebSocket session server");
  common(sv);
  sv->add_option("--data", data, "Scenario corpus offered to sessions (JSONL)");
  sv->add_option("--checkpoint", checkpoint_path, "Checkpoint directory");
  sv->add_option("--host", host, "Bind address");
  sv->add_option("--port", port, "Port")->check(CLI::Range(0, 65535));
  sv->add_option("--realtime-factor", realtime, "Sim seconds per wall second (<= 0: unpaced)");
  sv->add_option("--horizon", horizon, "Session length in seconds");
  sv->add_option("--mode", mode, "Traffic mode")->check(CLI::IsMember({"reactive", "non_reactive"}));
  sv->add_option("--steps", steps, "Sampler steps");
  sv->add_option("--planner", planner_kind, "diffusion | expert")->check(CLI::IsMember({"diffusion", "expert"}));

  json cfg;
  try {
    app.parse(argc, argv);
    CLI::App* sub = app.get_subcommands().front();
    cfg = read_config(config_path);
    apply_config(sub, cfg);
    if (sub == ft && strategy_arg.empty()) throw UsageError("--strategy is required");
    if (sub == ft && strategy_arg == "base") throw UsageError("the base head is never fine-tuned");
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 2;
  }

  try {
    if (*gen) {
      if (n < 1) throw UsageError("--n must be at least 1");
      if (out.empty()) throw UsageError("--out is required");
      const auto corpus = mdp::generate_scenarios(seed, n, mdp::parse_scenario_kind(kind), pre_roll);
      ensure_parent(out);
      mdp::save_jsonl(out, corpus);
      std::cout << "wrote " << corpus.size() << " scenarios to " << out << '\n';
    } else if (*train) {
      if (out.empty()) throw UsageError("--out is required");
      const auto corpus = load_corpus(data);
      mdp::TrainConfig tc = cfg.contains("train") ? mdp::TrainConfig::from_json(cfg["train"]) : mdp::TrainConfig{};
      tc.seed = seed;
      if (epochs >= 0) tc.epochs = epochs;
      const mdp::DenoiserConfig mc =
          cfg.contains("model") ? mdp::DenoiserConfig::from_json(cfg["model"]) : mdp::DenoiserConfig{};
      mdp::ScheduleParams sp;
      sp.beta_max = mdp::kPipelineBetaMax;
      if (cfg.contains("schedule")) sp = mdp::ScheduleParams::from_json(cfg["schedule"]);
      const auto res = mdp::train_base(corpus, tc, mc, sp, [](const mdp::EpochLog& e) {
        std::cerr << "epoch " << e.epoch << " loss " << e.loss_total << " grad_norm " << e.grad_norm << '\n';
      });
      mdp::save_checkpoint(res.checkpoint, out);
      mdp::write_train_log(res.log, fs::path(out) / "train_log.csv");
      std::cout << "trained " << res.log.size() << " epochs; checkpoint in " << out << '\n';
    } else if (*ft) {
      if (out.empty()) throw UsageError("--out is required");
      if (checkpoint_path.empty()) throw UsageError("--checkpoint is required");
      const auto corpus = load_corpus(data);
      const mdp::Checkpoint ckpt = mdp::load_checkpoint(checkpoint_path);
      mdp::GrpoConfig gc = cfg.contains("grpo") ? mdp::GrpoConfig::from_json(cfg["grpo"]) : mdp::GrpoConfig{};
      gc.strategy = mdp::parse_strategy(strategy_arg);
      gc.seed = seed;
      if (epochs >= 0) gc.epochs = epochs;
      if (steps > 0) gc.sampler.n_steps = steps;
      const auto res = mdp::finetune(ckpt, corpus, gc, [](const mdp::FinetuneLog& e) {
        std::cerr << "epoch " << e.epoch << " mean_reward " << e.mean_reward << " loss " << e.loss << '\n';
      });
      mdp::save_checkpoint(res.checkpoint, out);
      mdp::write_finetune_log(res.log, fs::path(out) / ("finetune_" + strategy_arg + ".csv"));
      std::cout << "fine-tuned " << strategy_arg << " for " << res.log.size() << " epochs; checkpoint in " << out
                << '\n';
    } else if (*eo) {
      if (checkpoint_path.empty()) throw UsageError("--checkpoint is required");
      const auto corpus = load_corpus(data);
      const mdp::Checkpoint ckpt = mdp::load_checkpoint(checkpoint_path);
      const mdp::SamplerConfig sc = sampler_config(cfg, steps);
      const int count = n > 0 ? n : static_cast<int>(corpus.size());
      std::vector<int> heads;
      if (strategy_arg.empty() || strategy_arg == "all")
        for (int s = 0; s < mdp::kNumStrategies; ++s) heads.push_back(s);
      else
        heads.push_back(mdp::parse_strategy(strategy_arg));
      std::vector<mdp::OpenLoopRow> rows;
      for (int s : heads) rows.push_back(mdp::open_loop_report(ckpt, corpus, s, count, sc, seed));
      if (!out.empty()) {
        ensure_parent(out);
        mdp::write_open_loop_csv(rows, out);
      }
      std::cout << mdp::format_open_loop_table(rows);
    } else if (*ec) {
      const auto corpus = load_corpus(data);
      std::optional<mdp::Checkpoint> ckpt;
      if (planner_kind == "diffusion") {
        if (checkpoint_path.empty()) throw UsageError("--checkpoint is required");
        ckpt = mdp::load_checkpoint(checkpoint_path);
      }
      const mdp::SamplerConfig sc = sampler_config(cfg, steps);
      const int count = n > 0 ? n : static_cast<int>(corpus.size());
      mdp::EpisodeConfig base;
      base.horizon_s = horizon;
      base.mode = mdp::parse_traffic_mode(mode);
      base.seed = seed;
      std::vector<int> heads;
      if (strategy_arg.empty() || strategy_arg == "all")
        for (int s = 0; s < mdp::kNumStrategies; ++s) heads.push_back(s);
      else
        heads.push_back(mdp::parse_strategy(strategy_arg));
      std::cout << "strategy,mean_composite,collision_free_rate,corridor_rate,mean_progress,mean_comfort\n";
      for (int s : heads) {
        std::unique_ptr<mdp::EgoPlanner> planner;
        if (ckpt)
          planner = std::make_unique<mdp::DiffusionPlanner>(*ckpt, sc);
        else
          planner = std::make_unique<mdp::ExpertPlanner>();
        std::optional<fs::path> dir;
        if (!out.empty()) dir = fs::path(out) / mdp::strategy_name(s);
        const auto r = mdp::score_suite(*planner, corpus, s, count, base, dir);
        std::cout << mdp::strategy_name(s) << ',' << r.mean_composite << ',' << r.collision_free_rate << ','
                  << r.corridor_rate << ',' << r.mean_progress << ',' << r.mean_comfort << '\n';
      }
    } else if (*sv) {
      auto corpus = load_corpus(data);
      std::shared_ptr<const mdp::Checkpoint> ckpt;
      if (planner_kind == "diffusion") {
        if (checkpoint_path.empty()) throw UsageError("--checkpoint is required");
        ckpt = std::make_shared<const mdp::Checkpoint>(mdp::load_checkpoint(checkpoint_path));
      }
      const mdp::SamplerConfig sc = sampler_config(cfg, steps);
      mdp::ServiceConfig svc_cfg;
      svc_cfg.host = host;
      svc_cfg.port = static_cast<unsigned short>(port);
      svc_cfg.realtime_factor = realtime;
      svc_cfg.horizon_s = horizon;
      svc_cfg.mode = mdp::parse_traffic_mode(mode);
      svc_cfg.seed = seed;
      svc_cfg.llm = mdp::LlmConfig::from_env();
      mdp::PlannerFactory factory = [ckpt, sc](const mdp::Scenario&) -> std::unique_ptr<mdp::EgoPlanner> {
        if (ckpt) return std::make_unique<mdp::DiffusionPlanner>(*ckpt, sc);
        return std::make_unique<mdp::ExpertPlanner>();
      };

      sigset_t set;
      sigemptyset(&set);
      sigaddset(&set, SIGINT);
      sigaddset(&set, SIGTERM);
      pthread_sigmask(SIG_BLOCK, &set, nullptr);
      mdp::Service service(std::move(corpus), factory, svc_cfg);
      const unsigned short bound = service.start();
      std::cout << "listening on " << host << ':' << bound << std::endl;
      int sig = 0;
      sigwait(&set, &sig);
      service.stop();
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
