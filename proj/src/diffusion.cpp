#include "mdp/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "mdp/errors.hpp"

namespace mdp {

namespace {

constexpr int kNoisedCols = kFlatDim - kStateDim;

int populated_neighbors(const std::vector<std::uint8_t>& valid) {
  int n = 0;
  for (std::size_t i = 1; i < valid.size(); ++i) n += valid[i] ? 1 : 0;
  return n;
}

RowMatrix standard_normal(int rows, int cols, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  RowMatrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

}  // namespace

LossParts combine_losses(const RowMatrix& eps_hat, const RowMatrix& eps, const std::vector<std::uint8_t>& agent_valid,
                         double alpha_ego) {
  if (eps_hat.rows() != eps.rows() || eps_hat.cols() != eps.cols()) throw ShapeMismatch("eps shapes differ");
  const RowMatrix d = (eps_hat - eps).rightCols(eps.cols() - kStateDim);
  LossParts out;
  out.ego = d.row(0).squaredNorm() / static_cast<double>(d.cols());
  const int n = populated_neighbors(agent_valid);
  if (n > 0) {
    double s = 0.0;
    for (std::size_t r = 1; r < agent_valid.size(); ++r)
      if (agent_valid[r]) s += d.row(static_cast<Eigen::Index>(r)).squaredNorm();
    out.neighbor = s / (static_cast<double>(n) * static_cast<double>(d.cols()));
  }
  out.total = out.neighbor + alpha_ego * out.ego;
  return out;
}

RowMatrix loss_weights(const std::vector<std::uint8_t>& agent_valid, double alpha_ego, int rows) {
  RowMatrix w = RowMatrix::Zero(rows, kFlatDim);
  w.row(0).rightCols(kNoisedCols).setConstant(alpha_ego / kNoisedCols);
  const int n = populated_neighbors(agent_valid);
  for (int r = 1; r < rows; ++r)
    if (agent_valid[static_cast<std::size_t>(r)])
      w.row(r).rightCols(kNoisedCols).setConstant(1.0 / (static_cast<double>(n) * kNoisedCols));
  return w;
}

std::vector<ModelInput> encode_corpus(const std::vector<Scenario>& corpus, const TokenBudget& budget) {
  std::vector<ModelInput> out;
  out.reserve(corpus.size());
  for (const auto& s : corpus) out.push_back(to_model_frame(s, budget));
  return out;
}

Normalizer fit_normalizer(const std::vector<ModelInput>& inputs) {
  std::vector<RowMatrix> targets;
  std::vector<std::vector<std::uint8_t>> valid;
  for (const auto& in : inputs) {
    if (!in.target) continue;
    targets.push_back(*in.target);
    valid.push_back(in.agent_valid);
  }
  return Normalizer::fit(targets, valid);
}

TrainingItem make_training_item(const ModelInput& in, const Normalizer& norm) {
  if (!in.target) throw MalformedScenario("training scenario lacks an expert future");
  TrainingItem item;
  item.tokens = scene_tokens<float>(in);
  item.agent_valid = in.agent_valid;
  item.target = norm.normalize(*in.target);
  for (std::size_t r = 0; r < in.agent_valid.size(); ++r)
    if (!in.agent_valid[r]) item.target.row(static_cast<Eigen::Index>(r)).setZero();
  return item;
}

nlohmann::json TrainConfig::to_json() const {
  return {{"alpha_ego", alpha_ego}, {"lr", lr}, {"batch_size", batch_size}, {"epochs", epochs},
          {"clip_norm", clip_norm}, {"seed", seed}, {"ema_decay", ema_decay},
          {"draws_per_scene", draws_per_scene}, {"history_speed_noise", history_speed_noise},
          {"history_pos_noise", history_pos_noise}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.alpha_ego = j.value("alpha_ego", c.alpha_ego);
  c.lr = j.value("lr", c.lr);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.epochs = j.value("epochs", c.epochs);
  c.clip_norm = j.value("clip_norm", c.clip_norm);
  c.seed = j.value("seed", c.seed);
  c.ema_decay = j.value("ema_decay", c.ema_decay);
  c.draws_per_scene = j.value("draws_per_scene", c.draws_per_scene);
  c.history_speed_noise = j.value("history_speed_noise", c.history_speed_noise);
  c.history_pos_noise = j.value("history_pos_noise", c.history_pos_noise);
  if (c.history_speed_noise < 0.0 || c.history_pos_noise < 0.0) throw Error("history noise must be non-negative");
  if (c.alpha_ego < 0.0) throw Error("alpha_ego must be non-negative");
  if (c.batch_size < 1 || c.epochs < 0 || c.draws_per_scene < 1) throw Error("invalid training sizes");
  return c;
}

LossParts score_loss(const DiffusionSchedule& sched, const std::vector<TrainingItem>& items,
                     const std::vector<NoiseDraw>& draws, const NoisePredictor& predict, double alpha_ego) {
  if (draws.size() != items.size()) throw ShapeMismatch("one noise draw per item is required");
  LossParts sum;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const RowMatrix x_t = add_noise(sched, items[i].target, draws[i].t, draws[i].eps, true);
    const LossParts p = combine_losses(predict(i, x_t, draws[i].t), draws[i].eps, items[i].agent_valid, alpha_ego);
    sum.total += p.total;
    sum.ego += p.ego;
    sum.neighbor += p.neighbor;
  }
  if (!items.empty()) {
    const double n = static_cast<double>(items.size());
    sum.total /= n;
    sum.ego /= n;
    sum.neighbor /= n;
  }
  return sum;
}

LossParts score_loss(const Checkpoint& ckpt, const std::vector<TrainingItem>& items,
                     const std::vector<NoiseDraw>& draws, int s, double alpha_ego) {
  const DiffusionSchedule sched = make_schedule(ckpt.schedule);
  const Denoiser<float> net = ckpt.denoiser();
  auto predict = [&](std::size_t i, const RowMatrix& x_t, double t) {
    nn::Tape<float> tape(false);
    const auto enc = net.encode(tape, items[i].tokens);
    const auto x = tape.constant(x_t.cast<float>());
    const auto e = net.predict_noise(tape, enc, x, static_cast<float>(t / sched.T()), s,
                                         static_cast<float>(sched.signal(t)), static_cast<float>(sched.noise(t)));
    return RowMatrix(tape.value(e).cast<double>());
  };
  return score_loss(sched, items, draws, predict, alpha_ego);
}

SceneTokens<float> jitter_ego_history(const SceneTokens<float>& tokens, const TrainConfig& cfg, std::mt19937_64& rng) {
  SceneTokens<float> out = tokens;
  std::normal_distribution<double> n01;
  // The last row is the current state and stays exact.
  for (int t = 0; t + 1 < out.history; ++t) {
    auto row = out.agents.row(t);
    const double dv = cfg.history_speed_noise * n01(rng);
    const double ds = cfg.history_pos_noise * n01(rng);
    row(0) += static_cast<float>(ds * row(2) / kPositionScale);
    row(1) += static_cast<float>(ds * row(3) / kPositionScale);
    row(4) += static_cast<float>(dv / kSpeedScale);
  }
  return out;
}

TrainResult train_base(const std::vector<Scenario>& corpus, const TrainConfig& cfg,
                       const DenoiserConfig& model_cfg, const ScheduleParams& sched_params,
                       const std::function<void(const EpochLog&)>& on_epoch) {
  if (corpus.empty()) throw Error("training corpus is empty");
  model_cfg.validate();
  const DiffusionSchedule sched = make_schedule(sched_params);
  const auto inputs = encode_corpus(corpus, model_cfg.budget);

  TrainResult res;
  Checkpoint& ck = res.checkpoint;
  ck.config = model_cfg;
  ck.schedule = sched_params;
  ck.normalizer = fit_normalizer(inputs);
  std::vector<TrainingItem> items;
  items.reserve(inputs.size());
  for (const auto& in : inputs) items.push_back(make_training_item(in, ck.normalizer));

  init_denoiser_params(ck.params, model_cfg, cfg.seed);
  const Denoiser<float> net(model_cfg, ck.params);
  nn::Adam<float> opt;
  std::mt19937_64 rng(cfg.seed ^ 0x5eed0f7a1a5ULL);
  std::uniform_int_distribution<int> pick_t(1, sched.T());

  const int n = static_cast<int>(items.size());
  const int batch = std::min(cfg.batch_size, n);
  const long steps_per_epoch = (n + batch - 1) / batch;
  const long total_steps = steps_per_epoch * cfg.epochs;
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  const int P = model_cfg.budget.agents;
  const bool jitter = cfg.history_speed_noise > 0.0 || cfg.history_pos_noise > 0.0;

  long step = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    EpochLog log;
    log.epoch = epoch;
    double draws_seen = 0.0;
    for (int b0 = 0; b0 < n; b0 += batch) {
      const int b1 = std::min(n, b0 + batch);
      const double per = 1.0 / (static_cast<double>(b1 - b0) * cfg.draws_per_scene);
      ck.params.zero_grad();
      double batch_loss = 0.0;
      for (int k = b0; k < b1; ++k) {
        const TrainingItem& item = items[static_cast<std::size_t>(order[static_cast<std::size_t>(k)])];
        nn::Tape<float> tape(true);
        const auto enc = net.encode(tape, jitter ? jitter_ego_history(item.tokens, cfg, rng) : item.tokens);
        const nn::Mat<float> w = (loss_weights(item.agent_valid, cfg.alpha_ego, P) * per).cast<float>();
        nn::Var acc;
        for (int d = 0; d < cfg.draws_per_scene; ++d) {
          const double t = pick_t(rng);
          const RowMatrix eps = standard_normal(P, kFlatDim, rng);
          const RowMatrix x_t = add_noise(sched, item.target, t, eps, true);
          const auto xv = tape.constant(x_t.cast<float>());
          const auto e = net.predict_noise(tape, enc, xv, static_cast<float>(t / sched.T()), 0,
                                             static_cast<float>(sched.signal(t)), static_cast<float>(sched.noise(t)));
          const LossParts parts =
              combine_losses(tape.value(e).cast<double>(), eps, item.agent_valid, cfg.alpha_ego);
          log.loss_total += parts.total;
          log.loss_ego += parts.ego;
          log.loss_neighbor += parts.neighbor;
          draws_seen += 1.0;
          const auto term = nn::weighted_sq_error(tape, e, nn::Mat<float>(eps.cast<float>()), w);
          acc = acc.valid() ? nn::add(tape, acc, term) : term;
        }
        batch_loss += static_cast<double>(tape.value(acc)(0, 0));
        tape.backward(acc);
        ck.params.collect(tape);
      }
      if (!std::isfinite(batch_loss))
        throw NonFiniteLoss("non-finite loss at epoch " + std::to_string(epoch) + ", step " + std::to_string(step));
      log.grad_norm += ck.params.clip_grad_norm(cfg.clip_norm);
      opt.step(ck.params, nn::cosine_lr(cfg.lr, step, total_steps));
      ck.params.ema_update(cfg.ema_decay);
      ++step;
    }
    log.loss_total /= draws_seen;
    log.loss_ego /= draws_seen;
    log.loss_neighbor /= draws_seen;
    log.grad_norm /= static_cast<double>(steps_per_epoch);
    res.log.push_back(log);
    if (on_epoch) on_epoch(log);
  }
  return res;
}

void write_train_log(const std::vector<EpochLog>& log, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "epoch,loss_total,loss_ego,loss_neighbor,grad_norm\n";
  out.precision(10);
  for (const auto& e : log)
    out << e.epoch << ',' << e.loss_total << ',' << e.loss_ego << ',' << e.loss_neighbor << ',' << e.grad_norm << '\n';
}

}  // namespace mdp
