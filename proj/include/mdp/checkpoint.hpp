#pragma once

#include <cstddef>
#include <filesystem>

#include "mdp/denoiser.hpp"
#include "mdp/nn/param_store.hpp"
#include "mdp/schedule.hpp"
#include "mdp/trajectory.hpp"

namespace mdp {

/// Everything needed to run the planner: network configuration and weights
/// (with their EMA copy), the trajectory normaliser and the noise schedule.
struct Checkpoint {
  DenoiserConfig config;
  Normalizer normalizer;
  ScheduleParams schedule;
  nn::ParamStore<float> params;

  bool heads_shared() const { return mdp::heads_shared(params); }
  Denoiser<float> denoiser() const { return Denoiser<float>(config, params); }
};

/// Writes `dir`/manifest.json, `dir`/params.bin and `dir`/params.ema.bin.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& dir);

/// Throws IncompatibleCheckpoint on a missing file, unknown format, or a
/// blob that disagrees with the manifest.
Checkpoint load_checkpoint(const std::filesystem::path& dir);

/// Number of successful load_checkpoint calls in this process.
std::size_t checkpoint_load_count();

/// True when every tensor name, shape and value agrees bitwise.
bool same_parameters(const nn::ParamStore<float>& a, const nn::ParamStore<float>& b);

}  // namespace mdp
