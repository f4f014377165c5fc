#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "diffseg/dataset.hpp"
#include "diffseg/diffusion.hpp"
#include "diffseg/metrics.hpp"
#include "diffseg/schedule.hpp"

namespace diffseg {

/// Training objectives evaluated per fixed timestep.
enum class Objective {
  eq1,  ///< unconditional epsilon loss on images
  eq2,  ///< x0 loss on masks
  eq3,  ///< conditional epsilon loss on masks
};

const char* to_string(Objective o);
Objective objective_from_string(std::string_view s);

struct ProfileOptions {
  /// (sample, noise) draws per timestep. Samples cycle through the data in
  /// order, so profiles of different models see the same pairs.
  int n_eval = 64;
  std::uint64_t seed = 0;
  int max_batch = 64;
};

/// Mean squared error between x0 and the model's x0 estimate (clamped to
/// [-1,1]) in the {-1,+1} mask encoding, one value per grid timestep.
/// epsilon models are converted with eps_to_x0. `conditioned` must match the
/// model (ConfigError otherwise).
TimestepProfile profile_mask_error(const Denoiser& model, std::span<const MaskImagePair> data,
                                   const DiffusionSchedule& sched, std::span<const int> t_grid, bool conditioned,
                                   const ProfileOptions& options = {});

/// The training objective's value at each grid timestep.
TimestepProfile profile_training_loss(const Denoiser& model, std::span<const MaskImagePair> data, Objective objective,
                                      const DiffusionSchedule& sched, std::span<const int> t_grid,
                                      const ProfileOptions& options = {});

/// Grid lo, lo+step, ... up to and including hi when it lands on the stride.
std::vector<int> make_grid(int lo, int hi, int step);

}  // namespace diffseg
