#pragma once

#include <string>
#include <vector>

#include "mmworld/tensor.hpp"

namespace mmw {

/// Per-channel first and second moments of a latent population.
struct LatentStats {
  std::vector<double> mean;
  std::vector<double> std;  // population std, > 0

  size_t channels() const { return mean.size(); }
  void validate() const;
};

/// Calibrated per-channel affine normalization for one modality's latents.
struct UlaParams {
  std::vector<double> mu;
  std::vector<double> sigma;  // > 0

  size_t channels() const { return mu.size(); }
  void validate() const;
};

/// Population mean/std per trailing channel across every sample and position.
/// Throws if a channel has zero variance (calibration would be undefined).
LatentStats compute_stats(const std::vector<Tensor>& latents);

/// Closed form of the affine recalibration:
///   mu    = mean_l - mean_c * (std_l/std_c) + prior_mean * (std_l/std_c)
///   sigma = std_l * prior_std / std_c
UlaParams ula_derive(const LatentStats& stats_l, const LatentStats& stats_c_data,
                     const LatentStats& prior_c);

/// (z - mu) / sigma along the trailing channel axis.
Tensor ula_apply(const Tensor& z, const UlaParams& p);
/// zn * sigma + mu; exact inverse of ula_apply.
Tensor ula_invert(const Tensor& zn, const UlaParams& p);

/// The equivalent step-by-step pipeline (standardize by the data stats,
/// redress in the reference data stats, then normalize by the prior). Used
/// as the independent route the closed form must reproduce.
Tensor ula_stepwise(const Tensor& z, const LatentStats& stats_l,
                    const LatentStats& stats_c_data, const LatentStats& prior_c);

std::string stats_to_json(const LatentStats& s);
LatentStats stats_from_json(const std::string& text, const std::string& origin);
void save_stats(const std::string& path, const LatentStats& s);
LatentStats load_stats(const std::string& path);

std::string ula_params_to_json(const UlaParams& p);
UlaParams ula_params_from_json(const std::string& text, const std::string& origin);
void save_ula_params(const std::string& path, const UlaParams& p);
UlaParams load_ula_params(const std::string& path);

}  // namespace mmw
