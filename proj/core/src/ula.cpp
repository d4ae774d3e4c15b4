#include "mmworld/ula.hpp"

#include <cmath>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "mmworld/tensor_io.hpp"

namespace mmw {

using nlohmann::json;

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

}  // namespace

void LatentStats::validate() const {
  require(!mean.empty() && mean.size() == std.size(), "latent stats: mean/std size mismatch");
  for (double s : std) require(std::isfinite(s) && s > 0.0, "latent stats: std must be positive");
  for (double m : mean) require(std::isfinite(m), "latent stats: mean must be finite");
}

void UlaParams::validate() const {
  require(!mu.empty() && mu.size() == sigma.size(), "ula params: mu/sigma size mismatch");
  for (double s : sigma) require(std::isfinite(s) && s > 0.0, "ula params: sigma must be positive");
}

LatentStats compute_stats(const std::vector<Tensor>& latents) {
  require(!latents.empty(), "compute_stats: empty latent set");
  const int64_t C = latents[0].shape().back();
  int64_t count = 0;
  std::vector<double> sum(static_cast<size_t>(C), 0.0);
  for (const Tensor& z : latents) {
    require(z.ndim() >= 1 && z.shape().back() == C, "compute_stats: inconsistent channel count");
    const int64_t rows = z.numel() / C;
    for (int64_t r = 0; r < rows; ++r)
      for (int64_t c = 0; c < C; ++c) sum[static_cast<size_t>(c)] += z[r * C + c];
    count += rows;
  }
  require(count >= 2, "compute_stats: need at least 2 positions per channel");
  LatentStats stats;
  stats.mean.resize(static_cast<size_t>(C));
  for (int64_t c = 0; c < C; ++c) stats.mean[static_cast<size_t>(c)] = sum[static_cast<size_t>(c)] / count;
  std::vector<double> ss(static_cast<size_t>(C), 0.0);
  for (const Tensor& z : latents) {
    const int64_t rows = z.numel() / C;
    for (int64_t r = 0; r < rows; ++r)
      for (int64_t c = 0; c < C; ++c) {
        const double d = z[r * C + c] - stats.mean[static_cast<size_t>(c)];
        ss[static_cast<size_t>(c)] += d * d;
      }
  }
  stats.std.resize(static_cast<size_t>(C));
  for (int64_t c = 0; c < C; ++c) {
    const double var = ss[static_cast<size_t>(c)] / count;  // population variance
    if (!(var > 0.0))
      throw std::invalid_argument("compute_stats: channel " + std::to_string(c) +
                                  " has zero variance; calibration undefined");
    stats.std[static_cast<size_t>(c)] = std::sqrt(var);
  }
  return stats;
}

UlaParams ula_derive(const LatentStats& stats_l, const LatentStats& stats_c_data,
                     const LatentStats& prior_c) {
  stats_l.validate();
  stats_c_data.validate();
  prior_c.validate();
  const size_t C = stats_l.channels();
  require(stats_c_data.channels() == C && prior_c.channels() == C,
          "ula_derive: channel count mismatch");
  UlaParams p;
  p.mu.resize(C);
  p.sigma.resize(C);
  for (size_t c = 0; c < C; ++c) {
    const double ratio = stats_l.std[c] / stats_c_data.std[c];
    p.mu[c] = stats_l.mean[c] - stats_c_data.mean[c] * ratio + prior_c.mean[c] * ratio;
    p.sigma[c] = stats_l.std[c] * prior_c.std[c] / stats_c_data.std[c];
  }
  p.validate();
  return p;
}

namespace {

template <typename F>
Tensor per_channel(const Tensor& z, size_t channels, F f) {
  if (z.shape().back() != static_cast<int64_t>(channels))
    throw std::invalid_argument("ula: tensor channel count " + std::to_string(z.shape().back()) +
                                " does not match params (" + std::to_string(channels) + ")");
  Tensor out(z.shape());
  const int64_t C = static_cast<int64_t>(channels);
  const int64_t rows = z.numel() / C;
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t c = 0; c < C; ++c)
      out[r * C + c] = f(z[r * C + c], static_cast<size_t>(c));
  return out;
}

}  // namespace

Tensor ula_apply(const Tensor& z, const UlaParams& p) {
  p.validate();
  return per_channel(z, p.channels(),
                     [&p](double v, size_t c) { return (v - p.mu[c]) / p.sigma[c]; });
}

Tensor ula_invert(const Tensor& zn, const UlaParams& p) {
  p.validate();
  return per_channel(zn, p.channels(),
                     [&p](double v, size_t c) { return v * p.sigma[c] + p.mu[c]; });
}

Tensor ula_stepwise(const Tensor& z, const LatentStats& stats_l,
                    const LatentStats& stats_c_data, const LatentStats& prior_c) {
  Tensor standardized = per_channel(z, stats_l.channels(), [&](double v, size_t c) {
    return (v - stats_l.mean[c]) / stats_l.std[c];
  });
  Tensor redressed = per_channel(standardized, stats_c_data.channels(), [&](double v, size_t c) {
    return v * stats_c_data.std[c] + stats_c_data.mean[c];
  });
  return per_channel(redressed, prior_c.channels(), [&](double v, size_t c) {
    return (v - prior_c.mean[c]) / prior_c.std[c];
  });
}

namespace {

json vectors_to_json(const char* ka, const std::vector<double>& a, const char* kb,
                     const std::vector<double>& b) {
  json j;
  j[ka] = a;
  j[kb] = b;
  return j;
}

std::pair<std::vector<double>, std::vector<double>> vectors_from_json(
    const std::string& text, const std::string& origin, const char* ka, const char* kb) {
  try {
    const json j = json::parse(text);
    return {j.at(ka).get<std::vector<double>>(), j.at(kb).get<std::vector<double>>()};
  } catch (const json::exception& e) {
    throw std::runtime_error(origin + ": bad JSON: " + e.what());
  }
}

}  // namespace

std::string stats_to_json(const LatentStats& s) {
  return vectors_to_json("mean", s.mean, "std", s.std).dump(2) + "\n";
}

LatentStats stats_from_json(const std::string& text, const std::string& origin) {
  LatentStats s;
  std::tie(s.mean, s.std) = vectors_from_json(text, origin, "mean", "std");
  s.validate();
  return s;
}

void save_stats(const std::string& path, const LatentStats& s) {
  atomic_write_file(path, stats_to_json(s));
}

LatentStats load_stats(const std::string& path) {
  return stats_from_json(read_file(path), path);
}

std::string ula_params_to_json(const UlaParams& p) {
  return vectors_to_json("mu", p.mu, "sigma", p.sigma).dump(2) + "\n";
}

UlaParams ula_params_from_json(const std::string& text, const std::string& origin) {
  UlaParams p;
  std::tie(p.mu, p.sigma) = vectors_from_json(text, origin, "mu", "sigma");
  p.validate();
  return p;
}

void save_ula_params(const std::string& path, const UlaParams& p) {
  atomic_write_file(path, ula_params_to_json(p));
}

UlaParams load_ula_params(const std::string& path) {
  return ula_params_from_json(read_file(path), path);
}

}  // namespace mmw
