#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "mmworld/tape.hpp"
#include "mmworld/tensor.hpp"

namespace mmw {

/// Named learnable tensors in deterministic insertion order.
class ParamStore {
 public:
  Tensor& add(const std::string& name, Tensor init);
  bool has(const std::string& name) const { return index_.count(name) != 0; }
  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;
  const std::vector<std::string>& names() const { return names_; }
  size_t size() const { return names_.size(); }
  int64_t total_elements() const;

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> values_;
  std::unordered_map<std::string, size_t> index_;
};

/// Leaves for every parameter, aligned with the store's order.
std::vector<Var> bind_params(Tape& tape, const ParamStore& store, bool requires_grad);
/// Gradients aligned with the store's order (zeros where a parameter was
/// unused by the loss).
std::vector<Tensor> collect_grads(const Tape& tape, const std::vector<Var>& bound);

struct AdamConfig {
  double lr = 2e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  Adam(AdamConfig cfg, const ParamStore& params);
  void step(ParamStore& params, const std::vector<Tensor>& grads);
  int64_t steps_taken() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

  void save_state(const std::string& dir, const ParamStore& params) const;
  void load_state(const std::string& dir, const ParamStore& params);

 private:
  AdamConfig cfg_;
  int64_t t_ = 0;
  std::vector<Tensor> m_, v_;
};

/// Checkpoint directory: params.json (names, shapes, step) + one TNSR per
/// parameter; optimizer moments optional under opt/.
void save_checkpoint(const std::string& dir, const ParamStore& params,
                     const std::string& config_echo_json, int64_t step,
                     const Adam* optimizer = nullptr);
struct Checkpoint {
  ParamStore params;
  std::string config_echo_json;
  int64_t step = 0;
};
Checkpoint load_checkpoint(const std::string& dir);

}  // namespace mmw
