#include "mmworld/params.hpp"

#include <cmath>
#include <filesystem>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "mmworld/tensor_io.hpp"

namespace mmw {

using nlohmann::json;

Tensor& ParamStore::add(const std::string& name, Tensor init) {
  if (has(name)) throw std::invalid_argument("param store: duplicate name " + name);
  index_[name] = names_.size();
  names_.push_back(name);
  values_.push_back(std::move(init));
  return values_.back();
}

Tensor& ParamStore::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::invalid_argument("param store: unknown name " + name);
  return values_[it->second];
}

const Tensor& ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::invalid_argument("param store: unknown name " + name);
  return values_[it->second];
}

int64_t ParamStore::total_elements() const {
  int64_t n = 0;
  for (const Tensor& t : values_) n += t.numel();
  return n;
}

std::vector<Var> bind_params(Tape& tape, const ParamStore& store, bool requires_grad) {
  std::vector<Var> out;
  out.reserve(store.size());
  for (const std::string& name : store.names()) out.push_back(tape.leaf(store.get(name), requires_grad));
  return out;
}

std::vector<Tensor> collect_grads(const Tape& tape, const std::vector<Var>& bound) {
  std::vector<Tensor> out;
  out.reserve(bound.size());
  for (Var v : bound) {
    const Tensor* g = tape.grad(v);
    out.push_back(g ? *g : Tensor::zeros(v.shape()));
  }
  return out;
}

Adam::Adam(AdamConfig cfg, const ParamStore& params) : cfg_(cfg) {
  for (const std::string& name : params.names()) {
    m_.push_back(Tensor::zeros(params.get(name).shape()));
    v_.push_back(Tensor::zeros(params.get(name).shape()));
  }
}

void Adam::step(ParamStore& params, const std::vector<Tensor>& grads) {
  if (grads.size() != params.size())
    throw std::invalid_argument("adam: gradient count does not match parameter count");
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (size_t i = 0; i < grads.size(); ++i) {
    Tensor& p = params.get(params.names()[i]);
    Tensor& m = m_[i];
    Tensor& v = v_[i];
    const Tensor& g = grads[i];
    for (int64_t k = 0; k < p.numel(); ++k) {
      m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * g[k];
      v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * g[k] * g[k];
      const double mh = m[k] / bc1;
      const double vh = v[k] / bc2;
      p[k] -= cfg_.lr * mh / (std::sqrt(vh) + cfg_.eps);
    }
  }
}

namespace {

std::string param_file(const std::string& dir, const std::string& name) {
  return dir + "/" + name + ".tnsr";
}

}  // namespace

void Adam::save_state(const std::string& dir, const ParamStore& params) const {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  json j;
  j["t"] = t_;
  j["lr"] = cfg_.lr;
  j["beta1"] = cfg_.beta1;
  j["beta2"] = cfg_.beta2;
  j["eps"] = cfg_.eps;
  atomic_write_file(dir + "/adam.json", j.dump(2) + "\n");
  for (size_t i = 0; i < params.size(); ++i) {
    write_tnsr(param_file(dir, "m." + params.names()[i]), m_[i]);
    write_tnsr(param_file(dir, "v." + params.names()[i]), v_[i]);
  }
}

void Adam::load_state(const std::string& dir, const ParamStore& params) {
  const json j = json::parse(read_file(dir + "/adam.json"));
  t_ = j.at("t").get<int64_t>();
  for (size_t i = 0; i < params.size(); ++i) {
    m_[i] = read_tnsr(param_file(dir, "m." + params.names()[i]));
    v_[i] = read_tnsr(param_file(dir, "v." + params.names()[i]));
  }
}

void save_checkpoint(const std::string& dir, const ParamStore& params,
                     const std::string& config_echo_json, int64_t step, const Adam* optimizer) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  json j;
  j["step"] = step;
  j["params"] = json::array();
  for (const std::string& name : params.names()) {
    j["params"].push_back({{"name", name}, {"shape", params.get(name).shape()}});
    write_tnsr(param_file(dir, name), params.get(name));
  }
  if (!config_echo_json.empty()) j["config"] = json::parse(config_echo_json);
  atomic_write_file(dir + "/params.json", j.dump(2) + "\n");
  if (optimizer) optimizer->save_state(dir + "/opt", params);
}

Checkpoint load_checkpoint(const std::string& dir) {
  const std::string manifest = dir + "/params.json";
  json j;
  try {
    j = json::parse(read_file(manifest));
  } catch (const json::parse_error& e) {
    throw std::runtime_error(manifest + ": malformed JSON at byte " + std::to_string(e.byte));
  }
  Checkpoint ck;
  ck.step = j.at("step").get<int64_t>();
  if (j.contains("config")) ck.config_echo_json = j["config"].dump();
  for (const json& p : j.at("params")) {
    const std::string name = p.at("name").get<std::string>();
    Tensor t = read_tnsr(param_file(dir, name));
    const Shape want = p.at("shape").get<Shape>();
    if (!shapes_equal(t.shape(), want))
      throw std::runtime_error(dir + ": parameter " + name + " has shape " + shape_str(t.shape()) +
                               ", manifest says " + shape_str(want));
    ck.params.add(name, std::move(t));
  }
  return ck;
}

}  // namespace mmw
