#include "mmworld/config.hpp"

#include <map>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "mmworld/tensor_io.hpp"

namespace mmw {

using nlohmann::json;

struct RunConfig::Impl {
  std::map<std::string, json> values;        // sorted keys -> canonical dump
  std::map<std::string, std::string> docs;
};

namespace {

struct KeyDef {
  const char* key;
  json def;
  const char* doc;
};

const std::vector<KeyDef>& registry() {
  static const std::vector<KeyDef> defs = {
      {"seed", 0, "master seed; all randomness derives from it"},
      // scene generation
      {"scene.count", 4, "number of scenes the scenegen command emits"},
      {"scene.frames", 16, "T; each scene covers 1+T frames (T divisible by 4)"},
      {"scene.boxes", 6, "vehicles per scene"},
      {"scene.ego_speed", 5.0, "ego speed along +x, m/s"},
      {"scene.lane_spacing", 3.5, "lane width, m"},
      {"scene.frame_dt", 0.5, "seconds between frames"},
      {"scene.cameras", 2, "camera rig size (max 6)"},
      {"scene.cam_width", 64, "camera image width, px (divisible by 16)"},
      {"scene.cam_height", 64, "camera image height, px (divisible by 16)"},
      // range geometry
      {"range.beams", 32, "LiDAR beam count (grid rows before repetition)"},
      {"range.azimuth", 1024, "azimuth bins (grid columns)"},
      {"range.fov_up", 10.0, "upper vertical FOV bound, degrees"},
      {"range.fov_down", -30.0, "lower vertical FOV bound, degrees"},
      {"range.r_max", 70.0, "maximum range, m"},
      {"range.repeat_k", 4, "row repetition factor, one of {1,2,4}"},
      {"range.normalization", "linear", "range scaling: linear or log"},
      // layout encoder
      {"layout.c1", 8, "layout encoder stage-1 channels"},
      {"layout.c2", 16, "layout encoder stage-2 channels"},
      {"layout.palette",
       json::array({0.20, 0.40, 1.00, 1.00, 0.50, 0.10, 1.00, 0.90, 0.10, 0.60, 0.20, 0.80,
                    1.00, 0.20, 0.20, 0.20, 1.00, 0.40, 0.55, 0.55, 0.55, 1.00, 0.60, 0.80,
                    0.20, 0.95, 0.20, 0.90, 0.95, 0.90}),
       "10 RGB triples: 8 object categories then 2 lane-marking types"},
      // sequence VAEs
      {"vae.c1", 8, "VAE stage-1 channels"},
      {"vae.c2", 16, "VAE stage-2 channels"},
      {"vae.c3", 32, "VAE stage-3 channels"},
      {"vae.latent_channels", 4, "latent channels per modality"},
      {"vae.lr", 5e-5, "VAE learning rate"},
      {"vae.steps", 300, "VAE optimizer steps"},
      {"vae.batch", 2, "VAE batch size (sequences)"},
      {"loss.lambda1", 1.0, "reconstruction (L1) weight"},
      {"loss.lambda2", 1e-3,
       "KL weight used for training; the composite-loss definition defaults to 1.0"},
      {"loss.lambda3", 0.3, "perceptual feature distance weight"},
      // diffusion transformer
      {"dit.dim", 64, "token dimension"},
      {"dit.depth", 2, "transformer blocks"},
      {"dit.heads", 4, "attention heads (dim/heads even)"},
      {"dit.c_emb", 4, "view-embedding channels"},
      {"dit.text_dim", 32, "text embedding dimension"},
      {"dit.text_tokens", 8, "prompt tokens per stream"},
      {"dit.text_vocab", 512, "hash-tokenizer vocabulary"},
      {"dit.lr", 2e-5, "flow-matching learning rate"},
      {"dit.steps", 400, "flow-matching optimizer steps"},
      {"dit.batch", 1, "scenes per step"},
      {"dit.time_m", 0.0, "logit-normal timestep location"},
      {"dit.time_s", 1.0, "logit-normal timestep scale"},
      {"dit.zero_init_out", false, "zero residual-branch output projections at init"},
      // sampling
      {"sample.steps", 20, "Euler integration steps"},
      // metrics
      {"metrics.bins", 100, "BEV histogram bins per axis"},
      {"metrics.extent", 50.0, "BEV half-extent, m"},
      {"metrics.z_min", -3.0, "BEV z-band lower bound, m"},
      {"metrics.z_max", 3.0, "BEV z-band upper bound, m"},
      {"metrics.tau", 0.2, "F-score distance threshold, m"},
      {"metrics.chamfer_squared", false, "use squared distances in Chamfer"},
      {"metrics.mmd_scale", 1e4, "MMD report scale"},
      {"metrics.mmd_gamma", 0.0, "kernel bandwidth override (0 = median heuristic)"},
  };
  return defs;
}

[[noreturn]] void unknown_key(const std::string& key) {
  throw std::invalid_argument("config: unknown key \"" + key + "\" (see --help for the registry)");
}

}  // namespace

RunConfig::RunConfig() : impl_(std::make_shared<Impl>()) {
  for (const KeyDef& d : registry()) {
    impl_->values[d.key] = d.def;
    impl_->docs[d.key] = d.doc;
  }
}

void RunConfig::load_json(const std::string& text, const std::string& origin) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw std::runtime_error(origin + ": malformed JSON at byte " + std::to_string(e.byte));
  }
  if (!j.is_object()) throw std::runtime_error(origin + ": config must be a JSON object");
  // Copy-on-write so configs sharing an Impl stay independent.
  impl_ = std::make_shared<Impl>(*impl_);
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!impl_->values.count(it.key())) unknown_key(it.key());
    impl_->values[it.key()] = it.value();
  }
}

void RunConfig::load_file(const std::string& path) { load_json(read_file(path), path); }

void RunConfig::set_override(const std::string& assignment) {
  const size_t eq = assignment.find('=');
  if (eq == std::string::npos)
    throw std::invalid_argument("config: override must be key=value, got \"" + assignment + "\"");
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  if (!impl_->values.count(key)) unknown_key(key);
  impl_ = std::make_shared<Impl>(*impl_);
  json v = json::parse(raw, nullptr, false);
  if (v.is_discarded()) v = raw;  // bare word: treat as string
  impl_->values[key] = v;
}

namespace {

const json& fetch(const std::map<std::string, json>& values, const std::string& key) {
  auto it = values.find(key);
  if (it == values.end()) unknown_key(key);
  return it->second;
}

}  // namespace

double RunConfig::num(const std::string& key) const {
  const json& v = fetch(impl_->values, key);
  if (!v.is_number()) throw std::invalid_argument("config: " + key + " must be a number");
  return v.get<double>();
}

int64_t RunConfig::integer(const std::string& key) const {
  const json& v = fetch(impl_->values, key);
  if (!v.is_number_integer())
    throw std::invalid_argument("config: " + key + " must be an integer");
  return v.get<int64_t>();
}

bool RunConfig::flag(const std::string& key) const {
  const json& v = fetch(impl_->values, key);
  if (!v.is_boolean()) throw std::invalid_argument("config: " + key + " must be a boolean");
  return v.get<bool>();
}

std::string RunConfig::str(const std::string& key) const {
  const json& v = fetch(impl_->values, key);
  if (!v.is_string()) throw std::invalid_argument("config: " + key + " must be a string");
  return v.get<std::string>();
}

std::vector<double> RunConfig::numbers(const std::string& key) const {
  const json& v = fetch(impl_->values, key);
  if (!v.is_array()) throw std::invalid_argument("config: " + key + " must be an array");
  return v.get<std::vector<double>>();
}

std::string RunConfig::dump(int indent) const {
  json j(impl_->values);
  return indent > 0 ? j.dump(indent) + "\n" : j.dump();
}

uint64_t RunConfig::hash() const {
  uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : dump(0)) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string RunConfig::help() {
  std::ostringstream os;
  for (const KeyDef& d : registry())
    os << "  " << d.key << " (default " << d.def.dump() << "): " << d.doc << "\n";
  return os.str();
}

RangeSpec RunConfig::range_spec() const {
  RangeSpec spec;
  spec.beams = static_cast<int>(integer("range.beams"));
  spec.azimuth_bins = static_cast<int>(integer("range.azimuth"));
  spec.fov_up = num("range.fov_up");
  spec.fov_down = num("range.fov_down");
  spec.r_max = num("range.r_max");
  spec.repeat_k = static_cast<int>(integer("range.repeat_k"));
  const std::string norm = str("range.normalization");
  if (norm == "linear")
    spec.normalization = RangeSpec::Normalization::kLinear;
  else if (norm == "log")
    spec.normalization = RangeSpec::Normalization::kLog;
  else
    throw std::invalid_argument("config: range.normalization must be linear or log");
  spec.validate();
  return spec;
}

SceneGenParams RunConfig::scenegen_params() const {
  SceneGenParams p;
  p.seed = seed();
  p.frames_t = static_cast<int>(integer("scene.frames"));
  p.n_boxes = static_cast<int>(integer("scene.boxes"));
  p.ego_speed = num("scene.ego_speed");
  p.lane_spacing = num("scene.lane_spacing");
  p.frame_dt = num("scene.frame_dt");
  p.n_cameras = static_cast<int>(integer("scene.cameras"));
  p.cam_width = static_cast<int>(integer("scene.cam_width"));
  p.cam_height = static_cast<int>(integer("scene.cam_height"));
  p.validate();
  return p;
}

VaeTrainConfig RunConfig::vae_train_config(bool camera_modality) const {
  VaeTrainConfig cfg;
  cfg.vae.in_channels = camera_modality ? 3 : 1;
  cfg.vae.c1 = static_cast<int>(integer("vae.c1"));
  cfg.vae.c2 = static_cast<int>(integer("vae.c2"));
  cfg.vae.c3 = static_cast<int>(integer("vae.c3"));
  cfg.vae.latent_channels = static_cast<int>(integer("vae.latent_channels"));
  cfg.weights.lambda1 = num("loss.lambda1");
  cfg.weights.lambda2 = num("loss.lambda2");
  cfg.weights.lambda3 = num("loss.lambda3");
  cfg.lr = num("vae.lr");
  cfg.steps = static_cast<int>(integer("vae.steps"));
  cfg.batch = static_cast<int>(integer("vae.batch"));
  cfg.seed = seed();
  return cfg;
}

DiTConfig RunConfig::dit_config() const {
  DiTConfig cfg;
  cfg.views = static_cast<int>(integer("scene.cameras"));
  cfg.frames_t = static_cast<int>(integer("scene.frames"));
  const int64_t ch = integer("scene.cam_height"), cw = integer("scene.cam_width");
  const int64_t lh = integer("range.beams") * integer("range.repeat_k");
  const int64_t lw = integer("range.azimuth");
  if (ch % 16 || cw % 16)
    throw std::invalid_argument("config: camera extents must be divisible by 16");
  if (lh % 16 || lw % 16)
    throw std::invalid_argument(
        "config: repeated beam count and azimuth bins must be divisible by 16");
  cfg.cam_latent_h = static_cast<int>(ch / 8);
  cfg.cam_latent_w = static_cast<int>(cw / 8);
  cfg.lidar_latent_h = static_cast<int>(lh / 8);
  cfg.lidar_latent_w = static_cast<int>(lw / 8);
  cfg.latent_channels = static_cast<int>(integer("vae.latent_channels"));
  cfg.cond_channels = static_cast<int>(integer("vae.latent_channels"));
  cfg.emb_channels = static_cast<int>(integer("dit.c_emb"));
  cfg.dim = static_cast<int>(integer("dit.dim"));
  cfg.depth = static_cast<int>(integer("dit.depth"));
  cfg.heads = static_cast<int>(integer("dit.heads"));
  cfg.text_dim = static_cast<int>(integer("dit.text_dim"));
  cfg.n_text_tokens = static_cast<int>(integer("dit.text_tokens"));
  cfg.text_vocab = static_cast<int>(integer("dit.text_vocab"));
  cfg.layout_c1 = static_cast<int>(integer("layout.c1"));
  cfg.layout_c2 = static_cast<int>(integer("layout.c2"));
  cfg.validate();
  return cfg;
}

DitTrainConfig RunConfig::dit_train_config() const {
  DitTrainConfig cfg;
  cfg.model = dit_config();
  cfg.lr = num("dit.lr");
  cfg.steps = static_cast<int>(integer("dit.steps"));
  cfg.batch = static_cast<int>(integer("dit.batch"));
  cfg.seed = seed();
  cfg.time_m = num("dit.time_m");
  cfg.time_s = num("dit.time_s");
  return cfg;
}

MetricsConfig RunConfig::metrics_config() const {
  MetricsConfig cfg;
  cfg.bev_bins = static_cast<int>(integer("metrics.bins"));
  cfg.bev_extent = num("metrics.extent");
  cfg.bev_z_min = num("metrics.z_min");
  cfg.bev_z_max = num("metrics.z_max");
  cfg.fscore_tau = num("metrics.tau");
  cfg.chamfer_squared = flag("metrics.chamfer_squared");
  cfg.mmd_scale = num("metrics.mmd_scale");
  cfg.mmd_gamma = num("metrics.mmd_gamma");
  return cfg;
}

void write_manifest(const std::string& dir, const std::string& command, const RunConfig& cfg) {
  json j;
  j["command"] = command;
  j["seed"] = cfg.seed();
  j["config"] = json::parse(cfg.dump(0));
  std::ostringstream hex;
  hex << std::hex << cfg.hash();
  j["config_hash"] = hex.str();
  j["formats"] = {{"tnsr", 1}, {"rimg", 1}, {"scene_json", 1}};
  atomic_write_file(dir + "/manifest.json", j.dump(2) + "\n");
}

}  // namespace mmw
