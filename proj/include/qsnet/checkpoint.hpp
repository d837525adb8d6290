#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "qsnet/adam.hpp"
#include "qsnet/losses.hpp"
#include "qsnet/qsnet.hpp"
#include "qsnet/rng.hpp"
#include "qsnet/tensor.hpp"

namespace qsnet {

// Ablation variants: each disables a suffix of the loss terms while keeping
// the content term, so V4 is the full objective and V1 is content-only.
enum class Variant { V1, V2, V3, V4 };

inline const char* variant_name(Variant v) {
  switch (v) {
    case Variant::V1: return "V1";
    case Variant::V2: return "V2";
    case Variant::V3: return "V3";
    case Variant::V4: return "V4";
  }
  throw std::invalid_argument("variant_name: bad variant");
}

inline Variant variant_from_name(const std::string& s) {
  if (s == "V1") return Variant::V1;
  if (s == "V2") return Variant::V2;
  if (s == "V3") return Variant::V3;
  if (s == "V4") return Variant::V4;
  throw std::invalid_argument("variant_from_name: expected V1..V4, got " + s);
}

// The zeroing matrix: V1 keeps content only; V2 adds quasi-sparsity; V3 adds
// the detail term; V4 runs everything.
inline LossWeights variant_weights(LossWeights base, Variant v) {
  switch (v) {
    case Variant::V1:
      base.lambda_q = 0.0f;
      base.lambda_d = 0.0f;
      base.lambda_a = 0.0f;
      break;
    case Variant::V2:
      base.lambda_d = 0.0f;
      base.lambda_a = 0.0f;
      break;
    case Variant::V3:
      base.lambda_a = 0.0f;
      break;
    case Variant::V4:
      break;
  }
  return base;
}

struct TrainConfig {
  int64_t crop = 64;
  int64_t batch_size = 4;
  int64_t max_steps = 3000;
  double base_lr = 1e-3;
  double plateau_factor = 0.1;
  int64_t plateau_patience = 5;  // evaluations without improvement before an lr cut
  int64_t eval_interval = 200;   // steps between validation passes
  double min_rel_improve = 1e-3;
  LossWeights weights;  // base weights; the variant's zeroing is applied on top
  Variant variant = Variant::V4;
  bool feature_sharing = true;  // copied onto the model config by the trainer
  uint64_t seed = 0;
  double stop_at_train_psnr = 0.0;  // >0 enables early stop on train-split PSNR

  void validate() const {
    if (crop <= 0 || batch_size <= 0 || max_steps <= 0)
      throw std::invalid_argument("TrainConfig: crop, batch_size, max_steps must be positive");
    if (base_lr <= 0) throw std::invalid_argument("TrainConfig: base_lr must be positive");
    if (plateau_factor <= 0 || plateau_factor > 1)
      throw std::invalid_argument("TrainConfig: plateau_factor must lie in (0, 1]");
    if (plateau_patience <= 0 || eval_interval <= 0)
      throw std::invalid_argument("TrainConfig: patience and eval interval must be positive");
    if (min_rel_improve < 0) throw std::invalid_argument("TrainConfig: negative improvement bar");
  }
};

inline void to_json(nlohmann::json& j, const LossWeights& w) {
  j = {{"lambda_q", w.lambda_q},
       {"lambda_c", w.lambda_c},
       {"lambda_a", w.lambda_a},
       {"lambda_d", w.lambda_d}};
}

inline void from_json(const nlohmann::json& j, LossWeights& w) {
  j.at("lambda_q").get_to(w.lambda_q);
  j.at("lambda_c").get_to(w.lambda_c);
  j.at("lambda_a").get_to(w.lambda_a);
  j.at("lambda_d").get_to(w.lambda_d);
}

inline void to_json(nlohmann::json& j, const QSNetConfig& c) {
  j = {{"channels", c.channels},       {"groups", c.groups},
       {"n_units", c.n_units},         {"atrous_rates", c.atrous_rates},
       {"n_aux", c.n_aux},             {"feature_sharing", c.feature_sharing},
       {"identity_start", c.identity_start}};
}

inline void from_json(const nlohmann::json& j, QSNetConfig& c) {
  j.at("channels").get_to(c.channels);
  j.at("groups").get_to(c.groups);
  j.at("n_units").get_to(c.n_units);
  j.at("atrous_rates").get_to(c.atrous_rates);
  j.at("n_aux").get_to(c.n_aux);
  j.at("feature_sharing").get_to(c.feature_sharing);
  j.at("identity_start").get_to(c.identity_start);
}

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"crop", c.crop},
       {"batch_size", c.batch_size},
       {"max_steps", c.max_steps},
       {"base_lr", c.base_lr},
       {"plateau_factor", c.plateau_factor},
       {"plateau_patience", c.plateau_patience},
       {"eval_interval", c.eval_interval},
       {"min_rel_improve", c.min_rel_improve},
       {"weights", c.weights},
       {"variant", variant_name(c.variant)},
       {"feature_sharing", c.feature_sharing},
       {"seed", c.seed},
       {"stop_at_train_psnr", c.stop_at_train_psnr}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  j.at("crop").get_to(c.crop);
  j.at("batch_size").get_to(c.batch_size);
  j.at("max_steps").get_to(c.max_steps);
  j.at("base_lr").get_to(c.base_lr);
  j.at("plateau_factor").get_to(c.plateau_factor);
  j.at("plateau_patience").get_to(c.plateau_patience);
  j.at("eval_interval").get_to(c.eval_interval);
  j.at("min_rel_improve").get_to(c.min_rel_improve);
  j.at("weights").get_to(c.weights);
  c.variant = variant_from_name(j.at("variant").get<std::string>());
  j.at("feature_sharing").get_to(c.feature_sharing);
  j.at("seed").get_to(c.seed);
  j.at("stop_at_train_psnr").get_to(c.stop_at_train_psnr);
}

// Full training state: everything needed to resume a run bit-exactly —
// parameters, optimizer moments, the data-order generator, and the plateau
// scheduler's bookkeeping.
struct Checkpoint {
  QSNetConfig model_config;
  TrainConfig train_config;
  int64_t step = 0;
  double best_val_psnr = 0.0;
  int64_t adam_t = 0;
  double lr = 0.0;
  double plateau_best_val_loss = 0.0;
  int64_t plateau_bad_evals = 0;
  std::array<uint64_t, 4> data_rng_state{};
  std::vector<std::string> param_names;
  std::vector<Tensor> param_values;
  std::vector<Tensor> adam_m, adam_v;
};

namespace detail {

constexpr char kCheckpointMagic[8] = {'Q', 'S', 'C', 'K', 'P', 'T', '1', '\n'};

inline void write_u64(std::ostream& out, uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

inline uint64_t read_u64(std::istream& in) {
  uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  return v;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const Checkpoint& c) {
  nlohmann::json j;
  j["model"] = c.model_config;
  j["train"] = c.train_config;
  j["step"] = c.step;
  j["best_val_psnr"] = c.best_val_psnr;
  j["adam_t"] = c.adam_t;
  j["lr"] = c.lr;
  j["plateau_best_val_loss"] = c.plateau_best_val_loss;
  j["plateau_bad_evals"] = c.plateau_bad_evals;
  j["data_rng_state"] = c.data_rng_state;
  j["params"] = nlohmann::json::array();
  for (size_t i = 0; i < c.param_names.size(); ++i)
    j["params"].push_back({{"name", c.param_names[i]}, {"shape", c.param_values[i].shape}});
  const std::string header = j.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
  out.write(detail::kCheckpointMagic, sizeof detail::kCheckpointMagic);
  detail::write_u64(out, header.size());
  out.write(header.data(), std::streamsize(header.size()));
  auto write_tensors = [&out](const std::vector<Tensor>& ts) {
    for (const auto& t : ts)
      out.write(reinterpret_cast<const char*>(t.data.data()),
                std::streamsize(t.data.size() * sizeof(float)));
  };
  write_tensors(c.param_values);
  write_tensors(c.adam_m);
  write_tensors(c.adam_v);
  if (!out) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, detail::kCheckpointMagic, sizeof magic) != 0)
    throw std::runtime_error("load_checkpoint: " + path + " is not a checkpoint file");
  const uint64_t header_size = detail::read_u64(in);
  std::string header(header_size, '\0');
  in.read(header.data(), std::streamsize(header_size));
  if (!in) throw std::runtime_error("load_checkpoint: truncated header in " + path);
  const nlohmann::json j = nlohmann::json::parse(header);

  Checkpoint c;
  c.model_config = j.at("model").get<QSNetConfig>();
  c.train_config = j.at("train").get<TrainConfig>();
  c.step = j.at("step").get<int64_t>();
  c.best_val_psnr = j.at("best_val_psnr").get<double>();
  c.adam_t = j.at("adam_t").get<int64_t>();
  c.lr = j.at("lr").get<double>();
  c.plateau_best_val_loss = j.at("plateau_best_val_loss").get<double>();
  c.plateau_bad_evals = j.at("plateau_bad_evals").get<int64_t>();
  const auto st = j.at("data_rng_state").get<std::vector<uint64_t>>();
  if (st.size() != 4) throw std::runtime_error("load_checkpoint: bad generator state");
  std::copy(st.begin(), st.end(), c.data_rng_state.begin());

  for (const auto& pj : j.at("params")) {
    c.param_names.push_back(pj.at("name").get<std::string>());
    c.param_values.emplace_back(pj.at("shape").get<std::vector<int64_t>>());
  }
  auto read_tensors = [&in, &path](std::vector<Tensor>& ts) {
    for (auto& t : ts) {
      in.read(reinterpret_cast<char*>(t.data.data()),
              std::streamsize(t.data.size() * sizeof(float)));
      if (!in) throw std::runtime_error("load_checkpoint: truncated payload in " + path);
    }
  };
  read_tensors(c.param_values);
  c.adam_m = c.param_values;  // same shapes; contents overwritten next
  c.adam_v = c.param_values;
  read_tensors(c.adam_m);
  read_tensors(c.adam_v);
  return c;
}

// Snapshot the live training state. The generator state is whatever the data
// stream will use for the *next* step, so a resumed run continues the same
// sequence of batches.
inline Checkpoint make_checkpoint(const QSNet& model, const Adam& opt, const TrainConfig& tc,
                                  int64_t step, double best_val_psnr,
                                  const std::array<uint64_t, 4>& data_rng_state,
                                  double plateau_best_val_loss, int64_t plateau_bad_evals) {
  Checkpoint c;
  c.model_config = model.config();
  c.train_config = tc;
  c.step = step;
  c.best_val_psnr = best_val_psnr;
  c.adam_t = opt.steps_taken();
  c.lr = opt.lr();
  c.plateau_best_val_loss = plateau_best_val_loss;
  c.plateau_bad_evals = plateau_bad_evals;
  c.data_rng_state = data_rng_state;
  for (const auto& p : model.params()) {
    c.param_names.push_back(p.name);
    c.param_values.push_back(p.var->val);
  }
  c.adam_m = opt.moment1();
  c.adam_v = opt.moment2();
  return c;
}

// Rebuilds the model a checkpoint describes. Parameter identity is checked
// by name and shape so config drift is caught loudly.
inline QSNet restore_model(const Checkpoint& c) {
  Rng init_rng(0);  // initialization is overwritten below
  QSNet model(c.model_config, init_rng);
  const auto params = model.params();
  if (params.size() != c.param_values.size())
    throw std::runtime_error("restore_model: checkpoint has wrong parameter count");
  for (size_t i = 0; i < params.size(); ++i) {
    if (params[i].name != c.param_names[i])
      throw std::runtime_error("restore_model: parameter order mismatch at " + params[i].name);
    check_same_shape(params[i].var->val, c.param_values[i], "restore_model");
    params[i].var->val = c.param_values[i];
  }
  return model;
}

inline Adam restore_optimizer(const Checkpoint& c, const QSNet& model, double clip_norm) {
  AdamConfig ac;
  ac.lr = c.lr;
  ac.clip_norm = clip_norm;
  Adam opt(model.params(), ac);
  opt.restore(c.adam_m, c.adam_v, c.adam_t, c.lr);
  return opt;
}

}  // namespace qsnet
