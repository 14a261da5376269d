#include "star/model.hpp"

#include <stdexcept>

namespace star {

void ModelConfig::validate() const {
  if (num_vars == 0) throw std::invalid_argument("model: F must be positive");
  if (dim < 2) throw std::invalid_argument("model: D must be at least 2");
  if (heads == 0 || dim % heads != 0) {
    throw std::invalid_argument("model: D=" + std::to_string(dim) +
                                " is not divisible by H=" + std::to_string(heads));
  }
  if (layers == 0) throw std::invalid_argument("model: need at least one encoder layer");
  if (ff_dim == 0) throw std::invalid_argument("model: D_ff must be positive");
  if (!(bias_epsilon > 0.0)) throw std::invalid_argument("model: bias epsilon must be positive");
  if (!(time_unit > 0.0)) throw std::invalid_argument("model: time unit must be positive");
  if (!(ages.std > 0.0)) throw std::invalid_argument("model: age std must be positive");
}

nlohmann::ordered_json model_config_to_json(const ModelConfig& c) {
  nlohmann::ordered_json j;
  j["F"] = c.num_vars;
  j["D"] = c.dim;
  j["H"] = c.heads;
  j["L_enc"] = c.layers;
  j["D_ff"] = c.ff_dim;
  j["omega_init"] = c.omega_init;
  j["bias_epsilon"] = c.bias_epsilon;
  j["time_unit_hours"] = c.time_unit;
  j["age_mean"] = c.ages.mean;
  j["age_std"] = c.ages.std;
  return j;
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.num_vars = j.at("F").get<std::size_t>();
  c.dim = j.at("D").get<std::size_t>();
  c.heads = j.at("H").get<std::size_t>();
  c.layers = j.at("L_enc").get<std::size_t>();
  c.ff_dim = j.at("D_ff").get<std::size_t>();
  c.omega_init = j.at("omega_init").get<double>();
  c.bias_epsilon = j.at("bias_epsilon").get<double>();
  c.time_unit = j.at("time_unit_hours").get<double>();
  c.ages.mean = j.at("age_mean").get<double>();
  c.ages.std = j.at("age_std").get<double>();
  c.validate();
  return c;
}

StarModel StarModel::init(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  StarModel m;
  m.config = config;
  Rng embed_rng(derive_seed(seed, "init/embedder"));
  Rng encoder_rng(derive_seed(seed, "init/encoder"));
  m.embedder = init_embedder(config.dim, config.num_vars, embed_rng);
  m.encoder = init_encoder(config.dim, config.layers, config.ff_dim, encoder_rng);
  m.bias = init_bias(config.layers, config.heads, config.num_vars, config.omega_init,
                     config.bias_epsilon);
  return m;
}

namespace {

// Visits every parameter slot in checkpoint order.
template <typename Model, typename Fn>
void for_each_param(Model& m, Fn&& fn) {
  auto& e = m.embedder;
  fn("embedder.cls", "embedder", e.cls);
  fn("embedder.demo_w", "embedder", e.demo_w);
  fn("embedder.demo_b", "embedder", e.demo_b);
  fn("embedder.var_table", "embedder", e.var_table);
  fn("embedder.time_w1", "embedder", e.time_w1);
  fn("embedder.time_b1", "embedder", e.time_b1);
  fn("embedder.val_w1", "embedder", e.val_w1);
  fn("embedder.val_b1", "embedder", e.val_b1);
  for (std::size_t l = 0; l < m.encoder.layers.size(); ++l) {
    auto& p = m.encoder.layers[l];
    const std::string prefix = "encoder.layer" + std::to_string(l) + ".";
    fn(prefix + "wq", "attention", p.attn.wq);
    fn(prefix + "wk", "attention", p.attn.wk);
    fn(prefix + "wv", "attention", p.attn.wv);
    fn(prefix + "wo", "attention", p.attn.wo);
    fn(prefix + "ln1_gamma", "layer_norm", p.ln1_gamma);
    fn(prefix + "ln1_beta", "layer_norm", p.ln1_beta);
    fn(prefix + "ln2_gamma", "layer_norm", p.ln2_gamma);
    fn(prefix + "ln2_beta", "layer_norm", p.ln2_beta);
    fn(prefix + "ff_w1", "ffn", p.ff_w1);
    fn(prefix + "ff_b1", "ffn", p.ff_b1);
    fn(prefix + "ff_w2", "ffn", p.ff_w2);
    fn(prefix + "ff_b2", "ffn", p.ff_b2);
  }
  fn("encoder.final_gamma", "layer_norm", m.encoder.final_gamma);
  fn("encoder.final_beta", "layer_norm", m.encoder.final_beta);
  fn("head.w", "head", m.encoder.head.w);
  fn("head.c", "head", m.encoder.head.c);
  fn("bias.omega", "bias", m.bias.omega);
  fn("bias.affinity", "bias", m.bias.affinity);
}

}  // namespace

std::vector<NamedParam> StarModel::parameters() const {
  std::vector<NamedParam> out;
  for_each_param(*this, [&](std::string name, std::string group, const Tensor& t) {
    out.push_back({std::move(name), std::move(group), t});
  });
  return out;
}

StarModel StarModel::clone() const {
  StarModel copy = *this;
  for_each_param(copy, [](const std::string&, const std::string&, Tensor& t) {
    const bool rg = t.requires_grad();
    t = t.detach();
    t.set_requires_grad(rg);
  });
  return copy;
}

Tensor StarModel::forward(const Batch& batch, const BiasSchedule& schedule,
                          AttentionProbe* probe) const {
  auto h0 = embed_triplets(batch, embedder, config.ages, config.time_unit);
  auto h = encoder_forward(h0, schedule, encoder, bias, batch, probe);
  return predict(h, encoder.head);
}

Tensor StarModel::loss(const Batch& batch, const BiasSchedule& schedule) const {
  return bce_loss(forward(batch, schedule), batch.labels);
}

}  // namespace star
