#include "cvrt/model.hpp"

#include <algorithm>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "cvrt/numeric.hpp"
#include "cvrt/rng.hpp"
#include "cvrt/tokenizer.hpp"

namespace cvrt {

using nlohmann::json;

std::vector<int> default_caps(int num_blocks) {
  const std::vector<int> pattern = {3, 5, 48, 48, 48, 48};
  std::vector<int> caps;
  for (int i = 0; i < num_blocks; ++i)
    caps.push_back(i < static_cast<int>(pattern.size()) ? pattern[i] : 48);
  return caps;
}

void ModelConfig::validate() const {
  if (vocab_size < 0 || oov_buckets < 1) throw std::invalid_argument("bad vocab sizes");
  if (embed_dim < 1 || qk_dim < 1 || ff1_dim < 1 || out_dim < 1)
    throw std::invalid_argument("bad dimensions");
  if (num_blocks < 1 || ff2_layers < 0) throw std::invalid_argument("bad depth");
  if (max_seq_len < 1) throw std::invalid_argument("bad max_seq_len");
  if (reduction_heads < 1 || attention_heads < 1)
    throw std::invalid_argument("bad head counts");
  if (static_cast<int>(relative_caps.size()) != num_blocks)
    throw std::invalid_argument("relative_caps must have one entry per block");
  for (int c : relative_caps)
    if (c < 0) throw std::invalid_argument("negative attention cap");
}

std::string ModelConfig::to_json() const {
  json j;
  j["vocab_size"] = vocab_size;
  j["oov_buckets"] = oov_buckets;
  j["embed_dim"] = embed_dim;
  j["num_blocks"] = num_blocks;
  j["qk_dim"] = qk_dim;
  j["ff1_dim"] = ff1_dim;
  j["ff2_layers"] = ff2_layers;
  j["out_dim"] = out_dim;
  j["max_seq_len"] = max_seq_len;
  j["reduction_heads"] = reduction_heads;
  j["attention_heads"] = attention_heads;
  j["use_relative_bias"] = use_relative_bias;
  j["relative_caps"] = relative_caps;
  j["ff2_skip"] = ff2_skip;
  j["multi_context"] = multi_context;
  j["trained_steps"] = trained_steps;
  return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  const json j = json::parse(text);
  ModelConfig c;
  c.vocab_size = j.at("vocab_size").get<int>();
  c.oov_buckets = j.at("oov_buckets").get<int>();
  c.embed_dim = j.at("embed_dim").get<int>();
  c.num_blocks = j.at("num_blocks").get<int>();
  c.qk_dim = j.at("qk_dim").get<int>();
  c.ff1_dim = j.at("ff1_dim").get<int>();
  c.ff2_layers = j.at("ff2_layers").get<int>();
  c.out_dim = j.at("out_dim").get<int>();
  c.max_seq_len = j.at("max_seq_len").get<int>();
  c.reduction_heads = j.at("reduction_heads").get<int>();
  c.attention_heads = j.at("attention_heads").get<int>();
  c.use_relative_bias = j.at("use_relative_bias").get<bool>();
  c.relative_caps = j.at("relative_caps").get<std::vector<int>>();
  c.ff2_skip = j.at("ff2_skip").get<bool>();
  c.multi_context = j.at("multi_context").get<bool>();
  c.trained_steps = j.value("trained_steps", int64_t{0});
  c.validate();
  return c;
}

namespace {

uint64_t tensor_seed(uint64_t model_seed, const std::string& name) {
  return model_seed * 0x9e3779b97f4a7c15ull ^ fnv1a64(name);
}

Tensor gaussian_init(int rows, int cols, uint64_t seed, double sigma) {
  Rng rng(seed);
  Tensor t(rows, cols);
  for (double& v : t.v) v = rng.gaussian() * sigma;
  return t;
}

}  // namespace

Model init_model(const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  Model m;
  m.cfg = cfg;
  auto orth = [&](const std::string& name, int rows, int cols) -> Param& {
    return m.params.add(name, orthogonal_init(rows, cols, tensor_seed(seed, name)),
                        Precision::param16);
  };
  auto zeros = [&](const std::string& name, int rows, int cols) -> Param& {
    return m.params.add(name, Tensor(rows, cols), Precision::param16);
  };
  auto ones = [&](const std::string& name, int cols) -> Param& {
    Tensor t(1, cols);
    t.fill(1.0);
    return m.params.add(name, std::move(t), Precision::param16);
  };

  Param& embed = m.params.add(
      "embed", gaussian_init(cfg.table_rows(), cfg.embed_dim, tensor_seed(seed, "embed"), 0.1),
      Precision::embed8);
  double lo = embed.shadow.v[0], hi = embed.shadow.v[0];
  for (double v : embed.shadow.v) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  embed.range = range_for(lo, hi);

  m.params.add("pos_m1",
               gaussian_init(kPosRows1, cfg.embed_dim, tensor_seed(seed, "pos_m1"), 0.1),
               Precision::param16);
  m.params.add("pos_m2",
               gaussian_init(kPosRows2, cfg.embed_dim, tensor_seed(seed, "pos_m2"), 0.1),
               Precision::param16);

  for (int b = 0; b < cfg.num_blocks; ++b) {
    const std::string pre = "block" + std::to_string(b) + ".";
    for (int h = 0; h < cfg.attention_heads; ++h) {
      orth(pre + "wq" + std::to_string(h), cfg.embed_dim, cfg.qk_dim);
      orth(pre + "wk" + std::to_string(h), cfg.embed_dim, cfg.qk_dim);
    }
    if (cfg.use_relative_bias) zeros(pre + "rel_bias", 1, 2 * cfg.max_seq_len - 1);
    ones(pre + "ln1.gain", cfg.embed_dim);
    zeros(pre + "ln1.bias", 1, cfg.embed_dim);
    orth(pre + "ff1.w1", cfg.embed_dim, cfg.ff1_dim);
    zeros(pre + "ff1.b1", 1, cfg.ff1_dim);
    orth(pre + "ff1.w2", cfg.ff1_dim, cfg.embed_dim);
    zeros(pre + "ff1.b2", 1, cfg.embed_dim);
    ones(pre + "ln2.gain", cfg.embed_dim);
    zeros(pre + "ln2.bias", 1, cfg.embed_dim);
  }

  for (int h = 0; h < cfg.reduction_heads; ++h)
    orth("reduce.w" + std::to_string(h), cfg.embed_dim, 1);

  std::vector<std::string> sides = {"input", "response"};
  if (cfg.multi_context) sides.push_back("extra");
  for (const std::string& side : sides) {
    for (int l = 0; l < cfg.ff2_layers; ++l) {
      const std::string pre = side + ".ff2." + std::to_string(l) + ".";
      orth(pre + "w", cfg.r_dim(), cfg.r_dim());
      zeros(pre + "b", 1, cfg.r_dim());
      ones(pre + "ln.gain", cfg.r_dim());
      zeros(pre + "ln.bias", 1, cfg.r_dim());
    }
    orth(side + ".out.w", cfg.r_dim(), cfg.out_dim);
    zeros(side + ".out.b", 1, cfg.out_dim);
  }
  return m;
}

}  // namespace cvrt
