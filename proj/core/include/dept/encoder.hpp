#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "dept/autodiff.hpp"
#include "dept/cps_graph.hpp"
#include "dept/optim.hpp"
#include "dept/prior.hpp"
#include "dept/rng.hpp"

namespace dept {

struct EncoderConfig {
  int layers = 2;
  int heads = 4;
  int d_model = 64;
  int policy_dim = 8;    // width of the action embedding
  int action_count = 4;  // phases per intersection
  int feature_dim = 24;  // observed features per token
  int t_max = 10;        // tokenized history depth
  double temperature = 0.0;  // 0 selects sqrt(d_k)
  bool use_priors = true;      // false: traditional transformer encoder arm
  bool use_cone_decay = true;  // false: drop the cone term, keep sigma + LUT

  int d_k() const { return d_model / heads; }
  double temp() const { return temperature > 0.0 ? temperature : std::sqrt(double(d_k())); }
  void validate() const;
};

/// Pre-projection token data, one row per (node, lag) in lag-major order.
/// Invalid tokens (before episode start) carry zeroed features and are masked
/// as keys for every query.
struct TokenInput {
  Tensor features;               // n_tokens x feature_dim
  std::vector<int64_t> actions;  // per token, 0-based phase index
  std::vector<uint8_t> valid;    // per token

  int64_t n_tokens() const { return features.rows(); }
};

/// Attention score decomposition of one (block, head) at a given input.
struct AttentionDump {
  int block = 0;
  int head = 0;
  Tensor cone;      // gamma(eps) per pair (zeros when disabled)
  Tensor time_lut;  // sigma + attention LUT (zeros when priors disabled)
  Tensor residual;  // query-key logits
  Tensor total;     // elementwise sum of the three components
  std::vector<uint8_t> mask;  // pairs excluded from the softmax
};

/// The delayed-propagation transformer: token projection, L encoder blocks
/// whose pre-softmax attention adds the physical prior to the query-key
/// logits under the causal mask, current-time readout and a shared Q-head.
class DeptModel {
 public:
  DeptModel(EncoderConfig cfg, CpsGraph graph, double mean_speed, uint64_t seed);

  DeptModel(const DeptModel&) = delete;
  DeptModel& operator=(const DeptModel&) = delete;
  DeptModel(DeptModel&&) = default;
  DeptModel& operator=(DeptModel&&) = default;

  /// Fits the prior components to their analytic targets.
  PrefitReport run_prefit(const PrefitConfig& cfg, uint64_t seed);

  /// Projects [features || policy embedding] into model space.
  VarPtr assemble_tokens(const TokenInput& in) const;

  /// Token representation after the first `blocks` encoder blocks
  /// (0 = the assembled tokens).
  VarPtr encode_tokens(const TokenInput& in, int blocks) const;

  /// Full forward pass to per-node Q-values (node_count x action_count).
  VarPtr forward_q(const TokenInput& in) const;

  /// No-grad forward; checks the output is finite.
  Tensor q_values(const TokenInput& in) const;

  /// Greedy per-node action from Q-values.
  std::vector<int> greedy_actions(const TokenInput& in) const;

  AttentionDump dump_attention(const TokenInput& in, int block, int head) const;

  /// Fresh model with identical structure and copied parameter values.
  std::unique_ptr<DeptModel> clone() const;

  const EncoderConfig& config() const { return cfg_; }
  const CpsGraph& graph() const { return graph_; }
  const TokenGeometry& geometry() const { return geometry_; }
  double mean_speed() const { return mean_speed_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }
  PriorSet& priors() { return priors_; }
  const PriorSet& priors() const { return priors_; }

  /// Combined causal + validity mask for one input (self always visible).
  std::vector<uint8_t> build_mask(const std::vector<uint8_t>& valid) const;

 private:
  struct BlockParams {
    std::vector<Parameter*> wq, wk, wv;  // per head, d_k x d_model
    Parameter* wo = nullptr;
    Parameter* bo = nullptr;
    Parameter* ln1_gain = nullptr;
    Parameter* ln1_bias = nullptr;
    Parameter* ffn_w1 = nullptr;
    Parameter* ffn_b1 = nullptr;
    Parameter* ffn_w2 = nullptr;
    Parameter* ffn_b2 = nullptr;
    Parameter* ln2_gain = nullptr;
    Parameter* ln2_bias = nullptr;
  };

  VarPtr encoder_block(int block, const VarPtr& x, const std::vector<uint8_t>& mask) const;

  EncoderConfig cfg_;
  CpsGraph graph_;
  TokenGeometry geometry_;
  double mean_speed_;
  ParamStore store_;
  Parameter* w_in_ = nullptr;
  Parameter* b_in_ = nullptr;
  Parameter* policy_embed_ = nullptr;  // action_count x policy_dim
  Parameter* w_q_ = nullptr;
  Parameter* b_q_ = nullptr;
  std::vector<BlockParams> blocks_;
  PriorSet priors_;
};

}  // namespace dept
