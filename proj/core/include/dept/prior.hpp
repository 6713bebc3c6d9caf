#pragma once

#include <string>
#include <vector>

#include "dept/autodiff.hpp"
#include "dept/cps_graph.hpp"
#include "dept/optim.hpp"
#include "dept/rng.hpp"

namespace dept {

/// Small fully connected net with GELU hidden activations. Weights live in a
/// ParamStore; the Mlp only holds pointers.
class Mlp {
 public:
  Mlp() = default;
  static Mlp create(ParamStore& store, const std::string& prefix, std::vector<int> dims, Rng& rng);

  /// Differentiable forward on a batch (rows = samples).
  VarPtr forward(const VarPtr& x) const;

  /// Plain scalar evaluation (no graph); input size must match dims.front().
  double eval(const std::vector<double>& input) const;
  double eval1(double x) const { return eval({x}); }

  std::vector<Parameter*> params() const;
  int input_dim() const { return dims_.empty() ? 0 : dims_.front(); }

 private:
  std::vector<int> dims_;
  std::vector<Parameter*> weights_;  // layer k: (dims[k+1] x dims[k])
  std::vector<Parameter*> biases_;   // layer k: (1 x dims[k+1])
};

/// Learnable prior components of one attention head: cone decay, time decay,
/// origin/destination speed nets, and the two per-node-pair lookup tables.
struct PriorHeadParams {
  Mlp gamma;   // 1 -> 16 -> 16 -> 1
  Mlp sigma;   // 1 -> 16 -> 16 -> 1
  Mlp nu_o;    // d_model -> 16 -> 1, evaluated on the key (origin) token
  Mlp nu_d;    // d_model -> 16 -> 1, evaluated on the query (destination) token
  Parameter* attn_lut = nullptr;   // V x V additive attention bias
  Parameter* speed_lut = nullptr;  // V x V speed estimate component
};

struct PrefitConfig {
  double mean_speed = 100.0;     // v-bar, meters per decision step
  double curvature = 0.5;        // k in the -k x^2 target
  double deviation_range = 3.0;  // gamma fit grid spans [-range, range]
  double label_noise = 0.1;      // stddev of the speed labels
  int iteration_budget = 8000;
  double target_mse = 2e-4;      // early-stop threshold for gamma/sigma
  int grid_points = 121;
  int embed_samples = 256;
};

struct PrefitReport {
  struct Fit {
    std::string name;
    double mse = 0.0;
    int iterations = 0;
    bool reached_tolerance = false;
  };
  std::vector<Fit> fits;
  bool all_ok() const {
    for (const Fit& f : fits)
      if (!f.reached_tolerance) return false;
    return true;
  }
};

/// All priors of an L-block, N-head model.
struct PriorSet {
  int blocks = 0;
  int heads = 0;
  int node_count = 0;
  int embed_dim = 0;
  std::vector<std::vector<PriorHeadParams>> per_head;  // [block][head]

  PriorHeadParams& at(int block, int head) {
    return per_head[static_cast<size_t>(block)][static_cast<size_t>(head)];
  }
  const PriorHeadParams& at(int block, int head) const {
    return per_head[static_cast<size_t>(block)][static_cast<size_t>(head)];
  }
};

/// Creates priors with generic random initialization (the no-pre-fit arm).
PriorSet init_priors(ParamStore& store, int blocks, int heads, int node_count, int embed_dim,
                     Rng& rng);

/// Fits gamma/sigma to y = -k x^2 on their sampling grids, re-draws the LUTs
/// around their target means, and regresses the nu nets onto labels sampled
/// from N(mean_speed, label_noise). Budget exhaustion is reported, not fatal.
PrefitReport prefit_priors(PriorSet& priors, const PrefitConfig& cfg, Rng& rng);

/// Convenience: init + prefit in one call.
PriorSet prefit_priors(ParamStore& store, const PrefitConfig& cfg, int node_count, int embed_dim,
                       int blocks, int heads, Rng& rng, PrefitReport* report = nullptr);

// Scalar reference path (the batched encoder path must agree with these).

/// epsilon = (key_lag - query_lag) * speed - distance. The key token is the
/// older (source) end; elapsed time is key_lag - query_lag >= 0 when unmasked.
double causal_deviation(int query_lag, int key_lag, double speed, double distance_m);

/// softplus of the three-way average of nu_o(key), nu_d(query), speed LUT.
double estimate_speed(const PriorHeadParams& p, const std::vector<double>& query_embed,
                      const std::vector<double>& key_embed, int query_node, int key_node,
                      double* raw_average = nullptr);

/// gamma applied to the normalized deviation coordinate.
double cone_decay(const PriorHeadParams& p, double normalized_deviation);

/// sigma applied to delta / t_max; delta = key_lag - query_lag >= 0.
double time_decay(const PriorHeadParams& p, int delta, int t_max);

/// Full additive prior for one unmasked token pair:
/// cone(eps / (mean_speed * t_max)) + time(delta) + attn_lut[i, j].
double prior_score(const PriorHeadParams& p, int query_node, int query_lag,
                   const std::vector<double>& query_embed, int key_node, int key_lag,
                   const std::vector<double>& key_embed, const CpsGraph& graph, double mean_speed,
                   int t_max);

/// Precomputed per-(graph, t_max) constants shared by every block and head.
struct TokenGeometry {
  int node_count = 0;
  int t_max = 0;
  int64_t n_tokens = 0;
  Tensor dist_pairs;                // N x N meters between the pair's nodes
  Tensor delta_pairs;               // N x N key_lag - query_lag (negative = future)
  std::vector<int64_t> lut_index;   // N^2 flat node-pair index i*V + j
  std::vector<int64_t> delta_gather;  // N^2 clamped |delta| index into 0..t_max-1
  std::vector<uint8_t> future_mask;   // N^2, from causal_mask

  static TokenGeometry build(const CpsGraph& graph, int t_max);
};

/// Differentiable prior component matrices over all token pairs for one head.
/// `block_input` is the (N x d_model) input of the current encoder block.
struct PriorMatrices {
  VarPtr cone;      // null when the cone term is disabled
  VarPtr time_lut;  // sigma + attn LUT
  VarPtr total;     // cone + time_lut (or time_lut alone)
};
PriorMatrices prior_matrices(const PriorHeadParams& p, const VarPtr& block_input,
                             const TokenGeometry& geom, double mean_speed, bool include_cone);

}  // namespace dept
