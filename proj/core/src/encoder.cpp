#include "dept/encoder.hpp"

#include <cmath>
#include <stdexcept>

namespace dept {

void EncoderConfig::validate() const {
  if (layers <= 0 || heads <= 0 || d_model <= 0 || policy_dim <= 0 || action_count <= 0 ||
      feature_dim <= 0 || t_max <= 0)
    throw std::invalid_argument("EncoderConfig: all sizes must be positive");
  if (d_model % heads != 0)
    throw std::invalid_argument("EncoderConfig: d_model must be divisible by heads");
  if (temperature < 0.0) throw std::invalid_argument("EncoderConfig: negative temperature");
  if (!use_priors && use_cone_decay)
    throw std::invalid_argument("EncoderConfig: cone decay requires priors");
}

DeptModel::DeptModel(EncoderConfig cfg, CpsGraph graph, double mean_speed, uint64_t seed)
    : cfg_(cfg), graph_(std::move(graph)), mean_speed_(mean_speed) {
  cfg_.validate();
  if (mean_speed_ <= 0.0) throw std::invalid_argument("DeptModel: mean_speed must be positive");
  geometry_ = TokenGeometry::build(graph_, cfg_.t_max);

  Rng rng(derive_seed(seed, "model-init"));
  const int d = cfg_.d_model;
  const int dk = cfg_.d_k();
  const int dff = 4 * d;

  w_in_ = store_.add("enc.in.w", rng.xavier_tensor(d, cfg_.feature_dim + cfg_.policy_dim));
  b_in_ = store_.add("enc.in.b", Tensor({1, d}));
  policy_embed_ =
      store_.add("enc.policy_embed", rng.normal_tensor({cfg_.action_count, cfg_.policy_dim},
                                                       0.0, 0.5));
  for (int l = 0; l < cfg_.layers; ++l) {
    const std::string bp = "enc.b" + std::to_string(l);
    BlockParams blk;
    for (int k = 0; k < cfg_.heads; ++k) {
      const std::string hp = bp + ".h" + std::to_string(k);
      blk.wq.push_back(store_.add(hp + ".wq", rng.xavier_tensor(dk, d)));
      blk.wk.push_back(store_.add(hp + ".wk", rng.xavier_tensor(dk, d)));
      blk.wv.push_back(store_.add(hp + ".wv", rng.xavier_tensor(dk, d)));
    }
    blk.wo = store_.add(bp + ".wo", rng.xavier_tensor(d, d));
    blk.bo = store_.add(bp + ".bo", Tensor({1, d}));
    blk.ln1_gain = store_.add(bp + ".ln1.g", Tensor::full({1, d}, 1.0));
    blk.ln1_bias = store_.add(bp + ".ln1.b", Tensor({1, d}));
    blk.ffn_w1 = store_.add(bp + ".ffn.w1", rng.xavier_tensor(dff, d));
    blk.ffn_b1 = store_.add(bp + ".ffn.b1", Tensor({1, dff}));
    blk.ffn_w2 = store_.add(bp + ".ffn.w2", rng.xavier_tensor(d, dff));
    blk.ffn_b2 = store_.add(bp + ".ffn.b2", Tensor({1, d}));
    blk.ln2_gain = store_.add(bp + ".ln2.g", Tensor::full({1, d}, 1.0));
    blk.ln2_bias = store_.add(bp + ".ln2.b", Tensor({1, d}));
    blocks_.push_back(std::move(blk));
  }
  // Zero-initialized Q-head: a fresh model scores all phases equally.
  w_q_ = store_.add("enc.qhead.w", Tensor({cfg_.action_count, d}));
  b_q_ = store_.add("enc.qhead.b", Tensor({1, cfg_.action_count}));

  priors_ = init_priors(store_, cfg_.layers, cfg_.heads, graph_.node_count(), d, rng);
}

PrefitReport DeptModel::run_prefit(const PrefitConfig& cfg, uint64_t seed) {
  if (cfg.mean_speed != mean_speed_)
    throw std::invalid_argument("run_prefit: config mean_speed disagrees with model");
  Rng rng(derive_seed(seed, "prefit"));
  return prefit_priors(priors_, cfg, rng);
}

VarPtr DeptModel::assemble_tokens(const TokenInput& in) const {
  const int64_t n = geometry_.n_tokens;
  if (in.features.rows() != n || in.features.cols() != cfg_.feature_dim)
    throw std::invalid_argument("assemble_tokens: feature matrix shape mismatch, expected " +
                                Tensor::shape_str({n, cfg_.feature_dim}));
  if (static_cast<int64_t>(in.actions.size()) != n ||
      static_cast<int64_t>(in.valid.size()) != n)
    throw std::invalid_argument("assemble_tokens: action/valid length mismatch");
  for (int64_t a : in.actions)
    if (a < 0 || a >= cfg_.action_count)
      throw std::out_of_range("assemble_tokens: action index " + std::to_string(a) +
                              " out of range");

  VarPtr embeds = gather_rows(leaf(*policy_embed_), in.actions);  // n x E
  VarPtr raw = concat_cols({constant(in.features), embeds});

  // Zero the whole embedding of invalid tokens before projecting.
  Tensor vmask({n, static_cast<int64_t>(cfg_.feature_dim + cfg_.policy_dim)});
  for (int64_t t = 0; t < n; ++t)
    if (in.valid[static_cast<size_t>(t)])
      for (int64_t c = 0; c < vmask.cols(); ++c) vmask[t * vmask.cols() + c] = 1.0;
  raw = mul(raw, constant(std::move(vmask)));

  return add(matmul(raw, leaf(*w_in_), false, true), leaf(*b_in_));
}

std::vector<uint8_t> DeptModel::build_mask(const std::vector<uint8_t>& valid) const {
  const int64_t n = geometry_.n_tokens;
  if (static_cast<int64_t>(valid.size()) != n)
    throw std::invalid_argument("build_mask: valid flag count mismatch");
  std::vector<uint8_t> mask = geometry_.future_mask;
  for (int64_t q = 0; q < n; ++q)
    for (int64_t k = 0; k < n; ++k) {
      if (!valid[static_cast<size_t>(k)] && k != q) mask[static_cast<size_t>(q * n + k)] = 1;
    }
  // Self stays visible so even padding queries have a defined softmax row.
  for (int64_t q = 0; q < n; ++q) mask[static_cast<size_t>(q * n + q)] = 0;
  return mask;
}

VarPtr DeptModel::encoder_block(int block, const VarPtr& x, const std::vector<uint8_t>& mask) const {
  const BlockParams& blk = blocks_[static_cast<size_t>(block)];
  const double inv_temp = 1.0 / cfg_.temp();

  std::vector<VarPtr> head_outputs;
  for (int k = 0; k < cfg_.heads; ++k) {
    VarPtr q = matmul(x, leaf(*blk.wq[static_cast<size_t>(k)]), false, true);
    VarPtr key = matmul(x, leaf(*blk.wk[static_cast<size_t>(k)]), false, true);
    VarPtr scores = matmul(q, key, false, true);
    if (cfg_.use_priors) {
      PriorMatrices pm = prior_matrices(priors_.at(block, k), x, geometry_, mean_speed_,
                                        cfg_.use_cone_decay);
      scores = add(scores, pm.total);
    }
    VarPtr attn = row_softmax(scalar_mul(inv_temp, scores), &mask);
    VarPtr values = matmul(x, leaf(*blk.wv[static_cast<size_t>(k)]), false, true);
    head_outputs.push_back(matmul(attn, values));
  }

  VarPtr merged = concat_cols(head_outputs);
  VarPtr projected = add(matmul(merged, leaf(*blk.wo), false, true), leaf(*blk.bo));
  VarPtr after_attn = layer_norm(add(x, projected), leaf(*blk.ln1_gain), leaf(*blk.ln1_bias));

  VarPtr h = gelu(add(matmul(after_attn, leaf(*blk.ffn_w1), false, true), leaf(*blk.ffn_b1)));
  VarPtr f = add(matmul(h, leaf(*blk.ffn_w2), false, true), leaf(*blk.ffn_b2));
  return layer_norm(add(after_attn, f), leaf(*blk.ln2_gain), leaf(*blk.ln2_bias));
}

VarPtr DeptModel::encode_tokens(const TokenInput& in, int blocks) const {
  if (blocks < 0 || blocks > cfg_.layers)
    throw std::out_of_range("encode_tokens: block count out of range");
  const std::vector<uint8_t> mask = build_mask(in.valid);
  VarPtr x = assemble_tokens(in);
  for (int l = 0; l < blocks; ++l) x = encoder_block(l, x, mask);
  return x;
}

VarPtr DeptModel::forward_q(const TokenInput& in) const {
  const std::vector<uint8_t> mask = build_mask(in.valid);
  VarPtr x = assemble_tokens(in);
  for (int l = 0; l < cfg_.layers; ++l) x = encoder_block(l, x, mask);

  // Read out the current-time tokens (lag 0 occupies the first V rows).
  std::vector<int64_t> readout(static_cast<size_t>(graph_.node_count()));
  for (int i = 0; i < graph_.node_count(); ++i) readout[static_cast<size_t>(i)] = i;
  VarPtr current = gather_rows(x, std::move(readout));
  VarPtr q = add(matmul(current, leaf(*w_q_), false, true), leaf(*b_q_));
  if (!q->value.all_finite()) throw std::runtime_error("forward_q: non-finite Q output");
  return q;
}

Tensor DeptModel::q_values(const TokenInput& in) const {
  NoGradGuard ng;
  return forward_q(in)->value;
}

std::vector<int> DeptModel::greedy_actions(const TokenInput& in) const {
  const Tensor q = q_values(in);
  std::vector<int> actions(static_cast<size_t>(q.rows()));
  for (int64_t r = 0; r < q.rows(); ++r) {
    int best = 0;
    for (int64_t c = 1; c < q.cols(); ++c)
      if (q.at(r, c) > q.at(r, best)) best = static_cast<int>(c);
    actions[static_cast<size_t>(r)] = best;
  }
  return actions;
}

AttentionDump DeptModel::dump_attention(const TokenInput& in, int block, int head) const {
  if (block < 0 || block >= cfg_.layers || head < 0 || head >= cfg_.heads)
    throw std::out_of_range("dump_attention: block/head out of range");
  NoGradGuard ng;
  const int64_t n = geometry_.n_tokens;
  VarPtr x = encode_tokens(in, block);

  AttentionDump dump;
  dump.block = block;
  dump.head = head;
  dump.mask = build_mask(in.valid);

  const BlockParams& blk = blocks_[static_cast<size_t>(block)];
  VarPtr q = matmul(x, leaf(*blk.wq[static_cast<size_t>(head)]), false, true);
  VarPtr key = matmul(x, leaf(*blk.wk[static_cast<size_t>(head)]), false, true);
  dump.residual = matmul(q, key, false, true)->value;

  if (cfg_.use_priors) {
    PriorMatrices pm = prior_matrices(priors_.at(block, head), x, geometry_, mean_speed_,
                                      cfg_.use_cone_decay);
    dump.cone = pm.cone ? pm.cone->value : Tensor({n, n});
    dump.time_lut = pm.time_lut->value;
  } else {
    dump.cone = Tensor({n, n});
    dump.time_lut = Tensor({n, n});
  }

  dump.total = Tensor({n, n});
  for (int64_t i = 0; i < n * n; ++i)
    dump.total[i] = dump.cone[i] + dump.time_lut[i] + dump.residual[i];
  return dump;
}

std::unique_ptr<DeptModel> DeptModel::clone() const {
  auto copy = std::make_unique<DeptModel>(cfg_, graph_, mean_speed_, /*seed=*/0);
  copy->store_.copy_values_from(store_);
  return copy;
}

}  // namespace dept
