#include "dept/prior.hpp"

#include <cmath>
#include <stdexcept>

namespace dept {

namespace {

double gelu_scalar(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

double softplus_scalar(double x) { return std::log1p(std::exp(-std::abs(x))) + std::max(x, 0.0); }

/// Adam-fits `net` so that net(inputs[i]) ~= labels[i]. Returns achieved MSE.
PrefitReport::Fit fit_regression(Mlp& net, const std::string& name,
                                 const std::vector<std::vector<double>>& inputs,
                                 const std::vector<double>& labels, int budget, double target_mse,
                                 double lr) {
  const int64_t n = static_cast<int64_t>(inputs.size());
  const int in_dim = net.input_dim();
  Tensor x({n, in_dim});
  for (int64_t i = 0; i < n; ++i)
    for (int in = 0; in < in_dim; ++in)
      x[i * in_dim + in] = inputs[static_cast<size_t>(i)][static_cast<size_t>(in)];
  Tensor y({n, 1});
  for (int64_t i = 0; i < n; ++i) y[i] = labels[static_cast<size_t>(i)];

  auto params = net.params();
  for (Parameter* p : params) p->zero_grad();
  AdamOptimizer opt(params, {.learning_rate = lr});
  const VarPtr xc = constant(x);

  PrefitReport::Fit fit;
  fit.name = name;
  double mse = 0.0;
  int it = 0;
  for (; it < budget; ++it) {
    VarPtr loss = mse_loss(net.forward(xc), y);
    mse = loss->value.item();
    if (mse <= target_mse) break;
    backward(loss);
    opt.step();
  }
  {
    NoGradGuard ng;
    mse = mse_loss(net.forward(xc), y)->value.item();
  }
  fit.mse = mse;
  fit.iterations = it;
  fit.reached_tolerance = mse <= target_mse;
  return fit;
}

}  // namespace

Mlp Mlp::create(ParamStore& store, const std::string& prefix, std::vector<int> dims, Rng& rng) {
  if (dims.size() < 2) throw std::invalid_argument("Mlp: need at least input and output dims");
  Mlp m;
  m.dims_ = dims;
  for (size_t k = 0; k + 1 < dims.size(); ++k) {
    m.weights_.push_back(store.add(prefix + ".w" + std::to_string(k),
                                   rng.xavier_tensor(dims[k + 1], dims[k])));
    m.biases_.push_back(store.add(prefix + ".b" + std::to_string(k), Tensor({1, dims[k + 1]})));
  }
  return m;
}

VarPtr Mlp::forward(const VarPtr& x) const {
  VarPtr h = x;
  for (size_t k = 0; k < weights_.size(); ++k) {
    h = add(matmul(h, leaf(*weights_[k]), false, true), leaf(*biases_[k]));
    if (k + 1 < weights_.size()) h = gelu(h);
  }
  return h;
}

double Mlp::eval(const std::vector<double>& input) const {
  if (static_cast<int>(input.size()) != dims_.front())
    throw std::invalid_argument("Mlp::eval: input size mismatch");
  std::vector<double> h = input;
  for (size_t k = 0; k < weights_.size(); ++k) {
    const Tensor& w = weights_[k]->value;
    const Tensor& b = biases_[k]->value;
    std::vector<double> next(static_cast<size_t>(w.rows()));
    for (int64_t r = 0; r < w.rows(); ++r) {
      double s = b[r];
      for (int64_t c = 0; c < w.cols(); ++c) s += w[r * w.cols() + c] * h[static_cast<size_t>(c)];
      next[static_cast<size_t>(r)] = s;
    }
    if (k + 1 < weights_.size())
      for (double& v : next) v = gelu_scalar(v);
    h = std::move(next);
  }
  if (h.size() != 1) throw std::runtime_error("Mlp::eval: output is not scalar");
  return h[0];
}

std::vector<Parameter*> Mlp::params() const {
  std::vector<Parameter*> out;
  for (size_t k = 0; k < weights_.size(); ++k) {
    out.push_back(weights_[k]);
    out.push_back(biases_[k]);
  }
  return out;
}

PriorSet init_priors(ParamStore& store, int blocks, int heads, int node_count, int embed_dim,
                     Rng& rng) {
  if (blocks <= 0 || heads <= 0 || node_count <= 0 || embed_dim <= 0)
    throw std::invalid_argument("init_priors: sizes must be positive");
  PriorSet set;
  set.blocks = blocks;
  set.heads = heads;
  set.node_count = node_count;
  set.embed_dim = embed_dim;
  set.per_head.resize(static_cast<size_t>(blocks));
  for (int l = 0; l < blocks; ++l) {
    for (int k = 0; k < heads; ++k) {
      const std::string prefix =
          "prior.b" + std::to_string(l) + ".h" + std::to_string(k);
      PriorHeadParams p;
      p.gamma = Mlp::create(store, prefix + ".gamma", {1, 16, 16, 1}, rng);
      p.sigma = Mlp::create(store, prefix + ".sigma", {1, 16, 16, 1}, rng);
      p.nu_o = Mlp::create(store, prefix + ".nu_o", {embed_dim, 16, 1}, rng);
      p.nu_d = Mlp::create(store, prefix + ".nu_d", {embed_dim, 16, 1}, rng);
      p.attn_lut = store.add(prefix + ".attn_lut",
                             rng.normal_tensor({node_count, node_count}, 0.0, 0.01));
      p.speed_lut = store.add(prefix + ".speed_lut",
                              rng.normal_tensor({node_count, node_count}, 0.0, 0.01));
      set.per_head[static_cast<size_t>(l)].push_back(std::move(p));
    }
  }
  return set;
}

PrefitReport prefit_priors(PriorSet& priors, const PrefitConfig& cfg, Rng& rng) {
  if (cfg.mean_speed <= 0.0) throw std::invalid_argument("prefit_priors: mean_speed must be > 0");
  if (cfg.curvature <= 0.0) throw std::invalid_argument("prefit_priors: curvature must be > 0");

  PrefitReport report;
  const double k = cfg.curvature;

  // -k x^2 grids: gamma over the symmetric deviation range, sigma over the
  // normalized lag range [0, 1].
  std::vector<std::vector<double>> gamma_grid, sigma_grid;
  std::vector<double> gamma_y, sigma_y;
  for (int i = 0; i < cfg.grid_points; ++i) {
    const double t = static_cast<double>(i) / (cfg.grid_points - 1);
    const double gx = -cfg.deviation_range + 2.0 * cfg.deviation_range * t;
    gamma_grid.push_back({gx});
    gamma_y.push_back(-k * gx * gx);
    sigma_grid.push_back({t});
    sigma_y.push_back(-k * t * t);
  }

  for (int l = 0; l < priors.blocks; ++l) {
    for (int h = 0; h < priors.heads; ++h) {
      PriorHeadParams& p = priors.at(l, h);
      const std::string tag = "b" + std::to_string(l) + ".h" + std::to_string(h);

      report.fits.push_back(fit_regression(p.gamma, tag + ".gamma", gamma_grid, gamma_y,
                                           cfg.iteration_budget, cfg.target_mse, 0.01));
      report.fits.push_back(fit_regression(p.sigma, tag + ".sigma", sigma_grid, sigma_y,
                                           cfg.iteration_budget, cfg.target_mse, 0.01));

      // LUT draws: attention bias around 0, speed component around v-bar.
      p.attn_lut->value = rng.normal_tensor(p.attn_lut->value.shape(), 0.0, 0.01);
      p.speed_lut->value =
          rng.normal_tensor(p.speed_lut->value.shape(), cfg.mean_speed, 0.05 * cfg.mean_speed);

      // nu nets regress onto N(v-bar, noise) labels over random embeddings.
      // Initializing the output bias at the label mean makes this a short fit.
      for (Mlp* net : {&p.nu_o, &p.nu_d}) {
        std::vector<Parameter*> ps = net->params();
        ps.back()->value.fill(cfg.mean_speed);
        std::vector<std::vector<double>> embeds;
        std::vector<double> labels;
        for (int s = 0; s < cfg.embed_samples; ++s) {
          std::vector<double> e(static_cast<size_t>(priors.embed_dim));
          for (double& v : e) v = rng.normal(0.0, 1.0);
          embeds.push_back(std::move(e));
          labels.push_back(rng.normal(cfg.mean_speed, cfg.label_noise));
        }
        const double nu_target = 2.0 * cfg.label_noise * cfg.label_noise;
        report.fits.push_back(fit_regression(*net, tag + (net == &p.nu_o ? ".nu_o" : ".nu_d"),
                                             embeds, labels, cfg.iteration_budget / 4, nu_target,
                                             0.01));
      }
    }
  }
  return report;
}

PriorSet prefit_priors(ParamStore& store, const PrefitConfig& cfg, int node_count, int embed_dim,
                       int blocks, int heads, Rng& rng, PrefitReport* report) {
  PriorSet set = init_priors(store, blocks, heads, node_count, embed_dim, rng);
  PrefitReport r = prefit_priors(set, cfg, rng);
  if (report) *report = std::move(r);
  return set;
}

double causal_deviation(int query_lag, int key_lag, double speed, double distance_m) {
  if (speed <= 0.0) throw std::invalid_argument("causal_deviation: speed must be positive");
  if (distance_m < 0.0) throw std::invalid_argument("causal_deviation: negative distance");
  return static_cast<double>(key_lag - query_lag) * speed - distance_m;
}

double estimate_speed(const PriorHeadParams& p, const std::vector<double>& query_embed,
                      const std::vector<double>& key_embed, int query_node, int key_node,
                      double* raw_average) {
  const Tensor& lut = p.speed_lut->value;
  const double raw = (p.nu_o.eval(key_embed) + p.nu_d.eval(query_embed) +
                      lut.at(query_node, key_node)) /
                     3.0;
  if (raw_average) *raw_average = raw;
  return softplus_scalar(raw);
}

double cone_decay(const PriorHeadParams& p, double normalized_deviation) {
  if (!std::isfinite(normalized_deviation))
    throw std::invalid_argument("cone_decay: non-finite deviation");
  return p.gamma.eval1(normalized_deviation);
}

double time_decay(const PriorHeadParams& p, int delta, int t_max) {
  if (delta < 0) throw std::invalid_argument("time_decay: negative lag difference");
  return p.sigma.eval1(static_cast<double>(delta) / static_cast<double>(t_max));
}

double prior_score(const PriorHeadParams& p, int query_node, int query_lag,
                   const std::vector<double>& query_embed, int key_node, int key_lag,
                   const std::vector<double>& key_embed, const CpsGraph& graph, double mean_speed,
                   int t_max) {
  if (key_lag < query_lag) throw std::invalid_argument("prior_score: pair is masked (future key)");
  const double v = estimate_speed(p, query_embed, key_embed, query_node, key_node);
  const double eps = causal_deviation(query_lag, key_lag, v, graph.distance(query_node, key_node));
  const double eps_n = eps / (mean_speed * static_cast<double>(t_max));
  return cone_decay(p, eps_n) + time_decay(p, key_lag - query_lag, t_max) +
         p.attn_lut->value.at(query_node, key_node);
}

TokenGeometry TokenGeometry::build(const CpsGraph& graph, int t_max) {
  if (t_max <= 0) throw std::invalid_argument("TokenGeometry: t_max must be positive");
  TokenGeometry g;
  g.node_count = graph.node_count();
  g.t_max = t_max;
  g.n_tokens = static_cast<int64_t>(g.node_count) * t_max;
  const int64_t n = g.n_tokens;
  g.dist_pairs = Tensor({n, n});
  g.delta_pairs = Tensor({n, n});
  g.lut_index.resize(static_cast<size_t>(n * n));
  g.delta_gather.resize(static_cast<size_t>(n * n));
  g.future_mask = causal_mask(g.node_count, t_max);
  for (int64_t q = 0; q < n; ++q) {
    const TokenIndex tq = token_coords(q, g.node_count, t_max);
    for (int64_t kk = 0; kk < n; ++kk) {
      const TokenIndex tk = token_coords(kk, g.node_count, t_max);
      const int64_t at = q * n + kk;
      g.dist_pairs[at] = graph.distance(tq.node, tk.node);
      const int delta = tk.lag - tq.lag;
      g.delta_pairs[at] = static_cast<double>(delta);
      g.lut_index[static_cast<size_t>(at)] =
          static_cast<int64_t>(tq.node) * g.node_count + tk.node;
      g.delta_gather[static_cast<size_t>(at)] = delta >= 0 ? delta : 0;  // masked anyway
    }
  }
  return g;
}

PriorMatrices prior_matrices(const PriorHeadParams& p, const VarPtr& block_input,
                             const TokenGeometry& geom, double mean_speed, bool include_cone) {
  const int64_t n = geom.n_tokens;
  if (block_input->value.rows() != n)
    throw std::invalid_argument("prior_matrices: token count mismatch");

  // sigma over the distinct normalized lag differences, broadcast per pair.
  Tensor deltas({geom.t_max, 1});
  for (int d = 0; d < geom.t_max; ++d)
    deltas[d] = static_cast<double>(d) / static_cast<double>(geom.t_max);
  VarPtr sigma_vals = p.sigma.forward(constant(deltas));            // t_max x 1
  VarPtr sigma_mat = reshape(gather_rows(sigma_vals, geom.delta_gather), {n, n});

  // LUT bias gathered per node pair.
  VarPtr lut_flat = reshape(leaf(*p.attn_lut), {static_cast<int64_t>(geom.node_count) *
                                                    geom.node_count,
                                                1});
  VarPtr lut_mat = reshape(gather_rows(lut_flat, geom.lut_index), {n, n});

  PriorMatrices out;
  out.time_lut = add(sigma_mat, lut_mat);

  if (include_cone) {
    // v-hat over all pairs: softplus of the three-way average of
    // nu_o(key), nu_d(query) and the speed LUT.
    VarPtr nu_o = p.nu_o.forward(block_input);  // n x 1
    VarPtr nu_d = p.nu_d.forward(block_input);  // n x 1
    const VarPtr ones = constant(Tensor::full({n, 1}, 1.0));
    VarPtr key_term = matmul(ones, nu_o, false, true);    // (q,k) -> nu_o[k]
    VarPtr query_term = matmul(nu_d, ones, false, true);  // (q,k) -> nu_d[q]
    VarPtr speed_flat = reshape(leaf(*p.speed_lut), {static_cast<int64_t>(geom.node_count) *
                                                         geom.node_count,
                                                     1});
    VarPtr speed_mat = reshape(gather_rows(speed_flat, geom.lut_index), {n, n});
    VarPtr raw = scalar_mul(1.0 / 3.0, add(add(key_term, query_term), speed_mat));
    VarPtr v_hat = softplus(raw);

    // eps = delta * v - distance, normalized by v-bar * t_max.
    VarPtr eps = add(mul(constant(geom.delta_pairs), v_hat),
                     constant([&] {
                       Tensor neg = geom.dist_pairs;
                       for (double& v : neg.data()) v = -v;
                       return neg;
                     }()));
    VarPtr eps_n = scalar_mul(1.0 / (mean_speed * static_cast<double>(geom.t_max)), eps);
    out.cone = reshape(p.gamma.forward(reshape(eps_n, {n * n, 1})), {n, n});
    out.total = add(out.cone, out.time_lut);
  } else {
    out.total = out.time_lut;
  }
  return out;
}

}  // namespace dept
