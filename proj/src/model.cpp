#include "tsa/model.hpp"

#include <cmath>
#include <random>

#include "tsa/error.hpp"
#include "tsa/rng.hpp"

namespace tsa {

std::string to_string(Task task) {
  switch (task) {
    case Task::classification:
      return "classification";
    case Task::regression:
      return "regression";
    case Task::distribution:
      return "distribution";
  }
  return "unknown";
}

Task parse_task(const std::string& name) {
  if (name == "classification") return Task::classification;
  if (name == "regression") return Task::regression;
  if (name == "distribution") return Task::distribution;
  throw ConfigError("task", "expected classification, regression or distribution, got '" + name + "'");
}

namespace {

MatrixXd uniform_matrix(Index rows, Index cols, double bound, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> uni(-bound, bound);
  MatrixXd m(rows, cols);
  for (Index k = 0; k < m.size(); ++k) m.data()[k] = uni(rng);
  return m;
}

double fan_in_bound(Index fan_in) { return 1.0 / std::sqrt(static_cast<double>(fan_in)); }

// Bin k of an adaptive average pool of `in` cells into `out` bins.
std::pair<Index, Index> pool_range(Index k, Index in, Index out) {
  const Index lo = (k * in) / out;
  const Index hi = ((k + 1) * in + out - 1) / out;
  return {lo, hi};
}

}  // namespace

void BackboneConfig::validate() const {
  if (clip_frames < 1) throw ConfigError("model.clip_frames", "must be >= 1");
  if (stride < 1) throw ConfigError("model.stride", "must be >= 1");
  if (clip_frames < stride) throw ConfigError("model.clip_frames", "must be at least the temporal stride");
  if (grid_h < 1 || grid_w < 1) throw ConfigError("model.grid", "must be at least 1x1");
  if (input_h < grid_h || input_w < grid_w) {
    throw ConfigError("model.input_size", "spatial input smaller than the feature grid");
  }
  if (input_channels < 1) throw ConfigError("model.input_channels", "must be >= 1");
  if (channels < 1) throw ConfigError("model.channels", "must be >= 1");
  if (stage2_channels < 1) throw ConfigError("model.stage2_channels", "must be >= 1");
}

Stage1Stub::Stage1Stub(const BackboneConfig& cfg)
    : cfg_(cfg),
      weight_(uniform_matrix(cfg.input_channels, cfg.channels, fan_in_bound(cfg.input_channels),
                             derive_seed(cfg.seed, "stage1"))) {}

FeatureTensorXd Stage1Stub::pool(const FeatureTensorXd& clips) const {
  const Dims5& in = clips.dims();
  if (in.t < cfg_.stride) {
    throw ConfigError("model.clip_frames", "clip has " + std::to_string(in.t) + " frames, fewer than stride " +
                                               std::to_string(cfg_.stride));
  }
  if (in.h < cfg_.grid_h || in.w < cfg_.grid_w) {
    throw ConfigError("model.input_size", "clip " + std::to_string(in.h) + "x" + std::to_string(in.w) +
                                              " is smaller than the feature grid");
  }
  const Index steps = (in.t + cfg_.stride - 1) / cfg_.stride;
  FeatureTensorXd out(Dims5{in.n, steps, cfg_.grid_h, cfg_.grid_w, in.c});
  for (Index n = 0; n < in.n; ++n) {
    for (Index t = 0; t < steps; ++t) {
      const Index f0 = t * cfg_.stride;
      const Index f1 = std::min(f0 + cfg_.stride, in.t);
      for (Index i = 0; i < cfg_.grid_h; ++i) {
        const auto [r0, r1] = pool_range(i, in.h, cfg_.grid_h);
        for (Index j = 0; j < cfg_.grid_w; ++j) {
          const auto [c0, c1] = pool_range(j, in.w, cfg_.grid_w);
          RowVector<double> acc = RowVector<double>::Zero(in.c);
          for (Index f = f0; f < f1; ++f) {
            for (Index r = r0; r < r1; ++r) {
              for (Index c = c0; c < c1; ++c) acc += clips.data().row(clips.row(n, f, r, c));
            }
          }
          const auto cells = static_cast<double>((f1 - f0) * (r1 - r0) * (c1 - c0));
          out.data().row(out.row(n, t, i, j)) = acc / cells;
        }
      }
    }
  }
  return out;
}

FeatureTensorXd Stage1Stub::forward(const FeatureTensorXd& clips) const {
  if (clips.channels() != weight_.rows()) {
    throw ShapeError("stage1: clip has " + std::to_string(clips.channels()) + " channels, expected " +
                     std::to_string(weight_.rows()));
  }
  const FeatureTensorXd pooled = pool(clips);
  Dims5 d = pooled.dims();
  d.c = weight_.cols();
  return FeatureTensorXd(d, matmul(pooled.data(), weight_));
}

Stage2Stub::Stage2Stub(const BackboneConfig& cfg)
    : weight_(uniform_matrix(cfg.channels, cfg.stage2_channels, fan_in_bound(cfg.channels),
                             derive_seed(cfg.seed, "stage2"))) {}

FeatureTensorXd Stage2Stub::forward(const FeatureTensorXd& x) const {
  const Dims5& d = x.dims();
  if (d.c != weight_.rows()) {
    throw ShapeError("stage2: input has " + std::to_string(d.c) + " channels, expected " +
                     std::to_string(weight_.rows()));
  }
  const MatrixXd mapped = matmul(x.data(), weight_);
  const Index per_clip = d.t * d.h * d.w;
  FeatureTensorXd out(Dims5{d.n, 1, 1, 1, weight_.cols()});
  for (Index n = 0; n < d.n; ++n) {
    out.data().row(n) = mapped.middleRows(n * per_clip, per_clip).colwise().sum() / static_cast<double>(per_clip);
  }
  return out;
}

FeatureTensorXd Stage2Stub::backward_input(const Dims5& input_dims, const FeatureTensorXd& upstream) const {
  const Index per_clip = input_dims.t * input_dims.h * input_dims.w;
  if (upstream.dims() != Dims5{input_dims.n, 1, 1, 1, weight_.cols()}) {
    throw ShapeError("stage2 backward: upstream dims " + to_string(upstream.dims()));
  }
  const MatrixXd per_clip_grad = matmul(upstream.data(), weight_.transpose()) / static_cast<double>(per_clip);
  FeatureTensorXd out(input_dims);
  for (Index n = 0; n < input_dims.n; ++n) {
    out.data().middleRows(n * per_clip, per_clip).rowwise() = per_clip_grad.row(n);
  }
  return out;
}

MatrixXd Stage2Stub::backward_weight(const FeatureTensorXd& x, const FeatureTensorXd& upstream) const {
  const Dims5& d = x.dims();
  const Index per_clip = d.t * d.h * d.w;
  MatrixXd means(d.n, d.c);
  for (Index n = 0; n < d.n; ++n) {
    means.row(n) = x.data().middleRows(n * per_clip, per_clip).colwise().sum() / static_cast<double>(per_clip);
  }
  return matmul(means.transpose(), upstream.data());
}

void HeadConfig::validate() const {
  for (Index h : hidden) {
    if (h < 1) throw ConfigError("head.hidden", "layer sizes must be >= 1");
  }
  switch (task) {
    case Task::regression:
      if (outputs != 1) throw ConfigError("head.outputs", "regression head has exactly one output");
      break;
    case Task::classification:
      if (outputs < 2) throw ConfigError("head.outputs", "classification needs at least 2 classes");
      break;
    case Task::distribution:
      if (outputs < 2) throw ConfigError("head.outputs", "distribution head needs at least 2 bins");
      break;
  }
}

MlpHead::MlpHead(const HeadConfig& cfg, Index inputs, std::uint64_t seed) : cfg_(cfg) {
  cfg.validate();
  std::vector<Index> sizes{inputs};
  sizes.insert(sizes.end(), cfg.hidden.begin(), cfg.hidden.end());
  sizes.push_back(cfg.outputs);
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    const double bound = fan_in_bound(sizes[l]);
    weights_.push_back(uniform_matrix(sizes[l], sizes[l + 1], bound, derive_seed(seed, "head.w", l)));
    biases_.push_back(uniform_matrix(1, sizes[l + 1], bound, derive_seed(seed, "head.b", l)));
  }
}

VectorXd MlpHead::forward(const VectorXd& in, Cache* cache) const {
  if (in.size() != weights_.front().rows()) {
    throw ShapeError("mlp head: input size " + std::to_string(in.size()) + ", expected " +
                     std::to_string(weights_.front().rows()));
  }
  if (cache) cache->inputs.clear();
  VectorXd h = in;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    if (cache) cache->inputs.push_back(h);
    RowVector<double> z = matmul(h.transpose(), weights_[l]) + biases_[l];
    h = z.transpose();
    if (l + 1 < weights_.size()) h = h.array().tanh().matrix();
  }
  switch (cfg_.task) {
    case Task::regression:
      break;
    case Task::classification:
      h = (1.0 / (1.0 + (-h.array()).exp())).matrix();
      break;
    case Task::distribution: {
      const double top = h.maxCoeff();
      VectorXd e = (h.array() - top).exp().matrix();
      h = e / e.sum();
      break;
    }
  }
  if (cache) cache->output = h;
  return h;
}

MlpHead::Gradients MlpHead::backward(const Cache& cache, const VectorXd& d_output) const {
  const VectorXd& out = cache.output;
  if (d_output.size() != out.size()) throw ShapeError("mlp head backward: gradient size mismatch");
  VectorXd dz;
  switch (cfg_.task) {
    case Task::regression:
      dz = d_output;
      break;
    case Task::classification:
      dz = (d_output.array() * out.array() * (1.0 - out.array())).matrix();
      break;
    case Task::distribution:
      dz = (out.array() * (d_output.array() - d_output.dot(out))).matrix();
      break;
  }
  Gradients g;
  g.weights.resize(weights_.size());
  g.biases.resize(biases_.size());
  for (std::size_t l = weights_.size(); l-- > 0;) {
    const VectorXd& in = cache.inputs[l];
    g.weights[l] = matmul(in, dz.transpose());
    g.biases[l] = dz.transpose();
    VectorXd d_in = matmul(weights_[l], dz);
    if (l > 0) {
      // `in` is tanh of the previous pre-activation.
      d_in = (d_in.array() * (1.0 - in.array().square())).matrix();
    }
    dz = std::move(d_in);
  }
  g.d_input = std::move(dz);
  return g;
}

void ScoreDistribution::validate() const {
  if (bins.size() < 2) throw ShapeError("score distribution needs at least 2 bins");
  if (bins.size() != probs.size()) throw ShapeError("score distribution bins/probs size mismatch");
  if ((probs.array() < 0.0).any() || !probs.allFinite()) throw NumericError("score distribution has invalid mass");
  if (std::abs(probs.sum() - 1.0) > 1e-9) throw NumericError("score distribution does not sum to 1");
}

double ScoreDistribution::expectation() const { return bins.dot(probs); }

VectorXd score_bins(double lo, double hi, Index count) {
  if (count < 2 || !(hi > lo)) throw UsageError("score bins need count >= 2 and hi > lo");
  VectorXd bins(count);
  for (Index k = 0; k < count; ++k) {
    bins(k) = lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(count - 1);
  }
  return bins;
}

ScoreDistribution gt_distribution(double score, double sigma, const VectorXd& bins) {
  if (!(sigma > 0.0)) throw UsageError("gt_distribution: sigma must be positive");
  if (bins.size() < 2) throw UsageError("gt_distribution: need at least 2 bins");
  VectorXd logits(bins.size());
  for (Index k = 0; k < bins.size(); ++k) {
    const double d = bins(k) - score;
    logits(k) = -(d * d) / (2.0 * sigma * sigma);
  }
  const double top = logits.maxCoeff();
  VectorXd w = (logits.array() - top).exp().matrix();
  ScoreDistribution out{bins, w / w.sum()};
  return out;
}

double final_score(double expected_score, double difficulty) { return difficulty * expected_score; }

ScalarLoss loss_mse(double pred, double gt) {
  const double d = pred - gt;
  return {d * d, 2.0 * d};
}

ScalarLoss loss_bce(double pred, double gt) {
  const double p = std::clamp(pred, kBceEpsilon, 1.0 - kBceEpsilon);
  return {-(gt * std::log(p) + (1.0 - gt) * std::log(1.0 - p)), (p - gt) / (p * (1.0 - p))};
}

VectorLoss loss_kl(const ScoreDistribution& target, const ScoreDistribution& predicted) {
  if (target.bins.size() != predicted.bins.size() || target.bins != predicted.bins) {
    throw ShapeError("loss_kl: distributions use different bins");
  }
  VectorLoss out;
  out.grad = VectorXd::Zero(target.probs.size());
  for (Index k = 0; k < target.probs.size(); ++k) {
    const double p = target.probs(k);
    if (p <= 0.0) continue;
    const double s = std::max(predicted.probs(k), kKlFloor);
    out.value += p * std::log(p / s);
    out.grad(k) = -p / s;
  }
  return out;
}

void ModelConfig::validate() const {
  backbone.validate();
  head.validate();
  if (depth < 0 || depth > kMaxStackDepth) {
    throw ConfigError("train.depth", "must be in [0, " + std::to_string(kMaxStackDepth) + "]");
  }
  if (reduction_factor < 1 || backbone.channels / reduction_factor < 1) {
    throw ConfigError("model.reduction_factor", "leaves no reduced channels");
  }
}

TsaNet::TsaNet(const ModelConfig& cfg)
    : cfg_(cfg),
      stage1_(cfg.backbone),
      stage2_(cfg.backbone),
      head_(cfg.head, cfg.backbone.stage2_channels, derive_seed(cfg.seed, "head")) {
  cfg.validate();
  for (Index k = 0; k < cfg.depth; ++k) {
    attention_.push_back(AttentionParams<double>::init(cfg.backbone.channels, cfg.reduction_factor,
                                                       derive_seed(cfg.seed, "attention", static_cast<std::uint64_t>(k))));
  }
}

VectorXd TsaNet::forward_features(const FeatureTensorXd& x, const TubeIndex& tube, Cache* cache) const {
  if (x.channels() != cfg_.backbone.channels) {
    throw ShapeError("model expects C=" + std::to_string(cfg_.backbone.channels) + " features, got " +
                     std::to_string(x.channels()));
  }
  check_tube_matches(x.dims(), tube, "model");
  FeatureTensorXd h = x;
  if (cache) cache->stack_inputs.clear();
  for (const auto& p : attention_) {
    if (cache) cache->stack_inputs.push_back(h);
    h = tsa_forward(h, tube, p);
  }
  const FeatureTensorXd pooled = stage2_.forward(h);
  const FeatureTensorXd mean = clip_mean(pooled);
  VectorXd hbar = mean.data().row(0).transpose();
  VectorXd out = head_.forward(hbar, cache ? &cache->head : nullptr);
  if (cache) {
    cache->attended = std::move(h);
    cache->hbar = std::move(hbar);
  }
  if (!out.allFinite()) throw NumericError("model output is not finite");
  return out;
}

VectorXd TsaNet::forward_clips(const FeatureTensorXd& clips, const TubeIndex& tube, Cache* cache) const {
  FeatureTensorXd pooled = stage1_.pool(clips);
  Dims5 d = pooled.dims();
  d.c = stage1_.weight().cols();
  FeatureTensorXd x(d, matmul(pooled.data(), stage1_.weight()));
  VectorXd out = forward_features(x, tube, cache);
  if (cache) cache->pooled_clips = std::move(pooled);
  return out;
}

std::vector<NamedParam> TsaNet::parameters() {
  std::vector<NamedParam> out;
  for (std::size_t k = 0; k < attention_.size(); ++k) {
    const std::string base = "tsa" + std::to_string(k) + ".";
    out.push_back({base + "theta", &attention_[k].theta, true});
    out.push_back({base + "phi", &attention_[k].phi, true});
    out.push_back({base + "g", &attention_[k].g, true});
    out.push_back({base + "wz", &attention_[k].wz, true});
  }
  out.push_back({"stage1.w", &stage1_.weight(), cfg_.backbone.trainable});
  out.push_back({"stage2.w", &stage2_.weight(), cfg_.backbone.trainable});
  for (std::size_t l = 0; l < head_.weights().size(); ++l) {
    out.push_back({"head.w" + std::to_string(l), &head_.weights()[l], true});
    out.push_back({"head.b" + std::to_string(l), &head_.biases()[l], true});
  }
  return out;
}

std::vector<const MatrixXd*> TsaNet::parameter_values() const {
  std::vector<const MatrixXd*> out;
  for (auto& p : const_cast<TsaNet*>(this)->parameters()) out.push_back(p.value);
  return out;
}

std::vector<std::string> TsaNet::parameter_names() const {
  std::vector<std::string> out;
  for (auto& p : const_cast<TsaNet*>(this)->parameters()) out.push_back(p.name);
  return out;
}

std::vector<MatrixXd> TsaNet::backward(const Cache& cache, const TubeIndex& tube, const VectorXd& d_output) const {
  std::vector<MatrixXd> grads;
  const MlpHead::Gradients head_grads = head_.backward(cache.head, d_output);

  const Dims5 dims = cache.attended.dims();
  FeatureTensorXd d_pooled(Dims5{dims.n, 1, 1, 1, cfg_.backbone.stage2_channels});
  d_pooled.data().rowwise() = head_grads.d_input.transpose() / static_cast<double>(dims.n);

  MatrixXd d_stage2 = MatrixXd::Zero(stage2_.weight().rows(), stage2_.weight().cols());
  if (cfg_.backbone.trainable) d_stage2 = stage2_.backward_weight(cache.attended, d_pooled);

  FeatureTensorXd d_x = stage2_.backward_input(dims, d_pooled);
  std::vector<AttentionGradients<double>> att(attention_.size());
  for (std::size_t k = attention_.size(); k-- > 0;) {
    att[k] = tsa_backward(cache.stack_inputs[k], tube, attention_[k], d_x);
    d_x = att[k].d_input;
  }
  for (auto& a : att) {
    grads.push_back(std::move(a.d_theta));
    grads.push_back(std::move(a.d_phi));
    grads.push_back(std::move(a.d_g));
    grads.push_back(std::move(a.d_wz));
  }

  MatrixXd d_stage1 = MatrixXd::Zero(stage1_.weight().rows(), stage1_.weight().cols());
  if (cfg_.backbone.trainable && cache.pooled_clips) {
    d_stage1 = matmul(cache.pooled_clips->data().transpose(), d_x.data());
  }
  grads.push_back(std::move(d_stage1));
  grads.push_back(std::move(d_stage2));
  for (std::size_t l = 0; l < head_grads.weights.size(); ++l) {
    grads.push_back(head_grads.weights[l]);
    grads.push_back(head_grads.biases[l]);
  }
  return grads;
}

}  // namespace tsa
