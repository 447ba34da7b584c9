#include "tpl/hat_mlp.hpp"

#include <algorithm>
#include <cmath>

#include "tpl/error.hpp"

namespace tpl {
namespace {

DenseLayer make_dense(std::size_t in, std::size_t out, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  DenseLayer layer{Matrix(out, in), Vector(out)};
  for (double& w : layer.weight.entries()) w = rng.uniform(-bound, bound);
  for (double& b : layer.bias) b = rng.uniform(-bound, bound);
  return layer;
}

void check_masks(const HatMlp& net, const LayerMasks& masks) {
  if (masks.size() != net.layer_count()) {
    throw Error(Errc::shape_mismatch, "mask count differs from hidden layer count");
  }
  for (std::size_t l = 0; l < masks.size(); ++l) {
    if (masks[l].size() != net.width(l)) {
      throw Error(Errc::shape_mismatch, "mask width differs from layer width");
    }
  }
}

}  // namespace

TaskHead make_head(std::size_t feature_width, std::size_t class_count, Rng& rng) {
  if (class_count == 0) throw Error(Errc::invalid_argument, "head needs at least one class");
  DenseLayer dense = make_dense(feature_width, class_count + 1, rng);
  return TaskHead{class_count, std::move(dense.weight), std::move(dense.bias)};
}

HatMlp::HatMlp(std::size_t input_dim, std::vector<std::size_t> hidden, double s_max, Rng& rng)
    : input_dim_(input_dim), widths_(std::move(hidden)), s_max_(s_max) {
  if (input_dim_ == 0 || widths_.empty()) {
    throw Error(Errc::invalid_argument, "network needs an input and at least one hidden layer");
  }
  if (!(s_max_ > 0.0)) throw Error(Errc::invalid_argument, "s_max must be positive");
  std::size_t in = input_dim_;
  for (std::size_t w : widths_) {
    if (w == 0) throw Error(Errc::invalid_argument, "hidden widths must be positive");
    layers_.push_back(make_dense(in, w, rng));
    cumulative_.emplace_back(w, 0.0);
    in = w;
  }
}

std::size_t HatMlp::add_task(Rng& rng) {
  std::vector<Vector> e;
  for (std::size_t w : widths_) {
    Vector v(w);
    for (double& x : v) x = rng.uniform(0.0, 2.0);
    e.push_back(std::move(v));
  }
  embeddings_.push_back(std::move(e));
  task_masks_.emplace_back();
  return embeddings_.size() - 1;
}

void HatMlp::check_task(std::size_t task) const {
  if (task >= embeddings_.size()) {
    throw Error(Errc::unknown_task, "no embeddings for task index " + std::to_string(task));
  }
}

Vector& HatMlp::embedding(std::size_t task, std::size_t layer) {
  check_task(task);
  return embeddings_[task].at(layer);
}

const Vector& HatMlp::embedding(std::size_t task, std::size_t layer) const {
  check_task(task);
  return embeddings_[task].at(layer);
}

void HatMlp::set_cumulative_mask(LayerMasks masks) {
  check_masks(*this, masks);
  cumulative_ = std::move(masks);
}

bool HatMlp::is_consolidated(std::size_t task) const {
  check_task(task);
  return task_masks_[task].has_value();
}

const LayerMasks& HatMlp::task_mask(std::size_t task) const {
  if (!is_consolidated(task)) {
    throw Error(Errc::unknown_task, "task " + std::to_string(task) + " is not consolidated");
  }
  return *task_masks_[task];
}

void HatMlp::set_task_mask(std::size_t task, LayerMasks mask) {
  check_task(task);
  check_masks(*this, mask);
  task_masks_[task] = std::move(mask);
}

LayerMasks HatMlp::inference_mask(std::size_t task) const {
  if (is_consolidated(task)) return *task_masks_[task];
  return attention(*this, task, s_max_);
}

LayerMasks HatMlp::ones_mask() const {
  LayerMasks m;
  for (std::size_t w : widths_) m.emplace_back(w, 1.0);
  return m;
}

bool operator==(const DenseLayer& a, const DenseLayer& b) {
  return a.weight == b.weight && a.bias == b.bias;
}

bool operator==(const TaskHead& a, const TaskHead& b) {
  return a.class_count == b.class_count && a.weight == b.weight && a.bias == b.bias;
}

bool operator==(const HatMlp& a, const HatMlp& b) {
  return a.input_dim_ == b.input_dim_ && a.widths_ == b.widths_ && a.s_max_ == b.s_max_ &&
         a.layers_ == b.layers_ && a.embeddings_ == b.embeddings_ &&
         a.cumulative_ == b.cumulative_ && a.task_masks_ == b.task_masks_;
}

LayerMasks attention(const HatMlp& net, std::size_t task, double s) {
  LayerMasks out;
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    const Vector& e = net.embedding(task, l);
    Vector a(e.size());
    for (std::size_t i = 0; i < e.size(); ++i) a[i] = sigmoid(s * e[i]);
    out.push_back(std::move(a));
  }
  return out;
}

namespace {

struct ForwardTrace {
  std::vector<Vector> inputs;  // h_{l-1} for each layer
  std::vector<Vector> pre;     // W h + b
  std::vector<Vector> relu;    // ReLU(pre)
  Vector features;
  Vector logits;
};

void run_forward(const HatMlp& net, const TaskHead* head, std::span<const double> x,
                 const LayerMasks& masks, ForwardTrace* trace, Vector& features,
                 Vector* logits) {
  if (x.size() != net.input_dim()) {
    throw Error(Errc::dimension_mismatch, "input dimension " + std::to_string(x.size()) +
                                              " differs from network input " +
                                              std::to_string(net.input_dim()));
  }
  Vector h(x.begin(), x.end());
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    const DenseLayer& layer = net.layer(l);
    Vector pre(layer.bias);
    for (std::size_t i = 0; i < pre.size(); ++i) pre[i] += dot(layer.weight.row(i), h);
    Vector out(pre.size());
    Vector relu(pre.size());
    for (std::size_t i = 0; i < pre.size(); ++i) {
      relu[i] = pre[i] > 0.0 ? pre[i] : 0.0;
      out[i] = masks[l][i] * relu[i];
    }
    if (trace) {
      trace->inputs.push_back(std::move(h));
      trace->pre.push_back(std::move(pre));
      trace->relu.push_back(std::move(relu));
    }
    h = std::move(out);
  }
  features = std::move(h);
  if (head && logits) {
    if (head->weight.cols() != features.size()) {
      throw Error(Errc::dimension_mismatch, "head width differs from feature width");
    }
    *logits = head->bias;
    for (std::size_t k = 0; k < logits->size(); ++k) (*logits)[k] += dot(head->weight.row(k), features);
  }
}

}  // namespace

Vector extract_features(const HatMlp& net, std::span<const double> x, const LayerMasks& masks) {
  check_masks(net, masks);
  Vector features;
  run_forward(net, nullptr, x, masks, nullptr, features, nullptr);
  return features;
}

ForwardResult forward(const HatMlp& net, const TaskHead& head, std::span<const double> x,
                      const LayerMasks& masks) {
  check_masks(net, masks);
  ForwardResult r;
  run_forward(net, &head, x, masks, nullptr, r.features, &r.logits);
  return r;
}

ForwardResult forward(const HatMlp& net, const TaskHead& head, std::span<const double> x,
                      std::size_t task, double s) {
  return forward(net, head, x, attention(net, task, s));
}

Gradients Gradients::zeros_like(const HatMlp& net, const TaskHead& head) {
  Gradients g;
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    const DenseLayer& layer = net.layer(l);
    g.weight.emplace_back(layer.weight.rows(), layer.weight.cols());
    g.bias.emplace_back(layer.bias.size(), 0.0);
    g.embedding.emplace_back(net.width(l), 0.0);
  }
  g.head_weight = Matrix(head.weight.rows(), head.weight.cols());
  g.head_bias.assign(head.bias.size(), 0.0);
  return g;
}

namespace {

double reg_denominator(const LayerMasks& cumulative) {
  double den = 0.0;
  for (const Vector& c : cumulative)
    for (double v : c) den += 1.0 - v;
  return std::max(den, 1e-12);
}

}  // namespace

double hat_reg_loss(const HatMlp& net, std::size_t task, double s) {
  const LayerMasks a = attention(net, task, s);
  const LayerMasks& cumulative = net.cumulative_mask();
  double num = 0.0;
  for (std::size_t l = 0; l < a.size(); ++l)
    for (std::size_t i = 0; i < a[l].size(); ++i) num += a[l][i] * (1.0 - cumulative[l][i]);
  return num / reg_denominator(cumulative);
}

double loss_and_gradients(const HatMlp& net, const TaskHead& head,
                          std::span<const TrainingExample> batch, const LossOptions& options,
                          Gradients& grads) {
  if (batch.empty()) throw Error(Errc::empty_training_set, "empty minibatch");
  const std::size_t width = options.softmax_width;
  if (width == 0 || width > head.bias.size()) {
    throw Error(Errc::invalid_argument, "softmax width out of range");
  }
  grads = Gradients::zeros_like(net, head);
  grads.s = options.s;

  const LayerMasks masks =
      options.task ? attention(net, *options.task, options.s) : net.ones_mask();
  const std::size_t layers = net.layer_count();
  std::vector<Vector> mask_grad;
  for (std::size_t l = 0; l < layers; ++l) mask_grad.emplace_back(net.width(l), 0.0);

  const double inv_batch = 1.0 / static_cast<double>(batch.size());
  double ce_total = 0.0;
  for (const TrainingExample& ex : batch) {
    if (ex.target < 0 || static_cast<std::size_t>(ex.target) >= width) {
      throw Error(Errc::invalid_argument, "training target outside the softmax width");
    }
    ForwardTrace trace;
    Vector features;
    Vector logits;
    run_forward(net, &head, ex.features, masks, &trace, features, &logits);

    const std::span<const double> active(logits.data(), width);
    const double lse = log_sum_exp(active);
    ce_total += lse - logits[static_cast<std::size_t>(ex.target)];

    Vector dlogits(logits.size(), 0.0);
    for (std::size_t k = 0; k < width; ++k) {
      dlogits[k] = (std::exp(logits[k] - lse) - (static_cast<int>(k) == ex.target ? 1.0 : 0.0)) *
                   inv_batch;
    }
    Vector dh(features.size(), 0.0);
    for (std::size_t k = 0; k < width; ++k) {
      const double g = dlogits[k];
      if (g == 0.0) continue;
      grads.head_bias[k] += g;
      auto grow = grads.head_weight.row(k);
      const auto hrow = head.weight.row(k);
      for (std::size_t j = 0; j < features.size(); ++j) {
        grow[j] += g * features[j];
        dh[j] += g * hrow[j];
      }
    }
    for (std::size_t l = layers; l-- > 0;) {
      const DenseLayer& layer = net.layer(l);
      const Vector& relu = trace.relu[l];
      const Vector& pre = trace.pre[l];
      const Vector& input = trace.inputs[l];
      Vector dpre(relu.size(), 0.0);
      for (std::size_t i = 0; i < relu.size(); ++i) {
        mask_grad[l][i] += dh[i] * relu[i];
        dpre[i] = pre[i] > 0.0 ? dh[i] * masks[l][i] : 0.0;
      }
      Vector dinput(input.size(), 0.0);
      for (std::size_t i = 0; i < dpre.size(); ++i) {
        const double g = dpre[i];
        if (g == 0.0) continue;
        grads.bias[l][i] += g;
        auto grow = grads.weight[l].row(i);
        const auto wrow = layer.weight.row(i);
        for (std::size_t j = 0; j < input.size(); ++j) {
          grow[j] += g * input[j];
          dinput[j] += g * wrow[j];
        }
      }
      dh = std::move(dinput);
    }
  }

  double loss = ce_total * inv_batch;
  if (options.task) {
    const LayerMasks& cumulative = net.cumulative_mask();
    const double den = reg_denominator(cumulative);
    double num = 0.0;
    for (std::size_t l = 0; l < layers; ++l) {
      for (std::size_t i = 0; i < masks[l].size(); ++i) {
        const double a = masks[l][i];
        const double free = 1.0 - cumulative[l][i];
        num += a * free;
        const double dmask = mask_grad[l][i] + options.mu_reg * free / den;
        grads.embedding[l][i] = dmask * options.s * a * (1.0 - a);
      }
    }
    loss += options.mu_reg * num / den;
  }
  return loss;
}

namespace {

void momentum_step(std::span<double> param, std::span<const double> grad, std::span<double> vel,
                   const SgdStep& step) {
  for (std::size_t i = 0; i < param.size(); ++i) {
    vel[i] = step.momentum * vel[i] + grad[i];
    param[i] -= step.learning_rate * vel[i];
  }
}

void check_gradient_shapes(const HatMlp& net, const TaskHead& head, const Gradients& g) {
  bool ok = g.weight.size() == net.layer_count() && g.bias.size() == net.layer_count() &&
            g.embedding.size() == net.layer_count() && g.head_weight.rows() == head.weight.rows() &&
            g.head_weight.cols() == head.weight.cols() && g.head_bias.size() == head.bias.size();
  for (std::size_t l = 0; ok && l < net.layer_count(); ++l) {
    ok = g.weight[l].rows() == net.layer(l).weight.rows() &&
         g.weight[l].cols() == net.layer(l).weight.cols() &&
         g.bias[l].size() == net.layer(l).bias.size() && g.embedding[l].size() == net.width(l);
  }
  if (!ok) throw Error(Errc::shape_mismatch, "gradients are not shaped like the parameters");
}

}  // namespace

void masked_gradient_update(HatMlp& net, TaskHead& head, const Gradients& grads,
                            std::optional<std::size_t> task, const SgdStep& step,
                            MomentumState& momentum) {
  check_gradient_shapes(net, head, grads);
  check_gradient_shapes(net, head, momentum);
  const LayerMasks& cumulative = net.cumulative_mask();

  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    DenseLayer& layer = net.layer(l);
    Matrix scaled_w = grads.weight[l];
    Vector scaled_b = grads.bias[l];
    for (std::size_t i = 0; i < layer.weight.rows(); ++i) {
      const double ai = cumulative[l][i];
      for (std::size_t j = 0; j < layer.weight.cols(); ++j) {
        const double aj = l == 0 ? 1.0 : cumulative[l - 1][j];
        scaled_w(i, j) *= 1.0 - std::min(ai, aj);
      }
      scaled_b[i] *= 1.0 - ai;
    }
    momentum_step(layer.weight.entries(), scaled_w.entries(), momentum.weight[l].entries(), step);
    momentum_step(layer.bias, scaled_b, momentum.bias[l], step);
  }
  momentum_step(head.weight.entries(), grads.head_weight.entries(),
                momentum.head_weight.entries(), step);
  momentum_step(head.bias, grads.head_bias, momentum.head_bias, step);

  if (!task) return;
  const double s = grads.s;
  const double s_max = net.s_max();
  constexpr double kCoshClamp = 50.0;
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    Vector& e = net.embedding(*task, l);
    Vector compensated = grads.embedding[l];
    for (std::size_t i = 0; i < e.size(); ++i) {
      // Ratio of the gate's maximum slope (s_max/4) to its slope at s.
      const double u = std::clamp(s * e[i], -kCoshClamp, kCoshClamp);
      compensated[i] *= s_max * (1.0 + std::cosh(u)) / (2.0 * s);
    }
    momentum_step(e, compensated, momentum.embedding[l], step);
    for (double& v : e) v = std::clamp(v, -kEmbeddingClamp, kEmbeddingClamp);
  }
}

LayerMasks merge_binarized(LayerMasks& cumulative, const LayerMasks& attention) {
  if (cumulative.size() != attention.size()) {
    throw Error(Errc::shape_mismatch, "mask layer count mismatch");
  }
  LayerMasks binary;
  for (std::size_t l = 0; l < attention.size(); ++l) {
    if (cumulative[l].size() != attention[l].size()) {
      throw Error(Errc::shape_mismatch, "mask width mismatch");
    }
    Vector b(attention[l].size());
    for (std::size_t i = 0; i < b.size(); ++i) {
      b[i] = attention[l][i] >= 0.5 ? 1.0 : 0.0;
      cumulative[l][i] = std::max(cumulative[l][i], b[i]);
    }
    binary.push_back(std::move(b));
  }
  return binary;
}

void consolidate_mask(HatMlp& net, std::size_t task) {
  LayerMasks cumulative = net.cumulative_mask();
  const LayerMasks gates =
      net.is_consolidated(task) ? net.task_mask(task) : attention(net, task, net.s_max());
  LayerMasks binary = merge_binarized(cumulative, gates);
  net.set_cumulative_mask(std::move(cumulative));
  net.set_task_mask(task, std::move(binary));
}

double anneal_s(std::size_t batch_index, std::size_t batches_per_epoch, double s_max) {
  if (batches_per_epoch == 0 || batch_index < 1 || batch_index > batches_per_epoch) {
    throw Error(Errc::invalid_argument, "batch index outside 1..batches_per_epoch");
  }
  if (batches_per_epoch == 1) return s_max;
  const double start = 1.0 / s_max;
  return start + (s_max - start) * static_cast<double>(batch_index - 1) /
                     static_cast<double>(batches_per_epoch - 1);
}

}  // namespace tpl
