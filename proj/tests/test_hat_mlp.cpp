#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "tpl/error.hpp"
#include "tpl/hat_mlp.hpp"

using namespace tpl;

namespace {

struct Toy {
  Rng rng{21};
  HatMlp net{2, {4, 3}, 400.0, rng};
  TaskHead head = make_head(3, 2, rng);
};

// Straight-line forward pass written independently of the library.
Vector reference_logits(const HatMlp& net, const TaskHead& head, const Vector& x,
                        const LayerMasks& masks) {
  Vector h = x;
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    const DenseLayer& d = net.layer(l);
    Vector next(d.weight.rows());
    for (std::size_t i = 0; i < next.size(); ++i) {
      double s = d.bias[i];
      for (std::size_t j = 0; j < h.size(); ++j) s += d.weight(i, j) * h[j];
      next[i] = std::max(s, 0.0) * masks[l][i];
    }
    h = next;
  }
  Vector out(head.weight.rows());
  for (std::size_t i = 0; i < out.size(); ++i) {
    double s = head.bias[i];
    for (std::size_t j = 0; j < h.size(); ++j) s += head.weight(i, j) * h[j];
    out[i] = s;
  }
  return out;
}

std::vector<std::span<double>> parameters(HatMlp& net, TaskHead& head, std::size_t task) {
  std::vector<std::span<double>> p;
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    p.push_back(net.layer(l).weight.entries());
    p.push_back(net.layer(l).bias);
  }
  p.push_back(head.weight.entries());
  p.push_back(head.bias);
  for (std::size_t l = 0; l < net.layer_count(); ++l) p.push_back(net.embedding(task, l));
  return p;
}

std::vector<std::span<const double>> gradient_views(const Gradients& g) {
  std::vector<std::span<const double>> v;
  for (std::size_t l = 0; l < g.weight.size(); ++l) {
    v.push_back(g.weight[l].entries());
    v.push_back(g.bias[l]);
  }
  v.push_back(g.head_weight.entries());
  v.push_back(g.head_bias);
  for (const Vector& e : g.embedding) v.push_back(e);
  return v;
}

}  // namespace

TEST_CASE("attention examples") {
  Toy t;
  t.net.add_task(t.rng);
  for (std::size_t l = 0; l < 2; ++l) std::fill(t.net.embedding(0, l).begin(), t.net.embedding(0, l).end(), 0.0);
  for (const Vector& a : attention(t.net, 0, 123.0)) {
    for (double v : a) CHECK(v == 0.5);
  }
  t.net.embedding(0, 0)[0] = 6.0;
  CHECK(std::abs(attention(t.net, 0, 400.0)[0][0] - 1.0) <= 1e-12);
  t.net.embedding(0, 0)[0] = -1.0;
  t.net.embedding(0, 0)[1] = 2.0;
  const LayerMasks a = attention(t.net, 0, 1.0);
  CHECK(a[0][0] == doctest::Approx(1.0 / (1.0 + std::exp(1.0))).epsilon(1e-15));
  CHECK(a[0][1] == doctest::Approx(1.0 / (1.0 + std::exp(-2.0))).epsilon(1e-15));
  CHECK_THROWS_AS(attention(t.net, 3, 1.0), Error);
}

TEST_CASE("forward: identity mask, annihilation and reference implementation") {
  Toy t;
  t.net.add_task(t.rng);
  Rng r(4);
  for (int trial = 0; trial < 50; ++trial) {
    Vector x{r.uniform(-2, 2), r.uniform(-2, 2)};
    const LayerMasks ones = t.net.ones_mask();
    const Vector plain = forward(t.net, t.head, x, ones).logits;
    const Vector plain_ref = reference_logits(t.net, t.head, x, ones);
    for (std::size_t i = 0; i < plain.size(); ++i) CHECK(plain[i] == doctest::Approx(plain_ref[i]).epsilon(1e-14));
    const LayerMasks gates = attention(t.net, 0, 2.0);
    const Vector got = forward(t.net, t.head, x, 0, 2.0).logits;
    const Vector want = reference_logits(t.net, t.head, x, gates);
    for (std::size_t i = 0; i < got.size(); ++i) CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-14));
  }
  LayerMasks dead = t.net.ones_mask();
  std::fill(dead[1].begin(), dead[1].end(), 0.0);
  const ForwardResult f = forward(t.net, t.head, Vector{1.0, -1.0}, dead);
  for (double v : f.features) CHECK(v == 0.0);
  CHECK(f.logits == t.head.bias);
  CHECK_THROWS_AS(forward(t.net, t.head, Vector{1.0}, t.net.ones_mask()), Error);
}

TEST_CASE("analytic gradients match central differences") {
  for (std::size_t width : {2u, 3u}) {
    Toy t;
    t.net.add_task(t.rng);
    // A partly protected cumulative mask exercises the regularizer denominator.
    t.net.set_cumulative_mask({{1.0, 0.0, 0.0, 0.0}, {0.0, 1.0, 0.0}});
    Rng r(77);
    std::vector<Vector> xs;
    std::vector<TrainingExample> batch;
    for (int i = 0; i < 6; ++i) xs.push_back({r.uniform(-2, 2), r.uniform(-2, 2)});
    for (int i = 0; i < 6; ++i) batch.push_back({xs[i], static_cast<int>(i % width)});
    for (std::size_t l = 0; l < 2; ++l) {
      for (double& e : t.net.embedding(0, l)) e = r.uniform(-1.0, 1.0);
    }
    const LossOptions opt{std::size_t{0}, 1.5, 0.75, width};
    Gradients g = Gradients::zeros_like(t.net, t.head);
    (void)loss_and_gradients(t.net, t.head, batch, opt, g);
    const auto grads = gradient_views(g);
    auto params = parameters(t.net, t.head, 0);
    std::size_t count = 0;
    double worst = 0.0;
    for (std::size_t p = 0; p < params.size(); ++p) {
      for (std::size_t i = 0; i < params[p].size(); ++i) {
        const double saved = params[p][i];
        const double h = 1e-6;
        Gradients scratch = Gradients::zeros_like(t.net, t.head);
        params[p][i] = saved + h;
        const double up = loss_and_gradients(t.net, t.head, batch, opt, scratch);
        params[p][i] = saved - h;
        const double down = loss_and_gradients(t.net, t.head, batch, opt, scratch);
        params[p][i] = saved;
        const double numeric = (up - down) / (2 * h);
        const double analytic = grads[p][i];
        const double rel = std::abs(numeric - analytic) / std::max({std::abs(numeric), std::abs(analytic), 1e-3});
        worst = std::max(worst, rel);
        ++count;
      }
    }
    CHECK(count <= 50);
    CHECK(worst <= 1e-4);
  }
}

TEST_CASE("masked update: full protection, no protection, single weight") {
  Toy t;
  t.net.add_task(t.rng);
  Gradients g = Gradients::zeros_like(t.net, t.head);
  for (auto& w : g.weight) std::fill(w.entries().begin(), w.entries().end(), 1.0);
  for (auto& b : g.bias) std::fill(b.begin(), b.end(), 1.0);
  const SgdStep step{0.1, 0.0};

  {
    HatMlp net = t.net;
    TaskHead head = t.head;
    LayerMasks full = net.ones_mask();
    net.set_cumulative_mask(full);
    MomentumState m = Gradients::zeros_like(net, head);
    masked_gradient_update(net, head, g, std::nullopt, step, m);
    for (std::size_t l = 0; l < 2; ++l) CHECK(net.layer(l) == t.net.layer(l));
  }
  {
    HatMlp net = t.net;
    TaskHead head = t.head;
    MomentumState m = Gradients::zeros_like(net, head);
    masked_gradient_update(net, head, g, std::nullopt, step, m);
    for (std::size_t l = 0; l < 2; ++l) {
      for (std::size_t i = 0; i < net.layer(l).weight.entries().size(); ++i) {
        CHECK(net.layer(l).weight.entries()[i] == t.net.layer(l).weight.entries()[i] - 0.1);
      }
    }
  }
  {
    HatMlp net = t.net;
    TaskHead head = t.head;
    net.set_cumulative_mask({{0.0, 1.0, 0.0, 0.0}, {0.0, 0.0, 0.0}});
    MomentumState m = Gradients::zeros_like(net, head);
    masked_gradient_update(net, head, g, std::nullopt, step, m);
    // Layer 0 row 1: input side counts as used, so min(1, 1) = 1 and the row is frozen.
    CHECK(net.layer(0).weight(1, 0) == t.net.layer(0).weight(1, 0));
    CHECK(net.layer(0).bias[1] == t.net.layer(0).bias[1]);
    // Layer 1 weight (0, 1): a_i = 0, a_j = 1, min = 0 so the plain step applies.
    CHECK(net.layer(1).weight(0, 1) == t.net.layer(1).weight(0, 1) - 0.1);
    net.set_cumulative_mask({{0.0, 0.0, 0.0, 0.0}, {1.0, 0.0, 0.0}});
    HatMlp before = net;
    masked_gradient_update(net, head, g, std::nullopt, step, m);
    // a_i = 1 for row 0 of layer 1 with a_j = 0: scale 1 - min(1, 0) = 1.
    CHECK(net.layer(1).weight(0, 2) != before.layer(1).weight(0, 2));
  }
  Gradients bad = g;
  bad.bias.pop_back();
  MomentumState m = Gradients::zeros_like(t.net, t.head);
  CHECK_THROWS_AS(masked_gradient_update(t.net, t.head, bad, std::nullopt, step, m), Error);
}

TEST_CASE("merge_binarized examples") {
  LayerMasks cumulative{{0.0, 0.0}};
  const LayerMasks first = merge_binarized(cumulative, {{0.99, 0.01}});
  CHECK(cumulative == LayerMasks{{1.0, 0.0}});
  CHECK(first == LayerMasks{{1.0, 0.0}});
  (void)merge_binarized(cumulative, {{0.01, 0.99}});
  CHECK(cumulative == LayerMasks{{1.0, 1.0}});
  LayerMasks again{{1.0, 0.0}};
  (void)merge_binarized(again, {{0.99, 0.01}});
  CHECK(again == LayerMasks{{1.0, 0.0}});
}

TEST_CASE("consolidate_mask is monotone and idempotent") {
  Toy t;
  t.net.add_task(t.rng);
  t.net.add_task(t.rng);
  consolidate_mask(t.net, 0);
  const LayerMasks after_first = t.net.cumulative_mask();
  consolidate_mask(t.net, 0);
  CHECK(t.net.cumulative_mask() == after_first);
  consolidate_mask(t.net, 1);
  for (std::size_t l = 0; l < 2; ++l) {
    for (std::size_t i = 0; i < after_first[l].size(); ++i) {
      CHECK(t.net.cumulative_mask()[l][i] >= after_first[l][i]);
    }
  }
  CHECK(t.net.inference_mask(0) == t.net.task_mask(0));
  CHECK_THROWS_AS(consolidate_mask(t.net, 5), Error);
}

TEST_CASE("hat_reg_loss examples") {
  Toy t;
  t.net.add_task(t.rng);
  for (std::size_t l = 0; l < 2; ++l) {
    std::fill(t.net.embedding(0, l).begin(), t.net.embedding(0, l).end(), -6.0);
  }
  CHECK(hat_reg_loss(t.net, 0, 400.0) == doctest::Approx(0.0).epsilon(1e-12));
  for (std::size_t l = 0; l < 2; ++l) {
    std::fill(t.net.embedding(0, l).begin(), t.net.embedding(0, l).end(), 0.0);
  }
  CHECK(hat_reg_loss(t.net, 0, 1.0) == doctest::Approx(0.5));

  Rng rng(2);
  HatMlp small(1, {2, 2}, 400.0, rng);
  small.add_task(rng);
  small.set_cumulative_mask({{1.0, 0.0}, {0.0, 0.5}});
  small.embedding(0, 0) = {0.0, 1.0};
  small.embedding(0, 1) = {-1.0, 2.0};
  const double a01 = sigmoid(1.0), a10 = sigmoid(-1.0), a11 = sigmoid(2.0);
  const double num = 0.5 * 0.0 + a01 * 1.0 + a10 * 1.0 + a11 * 0.5;
  const double den = 0.0 + 1.0 + 1.0 + 0.5;
  CHECK(hat_reg_loss(small, 0, 1.0) == doctest::Approx(num / den).epsilon(1e-14));
}

TEST_CASE("anneal_s schedule") {
  CHECK(anneal_s(1, 100, 400.0) == doctest::Approx(0.0025).epsilon(1e-15));
  CHECK(anneal_s(100, 100, 400.0) == 400.0);
  CHECK(anneal_s(50, 100, 400.0) == doctest::Approx(0.0025 + (400.0 - 0.0025) * 49.0 / 99.0));
  CHECK(anneal_s(1, 1, 400.0) == 400.0);
  CHECK_THROWS_AS(anneal_s(0, 10, 400.0), Error);
}

TEST_CASE("zero interference: protected task logits do not move") {
  Rng rng(31);
  HatMlp net(4, {16, 16}, 400.0, rng);
  std::vector<TaskHead> heads;
  net.add_task(rng);
  heads.push_back(make_head(16, 2, rng));
  consolidate_mask(net, 0);
  std::vector<Vector> probes;
  for (int i = 0; i < 40; ++i) probes.push_back({rng.normal(), rng.normal(), rng.normal(), rng.normal()});
  std::vector<Vector> before;
  for (const Vector& x : probes) before.push_back(forward(net, heads[0], x, net.inference_mask(0)).logits);

  net.add_task(rng);
  heads.push_back(make_head(16, 2, rng));
  MomentumState m = Gradients::zeros_like(net, heads[1]);
  for (int step = 0; step < 200; ++step) {
    std::vector<TrainingExample> batch;
    std::vector<Vector> xs;
    for (int i = 0; i < 8; ++i) xs.push_back({rng.normal(), rng.normal(), rng.normal(), rng.normal()});
    for (int i = 0; i < 8; ++i) batch.push_back({xs[i], i % 3});
    Gradients g = Gradients::zeros_like(net, heads[1]);
    const double s = anneal_s(1 + step % 20, 20, 400.0);
    (void)loss_and_gradients(net, heads[1], batch, LossOptions{std::size_t{1}, s, 0.75, 3}, g);
    masked_gradient_update(net, heads[1], g, std::size_t{1}, SgdStep{0.05, 0.9}, m);
  }
  double drift = 0.0;
  for (std::size_t i = 0; i < probes.size(); ++i) {
    const Vector now = forward(net, heads[0], probes[i], net.inference_mask(0)).logits;
    for (std::size_t j = 0; j < now.size(); ++j) drift = std::max(drift, std::abs(now[j] - before[i][j]));
  }
  CHECK(drift <= 1e-3);
}
