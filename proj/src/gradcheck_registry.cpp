#include "darkforge/gradcheck_registry.hpp"

#include <algorithm>
#include <chrono>
#include <numeric>
#include <random>

#include "darkforge/models.hpp"
#include "darkforge/nn_blocks.hpp"
#include "darkforge/tensor.hpp"
#include "darkforge/training.hpp"

namespace darkforge {

namespace {

constexpr std::size_t kCoordsPerTensor = 16;

Tensor uniform(const Shape& shape, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = u(rng);
  Tensor t = Tensor::from_data(shape, std::move(v));
  t.set_requires_grad(true);
  return t;
}

/// Magnitudes in [0.05, 1] with random sign, clear of the kinks at zero.
Tensor off_kink(const Shape& shape, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> mag(0.05, 1.0);
  std::bernoulli_distribution sign(0.5);
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = sign(rng) ? mag(rng) : -mag(rng);
  Tensor t = Tensor::from_data(shape, std::move(v));
  t.set_requires_grad(true);
  return t;
}

/// All values distinct and at least 0.01 apart, so pooling winners are stable.
Tensor distinct(const Shape& shape, std::mt19937_64& rng) {
  std::vector<double> v(shape_numel(shape));
  std::iota(v.begin(), v.end(), 0.0);
  std::shuffle(v.begin(), v.end(), rng);
  for (double& x : v) x = x * 0.01 - 0.5;
  Tensor t = Tensor::from_data(shape, std::move(v));
  t.set_requires_grad(true);
  return t;
}

/// Random linear functional of `out`, so every output element matters.
struct Probe {
  Tensor weights;
  Tensor operator()(const Tensor& out) const { return reduce_sum(mul(out, weights)); }
};

Probe make_probe(const Shape& shape, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = u(rng);
  return Probe{Tensor::from_data(shape, std::move(v))};
}

/// Probe shaped like fn's output, for an unchanged closure.
template <class Fn>
double check(Fn fn, const std::vector<Tensor>& wrt, std::uint64_t seed, std::size_t coords = 0) {
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  Shape out_shape;
  {
    NoGradGuard ng;
    out_shape = fn().shape();
  }
  const Probe probe = make_probe(out_shape, rng);
  return grad_check([&] { return probe(fn()); }, wrt, 1e-5, coords);
}

nn::Conv2dParams conv_params(std::size_t c_in, std::size_t c_out, std::size_t k, std::size_t stride,
                             std::size_t pad, std::mt19937_64& rng) {
  nn::Conv2dParams p = nn::make_conv(c_in, c_out, k, stride, pad, rng);
  p.bias = uniform(p.bias.shape(), rng, -0.5, 0.5);
  return p;
}

std::vector<GradCheckCase> build_registry() {
  std::vector<GradCheckCase> cases;

  cases.push_back({"tensor_ops", [] {
                     std::mt19937_64 rng(1);
                     Tensor a = off_kink({2, 3, 4}, rng), b = uniform({2, 3, 4}, rng, -1, 1);
                     return check(
                         [&] {
                           Tensor t = add(mul(a, b), scale(square(sub(a, b)), 0.5));
                           return add(abs(a), clamp(t, -0.9, 5.0));
                         },
                         {a, b}, 1);
                   }});
  cases.push_back({"conv2d", [] {
                     std::mt19937_64 rng(2);
                     Tensor x = uniform({2, 3, 6, 7}, rng, -1, 1);
                     nn::Conv2dParams p = conv_params(3, 4, 3, 1, 1, rng);
                     return check([&] { return nn::conv2d(x, p); }, {x, p.weight, p.bias}, 2);
                   }});
  cases.push_back({"conv2d_stride2", [] {
                     std::mt19937_64 rng(3);
                     Tensor x = uniform({1, 2, 8, 8}, rng, -1, 1);
                     nn::Conv2dParams p = conv_params(2, 3, 3, 2, 1, rng);
                     return check([&] { return nn::conv2d(x, p); }, {x, p.weight, p.bias}, 3);
                   }});
  cases.push_back({"transposed_conv2", [] {
                     std::mt19937_64 rng(4);
                     Tensor x = uniform({2, 3, 4, 5}, rng, -1, 1);
                     nn::Conv2dParams p = nn::make_transposed_conv2(3, 2, rng);
                     p.bias = uniform(p.bias.shape(), rng, -0.5, 0.5);
                     return check([&] { return nn::transposed_conv2(x, p); }, {x, p.weight, p.bias}, 4);
                   }});
  cases.push_back({"maxpool2", [] {
                     std::mt19937_64 rng(5);
                     Tensor x = distinct({2, 3, 6, 8}, rng);
                     return check([&] { return nn::maxpool2(x); }, {x}, 5);
                   }});
  cases.push_back({"leaky_relu", [] {
                     std::mt19937_64 rng(6);
                     Tensor x = off_kink({2, 3, 5, 5}, rng);
                     return check([&] { return nn::leaky_relu(x); }, {x}, 6);
                   }});
  cases.push_back({"relu", [] {
                     std::mt19937_64 rng(7);
                     Tensor x = off_kink({2, 3, 5, 5}, rng);
                     return check([&] { return nn::relu(x); }, {x}, 7);
                   }});
  cases.push_back({"sigmoid", [] {
                     std::mt19937_64 rng(8);
                     Tensor x = uniform({2, 3, 5, 5}, rng, -6, 6);
                     return check([&] { return nn::sigmoid(x); }, {x}, 8);
                   }});
  cases.push_back({"depth_to_space", [] {
                     std::mt19937_64 rng(9);
                     Tensor x = uniform({2, 12, 3, 4}, rng, -1, 1);
                     return check([&] { return nn::depth_to_space(x, 2); }, {x}, 9);
                   }});
  cases.push_back({"space_to_depth", [] {
                     std::mt19937_64 rng(10);
                     Tensor x = uniform({2, 3, 6, 4}, rng, -1, 1);
                     return check([&] { return nn::space_to_depth(x, 2); }, {x}, 10);
                   }});
  cases.push_back({"concat_channels", [] {
                     std::mt19937_64 rng(11);
                     Tensor a = uniform({2, 2, 3, 3}, rng, -1, 1), b = uniform({2, 3, 3, 3}, rng, -1, 1);
                     return check([&] { return nn::concat_channels({a, b, a}); }, {a, b}, 11);
                   }});
  cases.push_back({"global_avg_pool", [] {
                     std::mt19937_64 rng(12);
                     Tensor x = uniform({2, 4, 3, 5}, rng, -1, 1);
                     return check([&] { return nn::global_avg_pool(x); }, {x}, 12);
                   }});
  cases.push_back({"linear", [] {
                     std::mt19937_64 rng(13);
                     Tensor x = uniform({3, 5}, rng, -1, 1), w = uniform({4, 5}, rng, -1, 1),
                            b = uniform({4}, rng, -1, 1);
                     return check([&] { return nn::linear(x, w, b); }, {x, w, b}, 13);
                   }});
  cases.push_back({"scale_channels", [] {
                     std::mt19937_64 rng(14);
                     Tensor x = uniform({2, 3, 4, 4}, rng, -1, 1), s = uniform({2, 3}, rng, 0, 1);
                     return check([&] { return nn::scale_channels(x, s); }, {x, s}, 14);
                   }});
  cases.push_back({"channel_attention", [] {
                     std::mt19937_64 rng(15);
                     Tensor x = uniform({2, 8, 4, 4}, rng, -1, 1);
                     nn::CAParams p = nn::make_channel_attention(8, nn::ca_reduction(8), rng);
                     p.b_reduce = uniform(p.b_reduce.shape(), rng, 0.2, 0.6);
                     p.b_expand = uniform(p.b_expand.shape(), rng, -0.5, 0.5);
                     return check([&] { return nn::channel_attention(x, p); },
                                  {x, p.w_reduce, p.b_reduce, p.w_expand, p.b_expand}, 15);
                   }});
  cases.push_back({"upsample_bilinear2x", [] {
                     std::mt19937_64 rng(16);
                     Tensor x = uniform({2, 2, 3, 4}, rng, -1, 1);
                     return check([&] { return nn::upsample_bilinear2x(x); }, {x}, 16);
                   }});
  cases.push_back({"l1_loss", [] {
                     std::mt19937_64 rng(17);
                     Tensor target = uniform({2, 3, 4, 4}, rng, 0, 1);
                     Tensor delta = off_kink({2, 3, 4, 4}, rng);
                     Tensor pred = Tensor::from_data(target.shape(), [&] {
                       std::vector<double> v(target.numel());
                       for (std::size_t i = 0; i < v.size(); ++i) v[i] = target.data()[i] + delta.data()[i];
                       return v;
                     }());
                     pred.set_requires_grad(true);
                     return grad_check([&] { return l1_loss(pred, target); }, {pred, target});
                   }});
  cases.push_back({"l2_loss", [] {
                     std::mt19937_64 rng(18);
                     Tensor pred = uniform({2, 3, 4, 4}, rng, 0, 1), target = uniform({2, 3, 4, 4}, rng, 0, 1);
                     return grad_check([&] { return l2_loss(pred, target); }, {pred, target});
                   }});
  cases.push_back({"dbf_toy", [] {
                     ModelConfig cfg;
                     cfg.base_channels = 4;
                     cfg.depth = 2;
                     const ModelParams params = build_params(cfg, 19);
                     std::mt19937_64 rng(19);
                     Tensor color = uniform({1, 4, 8, 8}, rng, 0, 1);
                     std::vector<Tensor> wrt = params.tensors();
                     wrt.push_back(color);
                     return check([&] { return dbf_forward(color, params, cfg, Mode::Train); }, wrt, 19,
                                  kCoordsPerTensor);
                   }});
  cases.push_back({"dble_toy", [] {
                     ModelConfig cfg;
                     cfg.base_channels = 4;
                     cfg.depth = 2;
                     const ModelParams params = build_params(cfg, 20);
                     std::mt19937_64 rng(20);
                     Tensor color = uniform({1, 4, 8, 8}, rng, 0, 1);
                     Tensor mono = uniform({1, 1, 16, 16}, rng, 0, 1);
                     std::vector<Tensor> wrt = params.tensors();
                     wrt.push_back(color);
                     wrt.push_back(mono);
                     return check([&] { return dble_forward(color, mono, params, cfg, Mode::Train); }, wrt, 20,
                                  kCoordsPerTensor);
                   }});
  return cases;
}

}  // namespace

const std::vector<GradCheckCase>& gradcheck_registry() {
  static const std::vector<GradCheckCase> cases = build_registry();
  return cases;
}

std::vector<GradCheckResult> run_gradchecks(const std::vector<GradCheckCase>& cases, double tolerance) {
  std::vector<GradCheckResult> out;
  for (const auto& c : cases) {
    const auto t0 = std::chrono::steady_clock::now();
    GradCheckResult r;
    r.name = c.name;
    r.max_rel_error = c.run();
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    r.passed = r.max_rel_error < tolerance;
    out.push_back(r);
  }
  return out;
}

}  // namespace darkforge
