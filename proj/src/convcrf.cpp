#include "seggan/convcrf.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "seggan/error.hpp"
#include "seggan/ops.hpp"

namespace seggan {

ConvCrfConfig ConvCrfConfig::defaults(int filter_size, int iterations) {
  ConvCrfConfig c;
  c.filter_size = filter_size;
  c.iterations = iterations;
  c.theta_alpha = filter_size;
  c.theta_beta = 0.15;
  c.theta_gamma = filter_size / 2.0;
  return c;
}

void ConvCrfConfig::validate() const {
  if (filter_size < 1 || filter_size % 2 == 0) {
    throw ConfigError("convcrf: filter_size must be odd and positive, got " +
                      std::to_string(filter_size));
  }
  if (!(theta_alpha > 0.0) || !(theta_beta > 0.0) || !(theta_gamma > 0.0)) {
    throw ConfigError("convcrf: bandwidths must be positive");
  }
  if (iterations < 1) {
    throw ConfigError("convcrf: iterations must be >= 1");
  }
}

CrfParams CrfParams::potts(int num_classes) {
  CrfParams p;
  p.num_classes = num_classes;
  p.compat.assign(static_cast<std::size_t>(num_classes) * num_classes, 1.0);
  for (int c = 0; c < num_classes; ++c) p.compat[c * num_classes + c] = 0.0;
  return p;
}

GaussianKernelStack build_gaussian_kernels(const Tensor& image,
                                           const ConvCrfConfig& config) {
  config.validate();
  if (image.n() != 1 || image.c() != 3) {
    throw ConfigError("convcrf: image must be [1,3,H,W], got " +
                      image.shape().str());
  }
  const int h = image.h();
  const int w = image.w();
  const int k = config.filter_size;
  if (k > 2 * std::max(h, w) - 1) {
    throw ConfigError("convcrf: filter_size " + std::to_string(k) +
                      " too large for image " + image.shape().str());
  }
  for (double v : image.data()) {
    if (!(v >= 0.0 && v <= 1.0)) {
      throw InputError("convcrf: image values must lie in [0,1]");
    }
  }
  GaussianKernelStack ks;
  ks.filter_size = k;
  ks.height = h;
  ks.width = w;
  ks.appearance.assign(ks.offsets() * ks.pixels(), 0.0);
  ks.smoothness.assign(ks.offsets() * ks.pixels(), 0.0);
  const int r = k / 2;
  const double a2 = 2.0 * config.theta_alpha * config.theta_alpha;
  const double b2 = 2.0 * config.theta_beta * config.theta_beta;
  const double g2 = 2.0 * config.theta_gamma * config.theta_gamma;
  const std::size_t plane = ks.pixels();

  for (int dy = -r; dy <= r; ++dy) {
    for (int dx = -r; dx <= r; ++dx) {
      if (dy == 0 && dx == 0) continue;
      const std::size_t m = static_cast<std::size_t>(dy + r) * k + (dx + r);
      const double dist2 = dy * dy + dx * dx;
      const double spatial_a = dist2 / a2;
      const double smooth = std::exp(-dist2 / g2);
      double* app = ks.appearance.data() + m * plane;
      double* sm = ks.smoothness.data() + m * plane;
      for (int y = std::max(0, -dy); y < std::min(h, h - dy); ++y) {
        for (int x = std::max(0, -dx); x < std::min(w, w - dx); ++x) {
          double color2 = 0.0;
          for (int c = 0; c < 3; ++c) {
            const double d = image.at(0, c, y, x) - image.at(0, c, y + dy, x + dx);
            color2 += d * d;
          }
          const std::size_t i = static_cast<std::size_t>(y) * w + x;
          app[i] = std::exp(-spatial_a - color2 / b2);
          sm[i] = smooth;
        }
      }
    }
  }
  return ks;
}

namespace {

void check_field(const Tensor& q, const GaussianKernelStack& ks,
                 const CrfParams& params) {
  if (q.n() != 1 || q.h() != ks.height || q.w() != ks.width) {
    throw ConfigError("convcrf: field " + q.shape().str() +
                      " does not match kernel stack " +
                      std::to_string(ks.height) + "x" + std::to_string(ks.width));
  }
  if (q.c() != params.num_classes ||
      params.compat.size() != static_cast<std::size_t>(q.c()) * q.c()) {
    throw ConfigError("convcrf: compatibility matrix does not match " +
                      std::to_string(q.c()) + " classes");
  }
}

// out_i(c) += Σ_m K[m][i] · in_{i+m}(c) over in-image offsets.
void gather(const Tensor& in, const std::vector<double>& kernel,
            const GaussianKernelStack& ks, Tensor& out) {
  const int r = ks.radius();
  const int k = ks.filter_size;
  const int h = ks.height;
  const int w = ks.width;
  const std::size_t plane = ks.pixels();
  for (int dy = -r; dy <= r; ++dy) {
    for (int dx = -r; dx <= r; ++dx) {
      if (dy == 0 && dx == 0) continue;
      const std::size_t m = static_cast<std::size_t>(dy + r) * k + (dx + r);
      const double* km = kernel.data() + m * plane;
      const int y0 = std::max(0, -dy), y1 = std::min(h, h - dy);
      const int x0 = std::max(0, -dx), x1 = std::min(w, w - dx);
      for (int c = 0; c < in.c(); ++c) {
        const double* src = in.plane(0, c);
        double* dst = out.plane(0, c);
        for (int y = y0; y < y1; ++y) {
          const std::size_t row = static_cast<std::size_t>(y) * w;
          const std::size_t nrow = static_cast<std::size_t>(y + dy) * w + dx;
          for (int x = x0; x < x1; ++x) {
            dst[row + x] += km[row + x] * src[nrow + x];
          }
        }
      }
    }
  }
}

// Adjoint of gather: out_{i+m}(c) += K[m][i] · in_i(c).
void scatter(const Tensor& in, const std::vector<double>& kernel,
             const GaussianKernelStack& ks, Tensor& out) {
  const int r = ks.radius();
  const int k = ks.filter_size;
  const int h = ks.height;
  const int w = ks.width;
  const std::size_t plane = ks.pixels();
  for (int dy = -r; dy <= r; ++dy) {
    for (int dx = -r; dx <= r; ++dx) {
      if (dy == 0 && dx == 0) continue;
      const std::size_t m = static_cast<std::size_t>(dy + r) * k + (dx + r);
      const double* km = kernel.data() + m * plane;
      const int y0 = std::max(0, -dy), y1 = std::min(h, h - dy);
      const int x0 = std::max(0, -dx), x1 = std::min(w, w - dx);
      for (int c = 0; c < in.c(); ++c) {
        const double* src = in.plane(0, c);
        double* dst = out.plane(0, c);
        for (int y = y0; y < y1; ++y) {
          const std::size_t row = static_cast<std::size_t>(y) * w;
          const std::size_t nrow = static_cast<std::size_t>(y + dy) * w + dx;
          for (int x = x0; x < x1; ++x) {
            dst[nrow + x] += km[row + x] * src[row + x];
          }
        }
      }
    }
  }
}

std::vector<double> mixed_kernel(const GaussianKernelStack& ks,
                                 const CrfParams& params) {
  std::vector<double> mix(ks.appearance.size());
  const double wa = params.kernel_weights[0];
  const double ws = params.kernel_weights[1];
  for (std::size_t i = 0; i < mix.size(); ++i) {
    mix[i] = wa * ks.appearance[i] + ws * ks.smoothness[i];
  }
  return mix;
}

// logits_i(c) = unary_i(c) - Σ_c' μ(c', c) M_i(c')
Tensor compat_logits(const Tensor& unary, const Tensor& messages,
                     const CrfParams& params) {
  const int classes = unary.c();
  const std::size_t plane = unary.shape().plane();
  Tensor z = unary;
  for (int to = 0; to < classes; ++to) {
    double* dst = z.plane(0, to);
    for (int from = 0; from < classes; ++from) {
      const double mu = params.mu(from, to);
      if (mu == 0.0) continue;
      const double* m = messages.plane(0, from);
      for (std::size_t p = 0; p < plane; ++p) dst[p] -= mu * m[p];
    }
  }
  return z;
}

Tensor step_with_kernel(const Tensor& unary, const Tensor& q,
                        const std::vector<double>& mix,
                        const GaussianKernelStack& ks,
                        const CrfParams& params) {
  Tensor messages(q.shape());
  gather(q, mix, ks, messages);
  return softmax_channels(compat_logits(unary, messages, params));
}

}  // namespace

Tensor message_pass(const Tensor& q, const GaussianKernelStack& kernels,
                    const CrfParams& params) {
  check_field(q, kernels, params);
  Tensor messages(q.shape());
  gather(q, mixed_kernel(kernels, params), kernels, messages);
  return messages;
}

Tensor mean_field_step(const Tensor& unary, const Tensor& q,
                       const GaussianKernelStack& kernels,
                       const CrfParams& params) {
  check_field(q, kernels, params);
  require_same_shape(unary.shape(), q.shape(), "mean_field_step");
  return step_with_kernel(unary, q, mixed_kernel(kernels, params), kernels,
                          params);
}

Tensor clamped_log(const Tensor& prob) {
  Tensor out(prob.shape());
  for (std::size_t i = 0; i < prob.size(); ++i) {
    out[i] = std::log(std::max(prob[i], kLogEpsilon));
  }
  return out;
}

Tensor convcrf_forward(const Tensor& image, const Tensor& prob,
                       const ConvCrfConfig& config, const CrfParams& params) {
  return convcrf_forward(build_gaussian_kernels(image, config), prob, config,
                         params, nullptr);
}

Tensor convcrf_forward(const GaussianKernelStack& kernels, const Tensor& prob,
                       const ConvCrfConfig& config, const CrfParams& params,
                       ConvCrfCache* cache) {
  config.validate();
  check_field(prob, kernels, params);
  const Tensor unary = clamped_log(prob);
  const std::vector<double> mix = mixed_kernel(kernels, params);
  Tensor q = prob;
  if (cache != nullptr) {
    cache->prob = prob;
    cache->iterates.clear();
    cache->iterates.push_back(q);
  }
  for (int t = 0; t < config.iterations; ++t) {
    q = step_with_kernel(unary, q, mix, kernels, params);
    if (cache != nullptr) cache->iterates.push_back(q);
  }
  return q;
}

ConvCrfGrads convcrf_backward(const Tensor& grad_out, const ConvCrfCache& cache,
                              const GaussianKernelStack& kernels,
                              const CrfParams& params) {
  const Tensor& prob = cache.prob;
  require_same_shape(grad_out.shape(), prob.shape(), "convcrf_backward");
  const int classes = prob.c();
  const std::size_t plane = prob.shape().plane();
  const std::vector<double> mix = mixed_kernel(kernels, params);

  ConvCrfGrads g;
  g.compat.assign(params.compat.size(), 0.0);
  Tensor grad_unary(prob.shape());
  Tensor grad_q = grad_out;

  for (std::size_t t = cache.iterates.size() - 1; t > 0; --t) {
    const Tensor& q_prev = cache.iterates[t - 1];
    const Tensor grad_z = softmax_channels_backward(grad_q, cache.iterates[t]);
    grad_unary += grad_z;

    Tensor app_msg(prob.shape());
    Tensor smooth_msg(prob.shape());
    gather(q_prev, kernels.appearance, kernels, app_msg);
    gather(q_prev, kernels.smoothness, kernels, smooth_msg);

    Tensor grad_m(prob.shape());
    for (int from = 0; from < classes; ++from) {
      double* gm = grad_m.plane(0, from);
      const double* ma = app_msg.plane(0, from);
      const double* ms = smooth_msg.plane(0, from);
      for (int to = 0; to < classes; ++to) {
        const double* gz = grad_z.plane(0, to);
        const double mu = params.mu(from, to);
        double acc = 0.0;
        for (std::size_t p = 0; p < plane; ++p) {
          const double m = params.kernel_weights[0] * ma[p] +
                           params.kernel_weights[1] * ms[p];
          acc += m * gz[p];
          gm[p] -= mu * gz[p];
        }
        g.compat[from * classes + to] -= acc;
      }
    }
    for (int c = 0; c < classes; ++c) {
      const double* gm = grad_m.plane(0, c);
      const double* ma = app_msg.plane(0, c);
      const double* ms = smooth_msg.plane(0, c);
      for (std::size_t p = 0; p < plane; ++p) {
        g.kernel_weights[0] += gm[p] * ma[p];
        g.kernel_weights[1] += gm[p] * ms[p];
      }
    }
    Tensor next(prob.shape());
    scatter(grad_m, mix, kernels, next);
    grad_q = std::move(next);
  }

  g.prob = std::move(grad_q);
  for (std::size_t i = 0; i < prob.size(); ++i) {
    if (prob[i] > kLogEpsilon) g.prob[i] += grad_unary[i] / prob[i];
  }
  return g;
}

Tensor brute_force_oracle(const Tensor& image, const Tensor& prob,
                          const ConvCrfConfig& config, const CrfParams& params) {
  config.validate();
  const int h = prob.h();
  const int w = prob.w();
  const int classes = prob.c();
  const int r = config.filter_size / 2;
  const int pixels = h * w;

  std::vector<double> unary(static_cast<std::size_t>(pixels) * classes);
  std::vector<double> q(unary.size());
  for (int i = 0; i < pixels; ++i) {
    for (int c = 0; c < classes; ++c) {
      const double p = prob.at(0, c, i / w, i % w);
      q[i * classes + c] = p;
      unary[i * classes + c] = std::log(p < kLogEpsilon ? kLogEpsilon : p);
    }
  }

  for (int t = 0; t < config.iterations; ++t) {
    std::vector<double> next(q.size());
    for (int i = 0; i < pixels; ++i) {
      const int yi = i / w, xi = i % w;
      std::vector<double> msg(classes, 0.0);
      for (int j = 0; j < pixels; ++j) {
        const int yj = j / w, xj = j % w;
        if (j == i || std::abs(yi - yj) > r || std::abs(xi - xj) > r) continue;
        const double pos2 = double(yi - yj) * (yi - yj) + double(xi - xj) * (xi - xj);
        double col2 = 0.0;
        for (int ch = 0; ch < 3; ++ch) {
          const double d = image.at(0, ch, yi, xi) - image.at(0, ch, yj, xj);
          col2 += d * d;
        }
        const double ka =
            std::exp(-pos2 / (2 * config.theta_alpha * config.theta_alpha) -
                     col2 / (2 * config.theta_beta * config.theta_beta));
        const double kg =
            std::exp(-pos2 / (2 * config.theta_gamma * config.theta_gamma));
        const double kij =
            params.kernel_weights[0] * ka + params.kernel_weights[1] * kg;
        for (int c = 0; c < classes; ++c) msg[c] += kij * q[j * classes + c];
      }
      std::vector<double> logit(classes);
      double mx = -INFINITY;
      for (int c = 0; c < classes; ++c) {
        double pairwise = 0.0;
        for (int c2 = 0; c2 < classes; ++c2) {
          pairwise += params.compat[c2 * classes + c] * msg[c2];
        }
        logit[c] = unary[i * classes + c] - pairwise;
        mx = std::max(mx, logit[c]);
      }
      double z = 0.0;
      for (int c = 0; c < classes; ++c) z += std::exp(logit[c] - mx);
      for (int c = 0; c < classes; ++c) {
        next[i * classes + c] = std::exp(logit[c] - mx) / z;
      }
    }
    q = std::move(next);
  }

  Tensor out(prob.shape());
  for (int i = 0; i < pixels; ++i) {
    for (int c = 0; c < classes; ++c) out.at(0, c, i / w, i % w) = q[i * classes + c];
  }
  return out;
}

}  // namespace seggan
