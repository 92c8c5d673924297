#include "seggan/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <Eigen/Core>

#include "seggan/error.hpp"

namespace seggan {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

// Column buffer for one sample: rows are (c, ky, kx), columns output pixels.
void im2col(const double* in, int channels, int height, int width,
            const ConvSpec& s, int out_h, int out_w, double* col) {
  const std::size_t plane = static_cast<std::size_t>(out_h) * out_w;
  for (int c = 0; c < channels; ++c) {
    const double* src = in + static_cast<std::size_t>(c) * height * width;
    for (int ky = 0; ky < s.kernel; ++ky) {
      for (int kx = 0; kx < s.kernel; ++kx) {
        double* row = col;
        col += plane;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * s.stride - s.padding + ky * s.dilation;
          double* dst = row + static_cast<std::size_t>(oy) * out_w;
          if (iy < 0 || iy >= height) {
            std::fill_n(dst, out_w, 0.0);
            continue;
          }
          const double* line = src + static_cast<std::size_t>(iy) * width;
          const int x0 = kx * s.dilation - s.padding;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * s.stride + x0;
            dst[ox] = (ix >= 0 && ix < width) ? line[ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im(const double* col, int channels, int height, int width,
            const ConvSpec& s, int out_h, int out_w, double* in) {
  const std::size_t plane = static_cast<std::size_t>(out_h) * out_w;
  for (int c = 0; c < channels; ++c) {
    double* dst = in + static_cast<std::size_t>(c) * height * width;
    for (int ky = 0; ky < s.kernel; ++ky) {
      for (int kx = 0; kx < s.kernel; ++kx) {
        const double* row = col;
        col += plane;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * s.stride - s.padding + ky * s.dilation;
          if (iy < 0 || iy >= height) continue;
          double* line = dst + static_cast<std::size_t>(iy) * width;
          const double* g = row + static_cast<std::size_t>(oy) * out_w;
          const int x0 = kx * s.dilation - s.padding;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * s.stride + x0;
            if (ix >= 0 && ix < width) line[ix] += g[ox];
          }
        }
      }
    }
  }
}

void check_conv_inputs(const Tensor& input, const Tensor& weight,
                       const ConvSpec& spec) {
  spec.validate();
  if (input.c() != spec.in_channels) {
    throw ConfigError("conv2d: input shape " + input.shape().str() +
                      " has " + std::to_string(input.c()) +
                      " channels, spec expects " +
                      std::to_string(spec.in_channels));
  }
  const Shape expected{spec.out_channels, spec.in_channels, spec.kernel,
                       spec.kernel};
  if (!(weight.shape() == expected)) {
    throw ConfigError("conv2d: weight shape " + weight.shape().str() +
                      " does not match expected " + expected.str() +
                      " for input " + input.shape().str());
  }
}

bool is_pointwise(const ConvSpec& s) {
  return s.kernel == 1 && s.stride == 1 && s.padding == 0;
}

}  // namespace

int ConvSpec::output_size(int size) const {
  return (size + 2 * padding - dilation * (kernel - 1) - 1) / stride + 1;
}

Shape ConvSpec::output_shape(const Shape& input) const {
  const int oh = output_size(input.h);
  const int ow = output_size(input.w);
  if (input.h + 2 * padding - dilation * (kernel - 1) - 1 < 0 ||
      input.w + 2 * padding - dilation * (kernel - 1) - 1 < 0 || oh < 1 ||
      ow < 1) {
    throw ConfigError("conv2d: input " + input.str() +
                      " too small for kernel " + std::to_string(kernel) +
                      " dilation " + std::to_string(dilation));
  }
  return {input.n, out_channels, oh, ow};
}

void ConvSpec::validate() const {
  if (in_channels < 1 || out_channels < 1 || kernel < 1 || kernel % 2 == 0 ||
      stride < 1 || padding < 0 || dilation < 1) {
    throw ConfigError("invalid ConvSpec: in=" + std::to_string(in_channels) +
                      " out=" + std::to_string(out_channels) +
                      " kernel=" + std::to_string(kernel) +
                      " stride=" + std::to_string(stride) +
                      " padding=" + std::to_string(padding) +
                      " dilation=" + std::to_string(dilation));
  }
}

Tensor conv2d_forward(const Tensor& input, const Tensor& weight,
                      std::span<const double> bias, const ConvSpec& spec) {
  check_conv_inputs(input, weight, spec);
  if (!bias.empty() && bias.size() != static_cast<std::size_t>(spec.out_channels)) {
    throw ConfigError("conv2d: bias length " + std::to_string(bias.size()) +
                      " does not match out_channels " +
                      std::to_string(spec.out_channels));
  }
  const Shape out_shape = spec.output_shape(input.shape());
  Tensor out(out_shape);
  const int rows = spec.in_channels * spec.kernel * spec.kernel;
  const std::size_t plane = out_shape.plane();
  std::vector<double> col;
  if (!is_pointwise(spec)) col.resize(rows * plane);
  ConstMatrixMap wmat(weight.data().data(), spec.out_channels, rows);

  for (int n = 0; n < input.n(); ++n) {
    const double* cols = input.plane(n, 0);
    if (!is_pointwise(spec)) {
      im2col(input.plane(n, 0), input.c(), input.h(), input.w(), spec,
             out_shape.h, out_shape.w, col.data());
      cols = col.data();
    }
    ConstMatrixMap cmat(cols, rows, static_cast<Eigen::Index>(plane));
    MatrixMap omat(out.plane(n, 0), spec.out_channels,
                   static_cast<Eigen::Index>(plane));
    omat.noalias() = wmat * cmat;
    if (!bias.empty()) {
      for (int oc = 0; oc < spec.out_channels; ++oc) omat.row(oc).array() += bias[oc];
    }
  }
  return out;
}

ConvGrads conv2d_backward(const Tensor& grad_out, const Tensor& input,
                          const Tensor& weight, const ConvSpec& spec) {
  check_conv_inputs(input, weight, spec);
  const Shape out_shape = spec.output_shape(input.shape());
  require_same_shape(grad_out.shape(), out_shape, "conv2d_backward grad_out");

  ConvGrads g{Tensor(input.shape()), Tensor(weight.shape()),
              std::vector<double>(spec.out_channels, 0.0)};
  const int rows = spec.in_channels * spec.kernel * spec.kernel;
  const std::size_t plane = out_shape.plane();
  const bool pointwise = is_pointwise(spec);
  std::vector<double> col(pointwise ? 0 : rows * plane);
  std::vector<double> gcol(rows * plane);
  ConstMatrixMap wmat(weight.data().data(), spec.out_channels, rows);
  MatrixMap gwmat(g.weight.data().data(), spec.out_channels, rows);
  MatrixMap gcolmat(gcol.data(), rows, static_cast<Eigen::Index>(plane));

  for (int n = 0; n < input.n(); ++n) {
    const double* cols = input.plane(n, 0);
    if (!pointwise) {
      im2col(input.plane(n, 0), input.c(), input.h(), input.w(), spec,
             out_shape.h, out_shape.w, col.data());
      cols = col.data();
    }
    ConstMatrixMap cmat(cols, rows, static_cast<Eigen::Index>(plane));
    ConstMatrixMap gmat(grad_out.plane(n, 0), spec.out_channels,
                        static_cast<Eigen::Index>(plane));
    gwmat.noalias() += gmat * cmat.transpose();
    for (int oc = 0; oc < spec.out_channels; ++oc) {
      const double* row = grad_out.plane(n, oc);
      double sum = 0.0;
      for (std::size_t i = 0; i < plane; ++i) sum += row[i];
      g.bias[oc] += sum;
    }
    gcolmat.noalias() = wmat.transpose() * gmat;
    if (pointwise) {
      double* gi = g.input.plane(n, 0);
      for (std::size_t i = 0; i < gcol.size(); ++i) gi[i] += gcol[i];
    } else {
      col2im(gcol.data(), input.c(), input.h(), input.w(), spec, out_shape.h,
             out_shape.w, g.input.plane(n, 0));
    }
  }
  return g;
}

Tensor leaky_relu_forward(const Tensor& x, double slope) {
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    y[i] = x[i] > 0.0 ? x[i] : slope * x[i];
  }
  return y;
}

Tensor leaky_relu_backward(const Tensor& grad_out, const Tensor& x,
                           double slope) {
  require_same_shape(grad_out.shape(), x.shape(), "leaky_relu_backward");
  Tensor g(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    g[i] = x[i] > 0.0 ? grad_out[i] : slope * grad_out[i];
  }
  return g;
}

Tensor relu_forward(const Tensor& x) { return leaky_relu_forward(x, 0.0); }

Tensor relu_backward(const Tensor& grad_out, const Tensor& x) {
  return leaky_relu_backward(grad_out, x, 0.0);
}

Tensor batch_norm_forward(const Tensor& x, std::span<const double> scale,
                          std::span<const double> shift, BatchNormStats& stats,
                          Mode mode, BatchNormCache* cache, double momentum,
                          double epsilon) {
  const int channels = x.c();
  if (scale.size() != static_cast<std::size_t>(channels) ||
      shift.size() != static_cast<std::size_t>(channels) ||
      stats.running_mean.size() != static_cast<std::size_t>(channels) ||
      stats.running_var.size() != static_cast<std::size_t>(channels)) {
    throw ConfigError("batch_norm: parameter length does not match channels of " +
                      x.shape().str());
  }
  const std::size_t plane = x.shape().plane();
  const std::size_t count = static_cast<std::size_t>(x.n()) * plane;
  Tensor xhat(x.shape());
  Tensor y(x.shape());
  std::vector<double> inv_std(channels);

  for (int c = 0; c < channels; ++c) {
    double mean;
    double var;
    if (mode == Mode::Train) {
      if (count < 2) {
        throw ConfigError(
            "batch_norm: degenerate batch, one element per channel in " +
            x.shape().str());
      }
      double s = 0.0;
      for (int n = 0; n < x.n(); ++n) {
        const double* p = x.plane(n, c);
        for (std::size_t i = 0; i < plane; ++i) s += p[i];
      }
      mean = s / static_cast<double>(count);
      double sq = 0.0;
      for (int n = 0; n < x.n(); ++n) {
        const double* p = x.plane(n, c);
        for (std::size_t i = 0; i < plane; ++i) {
          const double d = p[i] - mean;
          sq += d * d;
        }
      }
      var = sq / static_cast<double>(count);
      const double unbiased = sq / static_cast<double>(count - 1);
      stats.running_mean[c] =
          (1.0 - momentum) * stats.running_mean[c] + momentum * mean;
      stats.running_var[c] =
          (1.0 - momentum) * stats.running_var[c] + momentum * unbiased;
    } else {
      mean = stats.running_mean[c];
      var = stats.running_var[c];
    }
    const double is = 1.0 / std::sqrt(var + epsilon);
    inv_std[c] = is;
    for (int n = 0; n < x.n(); ++n) {
      const double* p = x.plane(n, c);
      double* h = xhat.plane(n, c);
      double* o = y.plane(n, c);
      for (std::size_t i = 0; i < plane; ++i) {
        h[i] = (p[i] - mean) * is;
        o[i] = scale[c] * h[i] + shift[c];
      }
    }
  }
  if (cache != nullptr) {
    cache->mode = mode;
    cache->normalized = std::move(xhat);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

BatchNormGrads batch_norm_backward(const Tensor& grad_out,
                                   const BatchNormCache& cache,
                                   std::span<const double> scale) {
  const Tensor& xhat = cache.normalized;
  require_same_shape(grad_out.shape(), xhat.shape(), "batch_norm_backward");
  const int channels = xhat.c();
  const std::size_t plane = xhat.shape().plane();
  const double count = static_cast<double>(xhat.n()) * static_cast<double>(plane);
  BatchNormGrads g{Tensor(xhat.shape()), std::vector<double>(channels, 0.0),
                   std::vector<double>(channels, 0.0)};

  for (int c = 0; c < channels; ++c) {
    double sum_g = 0.0;
    double sum_gx = 0.0;
    for (int n = 0; n < xhat.n(); ++n) {
      const double* go = grad_out.plane(n, c);
      const double* h = xhat.plane(n, c);
      for (std::size_t i = 0; i < plane; ++i) {
        sum_g += go[i];
        sum_gx += go[i] * h[i];
      }
    }
    g.shift[c] = sum_g;
    g.scale[c] = sum_gx;
    const double k = scale[c] * cache.inv_std[c];
    for (int n = 0; n < xhat.n(); ++n) {
      const double* go = grad_out.plane(n, c);
      const double* h = xhat.plane(n, c);
      double* gi = g.input.plane(n, c);
      if (cache.mode == Mode::Train) {
        for (std::size_t i = 0; i < plane; ++i) {
          gi[i] = k * (go[i] - sum_g / count - h[i] * sum_gx / count);
        }
      } else {
        for (std::size_t i = 0; i < plane; ++i) gi[i] = k * go[i];
      }
    }
  }
  return g;
}

Tensor softmax_channels(const Tensor& x) {
  Tensor y(x.shape());
  const std::size_t plane = x.shape().plane();
  const int channels = x.c();
  std::vector<double> buf(channels);
  for (int n = 0; n < x.n(); ++n) {
    const double* in = x.plane(n, 0);
    double* out = y.plane(n, 0);
    for (std::size_t p = 0; p < plane; ++p) {
      double mx = in[p];
      for (int c = 1; c < channels; ++c) mx = std::max(mx, in[c * plane + p]);
      double total = 0.0;
      for (int c = 0; c < channels; ++c) {
        buf[c] = std::exp(in[c * plane + p] - mx);
        total += buf[c];
      }
      for (int c = 0; c < channels; ++c) out[c * plane + p] = buf[c] / total;
    }
  }
  return y;
}

Tensor softmax_channels_backward(const Tensor& grad_out, const Tensor& y) {
  require_same_shape(grad_out.shape(), y.shape(), "softmax_channels_backward");
  Tensor g(y.shape());
  const std::size_t plane = y.shape().plane();
  const int channels = y.c();
  for (int n = 0; n < y.n(); ++n) {
    const double* yo = y.plane(n, 0);
    const double* go = grad_out.plane(n, 0);
    double* gi = g.plane(n, 0);
    for (std::size_t p = 0; p < plane; ++p) {
      double dot = 0.0;
      for (int c = 0; c < channels; ++c) dot += yo[c * plane + p] * go[c * plane + p];
      for (int c = 0; c < channels; ++c) {
        gi[c * plane + p] = yo[c * plane + p] * (go[c * plane + p] - dot);
      }
    }
  }
  return g;
}

Tensor sigmoid_forward(const Tensor& x) {
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    // Branches keep exp() from overflowing for large |x|.
    if (x[i] >= 0.0) {
      y[i] = 1.0 / (1.0 + std::exp(-x[i]));
    } else {
      const double e = std::exp(x[i]);
      y[i] = e / (1.0 + e);
    }
  }
  return y;
}

Tensor sigmoid_backward(const Tensor& grad_out, const Tensor& y) {
  require_same_shape(grad_out.shape(), y.shape(), "sigmoid_backward");
  Tensor g(y.shape());
  for (std::size_t i = 0; i < y.size(); ++i) {
    g[i] = grad_out[i] * y[i] * (1.0 - y[i]);
  }
  return g;
}

namespace {

struct Tap {
  int lo;
  int hi;
  double frac;
};

std::vector<Tap> upsample_taps(int in_size, int factor) {
  std::vector<Tap> taps(static_cast<std::size_t>(in_size) * factor);
  for (int o = 0; o < in_size * factor; ++o) {
    double src = (o + 0.5) / factor - 0.5;
    if (src < 0.0) src = 0.0;
    int lo = static_cast<int>(std::floor(src));
    lo = std::min(lo, in_size - 1);
    const int hi = std::min(lo + 1, in_size - 1);
    taps[o] = {lo, hi, src - lo};
  }
  return taps;
}

}  // namespace

Tensor bilinear_upsample(const Tensor& x, int factor) {
  if (factor < 1) throw ConfigError("bilinear_upsample: factor must be >= 1");
  const int oh = x.h() * factor;
  const int ow = x.w() * factor;
  Tensor y({x.n(), x.c(), oh, ow});
  const auto ty = upsample_taps(x.h(), factor);
  const auto tx = upsample_taps(x.w(), factor);
  for (int n = 0; n < x.n(); ++n) {
    for (int c = 0; c < x.c(); ++c) {
      const double* in = x.plane(n, c);
      double* out = y.plane(n, c);
      for (int oy = 0; oy < oh; ++oy) {
        const Tap& a = ty[oy];
        const double* r0 = in + static_cast<std::size_t>(a.lo) * x.w();
        const double* r1 = in + static_cast<std::size_t>(a.hi) * x.w();
        for (int ox = 0; ox < ow; ++ox) {
          const Tap& b = tx[ox];
          // lerp form is exact on constant neighbourhoods.
          const double top = r0[b.lo] + b.frac * (r0[b.hi] - r0[b.lo]);
          const double bot = r1[b.lo] + b.frac * (r1[b.hi] - r1[b.lo]);
          out[static_cast<std::size_t>(oy) * ow + ox] = top + a.frac * (bot - top);
        }
      }
    }
  }
  return y;
}

Tensor bilinear_upsample_backward(const Tensor& grad_out, int factor) {
  if (factor < 1) throw ConfigError("bilinear_upsample: factor must be >= 1");
  if (grad_out.h() % factor != 0 || grad_out.w() % factor != 0) {
    throw ConfigError("bilinear_upsample_backward: grad shape " +
                      grad_out.shape().str() + " not divisible by factor");
  }
  const int ih = grad_out.h() / factor;
  const int iw = grad_out.w() / factor;
  Tensor g({grad_out.n(), grad_out.c(), ih, iw});
  const auto ty = upsample_taps(ih, factor);
  const auto tx = upsample_taps(iw, factor);
  for (int n = 0; n < grad_out.n(); ++n) {
    for (int c = 0; c < grad_out.c(); ++c) {
      const double* go = grad_out.plane(n, c);
      double* gi = g.plane(n, c);
      for (int oy = 0; oy < grad_out.h(); ++oy) {
        const Tap& a = ty[oy];
        double* r0 = gi + static_cast<std::size_t>(a.lo) * iw;
        double* r1 = gi + static_cast<std::size_t>(a.hi) * iw;
        for (int ox = 0; ox < grad_out.w(); ++ox) {
          const Tap& b = tx[ox];
          const double v = go[static_cast<std::size_t>(oy) * grad_out.w() + ox];
          const double top = v * (1.0 - a.frac);
          const double bot = v * a.frac;
          r0[b.lo] += top * (1.0 - b.frac);
          r0[b.hi] += top * b.frac;
          r1[b.lo] += bot * (1.0 - b.frac);
          r1[b.hi] += bot * b.frac;
        }
      }
    }
  }
  return g;
}

}  // namespace seggan
