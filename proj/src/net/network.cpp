#include "tubetrack/net/network.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Core>

#include "tubetrack/config_json.hpp"
#include "tubetrack/errors.hpp"

namespace tubetrack {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ColMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor>;

// Eigen's blocked GEMM packs both operands, so its summation order depends on
// the shapes only. Shapes it would hand to GEMV or to the coefficient-wise
// product peel loops by address instead, so those use the plain loops below.
bool blocked_gemm(long rows, long cols, long depth) {
  return rows > 1 && cols > 1 && depth > 1 && rows + cols + depth >= 24;
}
constexpr double kGnEps = 1e-5;
constexpr int kTaps = 27;

int conv_out_side(int in_side, int stride) { return (in_side - 1) / stride + 1; }

void im2col(const double* x, const LayerDesc& l, double* col) {
  const int n = l.in_side, o = l.out_side, s = l.stride;
  const std::size_t K = static_cast<std::size_t>(l.in_channels) * kTaps;
  const std::size_t nn = static_cast<std::size_t>(n) * n;
  std::size_t oi = 0;
  for (int a0 = 0; a0 < o; ++a0) {
    for (int a1 = 0; a1 < o; ++a1) {
      for (int a2 = 0; a2 < o; ++a2, ++oi) {
        double* dst = col + oi * K;
        for (int c = 0; c < l.in_channels; ++c) {
          const double* xc = x + c * nn * n;
          for (int d0 = 0; d0 < 3; ++d0) {
            const int i = a0 * s + d0 - 1;
            for (int d1 = 0; d1 < 3; ++d1) {
              const int j = a1 * s + d1 - 1;
              for (int d2 = 0; d2 < 3; ++d2) {
                const int k = a2 * s + d2 - 1;
                *dst++ = (i < 0 || j < 0 || k < 0 || i >= n || j >= n || k >= n)
                             ? 0.0
                             : xc[(static_cast<std::size_t>(i) * n + j) * n + k];
              }
            }
          }
        }
      }
    }
  }
}

void col2im(const double* col, const LayerDesc& l, double* dx) {
  const int n = l.in_side, o = l.out_side, s = l.stride;
  const std::size_t K = static_cast<std::size_t>(l.in_channels) * kTaps;
  const std::size_t nn = static_cast<std::size_t>(n) * n;
  std::fill(dx, dx + l.in_size(), 0.0);
  std::size_t oi = 0;
  for (int a0 = 0; a0 < o; ++a0) {
    for (int a1 = 0; a1 < o; ++a1) {
      for (int a2 = 0; a2 < o; ++a2, ++oi) {
        const double* src = col + oi * K;
        for (int c = 0; c < l.in_channels; ++c) {
          double* xc = dx + c * nn * n;
          for (int d0 = 0; d0 < 3; ++d0) {
            const int i = a0 * s + d0 - 1;
            for (int d1 = 0; d1 < 3; ++d1) {
              const int j = a1 * s + d1 - 1;
              for (int d2 = 0; d2 < 3; ++d2, ++src) {
                const int k = a2 * s + d2 - 1;
                if (i < 0 || j < 0 || k < 0 || i >= n || j >= n || k >= n) continue;
                xc[(static_cast<std::size_t>(i) * n + j) * n + k] += *src;
              }
            }
          }
        }
      }
    }
  }
}

}  // namespace

void NetworkSpec::validate() const {
  if (input_channels <= 0) throw ConfigError("network: input_channels must be positive");
  if (patch_side <= 0) throw ConfigError("network: patch_side must be positive");
  if (groups <= 0) throw ConfigError("network: groups must be positive");
  if (outputs <= 0) throw ConfigError("network: outputs must be positive");
  for (const auto& c : conv_stages) {
    if (c.channels <= 0 || c.stride <= 0) {
      throw ConfigError("network: conv channels and strides must be positive");
    }
    if (c.channels % groups != 0) {
      throw ConfigError("network: conv channels must be divisible by groups");
    }
  }
  for (int w : fc_widths) {
    if (w <= 0 || w % groups != 0) {
      throw ConfigError("network: fc widths must be positive and divisible by groups");
    }
  }
}

NetworkSpec NetworkSpec::actor(int patch_side) {
  NetworkSpec s;
  s.input_channels = 3;
  s.patch_side = patch_side;
  s.outputs = 6;
  s.head_init_gain = 0.01;
  return s;
}

NetworkSpec NetworkSpec::critic(int patch_side) {
  NetworkSpec s;
  s.input_channels = 4;
  s.patch_side = patch_side;
  s.outputs = 1;
  s.head_init_gain = 1.0;
  return s;
}

nlohmann::json to_json(const NetworkSpec& s) {
  nlohmann::json stages = nlohmann::json::array();
  for (const auto& c : s.conv_stages) stages.push_back({{"channels", c.channels}, {"stride", c.stride}});
  return {{"input_channels", s.input_channels}, {"patch_side", s.patch_side},
          {"conv_stages", stages},              {"fc_widths", s.fc_widths},
          {"groups", s.groups},                 {"outputs", s.outputs},
          {"head_init_gain", s.head_init_gain}};
}

NetworkSpec network_spec_from_json(const nlohmann::json& j, const NetworkSpec& defaults) {
  const std::string sec = "network";
  require_known_keys(j, {"input_channels", "patch_side", "conv_stages", "fc_widths", "groups",
                         "outputs", "head_init_gain"},
                     sec);
  NetworkSpec s = defaults;
  read_optional(j, "input_channels", s.input_channels, sec);
  read_optional(j, "patch_side", s.patch_side, sec);
  read_optional(j, "fc_widths", s.fc_widths, sec);
  read_optional(j, "groups", s.groups, sec);
  read_optional(j, "outputs", s.outputs, sec);
  read_optional(j, "head_init_gain", s.head_init_gain, sec);
  if (j.contains("conv_stages")) {
    s.conv_stages.clear();
    for (const auto& c : j["conv_stages"]) {
      require_known_keys(c, {"channels", "stride"}, sec + ".conv_stages");
      ConvStage st;
      read_optional(c, "channels", st.channels, sec);
      read_optional(c, "stride", st.stride, sec);
      s.conv_stages.push_back(st);
    }
  }
  s.validate();
  return s;
}

Network::Network(NetworkSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  std::size_t offset = 0;
  auto add_param = [&](const std::string& name, std::vector<int> shape) {
    std::size_t size = 1;
    for (int d : shape) size *= static_cast<std::size_t>(d);
    info_.push_back({name, std::move(shape), offset, size});
    offset += size;
    return info_.back().offset;
  };
  auto add_gn_relu = [&](const std::string& prefix, int channels, int side) {
    LayerDesc gn{LayerKind::GroupNorm};
    gn.in_channels = gn.out_channels = channels;
    gn.in_side = gn.out_side = side;
    gn.groups = spec_.groups;
    gn.weight = add_param(prefix + ".gn.gamma", {channels});
    gn.bias = add_param(prefix + ".gn.beta", {channels});
    layers_.push_back(gn);
    LayerDesc relu{LayerKind::Relu};
    relu.in_channels = relu.out_channels = channels;
    relu.in_side = relu.out_side = side;
    layers_.push_back(relu);
  };

  int channels = spec_.input_channels;
  int side = spec_.patch_side;
  for (std::size_t c = 0; c < spec_.conv_stages.size(); ++c) {
    const auto& st = spec_.conv_stages[c];
    LayerDesc conv{LayerKind::Conv3d};
    conv.in_channels = channels;
    conv.out_channels = st.channels;
    conv.in_side = side;
    conv.stride = st.stride;
    conv.out_side = conv_out_side(side, st.stride);
    const std::string prefix = "conv" + std::to_string(c);
    conv.weight = add_param(prefix + ".weight", {st.channels, channels, 3, 3, 3});
    conv.bias = add_param(prefix + ".bias", {st.channels});
    layers_.push_back(conv);
    channels = st.channels;
    side = conv.out_side;
    add_gn_relu(prefix, channels, side);
  }
  int width = channels * side * side * side;
  auto add_linear = [&](const std::string& prefix, int out) {
    LayerDesc fc{LayerKind::Linear};
    fc.in_channels = width;
    fc.out_channels = out;
    fc.weight = add_param(prefix + ".weight", {out, width});
    fc.bias = add_param(prefix + ".bias", {out});
    layers_.push_back(fc);
    width = out;
  };
  for (std::size_t f = 0; f < spec_.fc_widths.size(); ++f) {
    const std::string prefix = "fc" + std::to_string(f);
    add_linear(prefix, spec_.fc_widths[f]);
    add_gn_relu(prefix, width, 1);
  }
  add_linear("head", spec_.outputs);
  head_weight_ = layers_.back().weight;
  params_.assign(offset, 0.0);
}

std::size_t Network::input_size() const { return layers_.front().in_size(); }

void Network::initialize(Rng& rng) {
  std::fill(params_.begin(), params_.end(), 0.0);
  for (const auto& l : layers_) {
    if (l.kind == LayerKind::Conv3d || l.kind == LayerKind::Linear) {
      const double fan_in = l.kind == LayerKind::Conv3d ? l.in_channels * kTaps : l.in_channels;
      const std::size_t count = static_cast<std::size_t>(l.out_channels) * fan_in;
      const double stddev = l.weight == head_weight_ ? spec_.head_init_gain / std::sqrt(fan_in)
                                                     : std::sqrt(2.0 / fan_in);
      for (std::size_t w = 0; w < count; ++w) params_[l.weight + w] = stddev * rng.normal();
    } else if (l.kind == LayerKind::GroupNorm) {
      std::fill_n(params_.begin() + static_cast<long>(l.weight), l.out_channels, 1.0);
    }
  }
}

std::span<const double> Network::forward(std::span<const float> input, Tape& tape) const {
  if (input.size() != input_size()) {
    throw ConfigError("network: input has " + std::to_string(input.size()) +
                      " values, expected " + std::to_string(input_size()));
  }
  tape.act.resize(layers_.size() + 1);
  tape.act[0].assign(input.begin(), input.end());
  return run_forward(tape);
}

std::span<const double> Network::forward(std::span<const double> input, Tape& tape) const {
  if (input.size() != input_size()) {
    throw ConfigError("network: input has " + std::to_string(input.size()) +
                      " values, expected " + std::to_string(input_size()));
  }
  tape.act.resize(layers_.size() + 1);
  tape.act[0].assign(input.begin(), input.end());
  return run_forward(tape);
}

std::span<const double> Network::run_forward(Tape& tape) const {
  tape.aux.resize(layers_.size());
  tape.stat.resize(layers_.size());
  const double* p = params_.data();
  for (std::size_t li = 0; li < layers_.size(); ++li) {
    const LayerDesc& l = layers_[li];
    const std::vector<double>& x = tape.act[li];
    std::vector<double>& y = tape.act[li + 1];
    y.resize(l.out_size());
    switch (l.kind) {
      case LayerKind::Conv3d: {
        const std::size_t K = static_cast<std::size_t>(l.in_channels) * kTaps;
        const std::size_t O = static_cast<std::size_t>(l.out_side) * l.out_side * l.out_side;
        auto& col = tape.aux[li];
        col.resize(K * O);
        im2col(x.data(), l, col.data());
        const long M = l.out_channels, N = static_cast<long>(O), D = static_cast<long>(K);
        if (blocked_gemm(M, N, D)) {
          Eigen::Map<const RowMat> W(p + l.weight, M, D);
          Eigen::Map<const ColMat> C(col.data(), D, N);
          Eigen::Map<RowMat> Y(y.data(), M, N);
          Y.noalias() = W * C;
        } else {
          for (long o = 0; o < M; ++o)
            for (long j = 0; j < N; ++j) {
              double acc = 0.0;
              for (long k = 0; k < D; ++k) acc += p[l.weight + o * D + k] * col[j * D + k];
              y[o * N + j] = acc;
            }
        }
        for (long o = 0; o < M; ++o)
          for (long j = 0; j < N; ++j) y[o * N + j] += p[l.bias + o];
        break;
      }
      case LayerKind::Linear: {
        const double* W = p + l.weight;
        for (int o = 0; o < l.out_channels; ++o) {
          double acc = 0.0;
          for (int k = 0; k < l.in_channels; ++k) acc += W[o * l.in_channels + k] * x[k];
          y[o] = acc + p[l.bias + o];
        }
        break;
      }
      case LayerKind::GroupNorm: {
        const std::size_t S = l.out_size() / l.out_channels;
        const int cpg = l.out_channels / l.groups;
        const std::size_t gsize = S * cpg;
        auto& xhat = tape.aux[li];
        auto& inv_std = tape.stat[li];
        xhat.resize(l.out_size());
        inv_std.resize(l.groups);
        for (int g = 0; g < l.groups; ++g) {
          const std::size_t base = static_cast<std::size_t>(g) * gsize;
          double mean = 0.0;
          for (std::size_t e = 0; e < gsize; ++e) mean += x[base + e];
          mean /= static_cast<double>(gsize);
          double var = 0.0;
          for (std::size_t e = 0; e < gsize; ++e) {
            const double d = x[base + e] - mean;
            var += d * d;
          }
          var /= static_cast<double>(gsize);
          const double is = 1.0 / std::sqrt(var + kGnEps);
          inv_std[g] = is;
          for (std::size_t e = 0; e < gsize; ++e) xhat[base + e] = (x[base + e] - mean) * is;
        }
        for (int c = 0; c < l.out_channels; ++c) {
          const double gamma = p[l.weight + c], beta = p[l.bias + c];
          for (std::size_t s = 0; s < S; ++s) {
            y[c * S + s] = gamma * xhat[c * S + s] + beta;
          }
        }
        break;
      }
      case LayerKind::Relu: {
        for (std::size_t e = 0; e < y.size(); ++e) y[e] = x[e] > 0.0 ? x[e] : 0.0;
        break;
      }
    }
  }
  return tape.act.back();
}

void Network::backward(Tape& tape, std::span<const double> d_output,
                       std::span<double> grad) const {
  if (d_output.size() != static_cast<std::size_t>(spec_.outputs)) {
    throw ConfigError("network: output gradient has the wrong size");
  }
  if (grad.size() != params_.size()) throw ConfigError("network: gradient buffer size mismatch");
  const double* p = params_.data();
  double* gp = grad.data();
  std::vector<double>* dy = &tape.grad_a;
  std::vector<double>* dx = &tape.grad_b;
  dy->assign(d_output.begin(), d_output.end());

  for (std::size_t li = layers_.size(); li-- > 0;) {
    const LayerDesc& l = layers_[li];
    const std::vector<double>& x = tape.act[li];
    const bool need_dx = li > 0;
    dx->resize(l.in_size());
    switch (l.kind) {
      case LayerKind::Conv3d: {
        const std::size_t K = static_cast<std::size_t>(l.in_channels) * kTaps;
        const std::size_t O = static_cast<std::size_t>(l.out_side) * l.out_side * l.out_side;
        const auto& col = tape.aux[li];
        const long M = l.out_channels, N = static_cast<long>(O), D = static_cast<long>(K);
        const double* g = dy->data();
        if (blocked_gemm(M, D, N)) {
          Eigen::Map<const RowMat> dY(g, M, N);
          Eigen::Map<const ColMat> C(col.data(), D, N);
          Eigen::Map<RowMat> dW(gp + l.weight, M, D);
          dW.noalias() += dY * C.transpose();
        } else {
          for (long o = 0; o < M; ++o)
            for (long k = 0; k < D; ++k) {
              double acc = 0.0;
              for (long j = 0; j < N; ++j) acc += g[o * N + j] * col[j * D + k];
              gp[l.weight + o * D + k] += acc;
            }
        }
        for (long o = 0; o < M; ++o) {
          double acc = 0.0;
          for (long j = 0; j < N; ++j) acc += g[o * N + j];
          gp[l.bias + o] += acc;
        }
        if (need_dx) {
          tape.col_grad.resize(K * O);
          if (blocked_gemm(D, N, M)) {
            Eigen::Map<const RowMat> W(p + l.weight, M, D);
            Eigen::Map<const RowMat> dY(g, M, N);
            Eigen::Map<ColMat> dC(tape.col_grad.data(), D, N);
            dC.noalias() = W.transpose() * dY;
          } else {
            for (long j = 0; j < N; ++j)
              for (long k = 0; k < D; ++k) {
                double acc = 0.0;
                for (long o = 0; o < M; ++o) acc += p[l.weight + o * D + k] * g[o * N + j];
                tape.col_grad[j * D + k] = acc;
              }
          }
          col2im(tape.col_grad.data(), l, dx->data());
        }
        break;
      }
      case LayerKind::Linear: {
        const int in = l.in_channels;
        const double* W = p + l.weight;
        const std::vector<double>& g = *dy;
        for (int o = 0; o < l.out_channels; ++o) {
          for (int k = 0; k < in; ++k) gp[l.weight + o * in + k] += g[o] * x[k];
          gp[l.bias + o] += g[o];
        }
        if (need_dx) {
          for (int k = 0; k < in; ++k) {
            double acc = 0.0;
            for (int o = 0; o < l.out_channels; ++o) acc += W[o * in + k] * g[o];
            (*dx)[k] = acc;
          }
        }
        break;
      }
      case LayerKind::GroupNorm: {
        const std::size_t S = l.out_size() / l.out_channels;
        const int cpg = l.out_channels / l.groups;
        const std::size_t gsize = S * cpg;
        const auto& xhat = tape.aux[li];
        const auto& inv_std = tape.stat[li];
        // dx_hat stored in dx temporarily.
        for (int c = 0; c < l.out_channels; ++c) {
          const double gamma = p[l.weight + c];
          double dg = 0.0, dbeta = 0.0;
          for (std::size_t s = 0; s < S; ++s) {
            const std::size_t e = c * S + s;
            dg += (*dy)[e] * xhat[e];
            dbeta += (*dy)[e];
            (*dx)[e] = (*dy)[e] * gamma;
          }
          gp[l.weight + c] += dg;
          gp[l.bias + c] += dbeta;
        }
        if (need_dx) {
          for (int g = 0; g < l.groups; ++g) {
            const std::size_t base = static_cast<std::size_t>(g) * gsize;
            double mean_d = 0.0, mean_dx = 0.0;
            for (std::size_t e = 0; e < gsize; ++e) {
              mean_d += (*dx)[base + e];
              mean_dx += (*dx)[base + e] * xhat[base + e];
            }
            mean_d /= static_cast<double>(gsize);
            mean_dx /= static_cast<double>(gsize);
            for (std::size_t e = 0; e < gsize; ++e) {
              (*dx)[base + e] =
                  inv_std[g] * ((*dx)[base + e] - mean_d - xhat[base + e] * mean_dx);
            }
          }
        }
        break;
      }
      case LayerKind::Relu: {
        for (std::size_t e = 0; e < dx->size(); ++e) (*dx)[e] = x[e] > 0.0 ? (*dy)[e] : 0.0;
        break;
      }
    }
    std::swap(dy, dx);
  }
}

}  // namespace tubetrack
