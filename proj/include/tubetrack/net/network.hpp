#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "tubetrack/rng.hpp"

namespace tubetrack {

struct ConvStage {
  int channels = 8;
  int stride = 2;
  friend bool operator==(const ConvStage&, const ConvStage&) = default;
};

// Conv3d(3x3x3, padding 1) -> GroupNorm -> ReLU per conv stage, then
// Linear -> GroupNorm -> ReLU per hidden width, then a bare Linear head.
struct NetworkSpec {
  int input_channels = 3;
  int patch_side = 39;
  std::vector<ConvStage> conv_stages{{8, 2}, {16, 2}, {32, 2}};
  std::vector<int> fc_widths{128, 64};
  int groups = 4;
  int outputs = 6;
  // Scale of the head's initial weights relative to 1/sqrt(fan_in).
  double head_init_gain = 0.01;

  void validate() const;
  friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;

  static NetworkSpec actor(int patch_side);
  static NetworkSpec critic(int patch_side);
};

nlohmann::json to_json(const NetworkSpec& s);
NetworkSpec network_spec_from_json(const nlohmann::json& j, const NetworkSpec& defaults);

struct ParamInfo {
  std::string name;
  std::vector<int> shape;
  std::size_t offset = 0;
  std::size_t size = 0;
};

enum class LayerKind { Conv3d, GroupNorm, Relu, Linear };

struct LayerDesc {
  LayerKind kind;
  int in_channels = 0, out_channels = 0;
  int in_side = 1, out_side = 1;  // spatial side (cubic); 1 for vectors
  int stride = 1;
  int groups = 1;
  std::size_t weight = 0, bias = 0;  // parameter offsets (weight = gamma for GN)
  std::size_t in_size() const {
    return static_cast<std::size_t>(in_channels) * in_side * in_side * in_side;
  }
  std::size_t out_size() const {
    return static_cast<std::size_t>(out_channels) * out_side * out_side * out_side;
  }
};

// Per-evaluation scratch: activations and cached intermediates. One tape per
// thread; the network itself stays read-only during forward/backward.
struct Tape {
  std::vector<std::vector<double>> act;   // act[l] = input of layer l
  std::vector<std::vector<double>> aux;   // im2col buffers / normalised values
  std::vector<std::vector<double>> stat;  // per-group inverse std
  std::vector<double> grad_a, grad_b;     // backward ping-pong buffers
  std::vector<double> col_grad;
};

class Network {
 public:
  explicit Network(NetworkSpec spec);

  const NetworkSpec& spec() const { return spec_; }
  const std::vector<LayerDesc>& layers() const { return layers_; }
  const std::vector<ParamInfo>& parameter_info() const { return info_; }
  std::size_t parameter_count() const { return params_.size(); }
  std::size_t input_size() const;

  std::span<double> parameters() { return params_; }
  std::span<const double> parameters() const { return params_; }

  // He-normal weights, zero biases, unit GN gains; head scaled by
  // head_init_gain.
  void initialize(Rng& rng);

  // Throws ConfigError when input.size() != input_size().
  std::span<const double> forward(std::span<const float> input, Tape& tape) const;
  std::span<const double> forward(std::span<const double> input, Tape& tape) const;

  // Accumulates d(loss)/d(params) into `grad` given d(loss)/d(output), for
  // the inputs of the most recent forward() on `tape`.
  void backward(Tape& tape, std::span<const double> d_output, std::span<double> grad) const;

 private:
  std::span<const double> run_forward(Tape& tape) const;

  NetworkSpec spec_;
  std::vector<LayerDesc> layers_;
  std::vector<ParamInfo> info_;
  std::vector<double> params_;
  std::size_t head_weight_ = 0;
};

}  // namespace tubetrack
