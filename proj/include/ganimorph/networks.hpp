#pragma once

#include <climits>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <torch/torch.h>

#include "error.hpp"

namespace ganimorph::nets {

namespace nn = torch::nn;

struct GeneratorSpec {
  int base_filters = 64;
  int downsamples = 2;
  int residual_blocks_per_scale = 3;  // at the bottleneck
  int scale_residual_blocks = 1;      // at every other encoder and decoder scale

  void validate() const {
    if (base_filters < 1) throw ValidationError("generator: base_filters must be positive");
    if (downsamples < 1 || downsamples > 6) throw ValidationError("generator: downsamples must be in 1..6");
    if (residual_blocks_per_scale < 0 || scale_residual_blocks < 0)
      throw ValidationError("generator: residual block counts must be non-negative");
  }

  int size_multiple() const { return 1 << downsamples; }

  bool operator==(const GeneratorSpec&) const = default;
};

enum class DiscriminatorVariant { dilated, patch, fully_connected };

inline std::string_view to_string(DiscriminatorVariant v) {
  switch (v) {
    case DiscriminatorVariant::dilated: return "dilated";
    case DiscriminatorVariant::patch: return "patch";
    case DiscriminatorVariant::fully_connected: return "fully_connected";
  }
  return "?";
}

inline DiscriminatorVariant parse_variant(std::string_view s) {
  if (s == "dilated") return DiscriminatorVariant::dilated;
  if (s == "patch") return DiscriminatorVariant::patch;
  if (s == "fully_connected") return DiscriminatorVariant::fully_connected;
  throw ConfigError("unknown discriminator variant '" + std::string(s) +
                    "' (expected dilated, patch or fully_connected)");
}

struct DiscriminatorSpec {
  DiscriminatorVariant variant = DiscriminatorVariant::dilated;
  int base_filters = 128;
  int dilation_block_depth = 4;
  int output_stride = 4;  // dilated variant only; patch is fixed at 8
  bool instance_norm = true;

  void validate() const {
    if (base_filters < 1) throw ValidationError("discriminator: base_filters must be positive");
    if (dilation_block_depth < 0 || dilation_block_depth > 10)
      throw ValidationError("discriminator: dilation_block_depth must be in 0..10");
    if (output_stride < 2 || (output_stride & (output_stride - 1)) != 0 || output_stride > 64)
      throw ValidationError("discriminator: output_stride must be a power of two in 2..64");
  }

  int effective_stride() const {
    switch (variant) {
      case DiscriminatorVariant::dilated: return output_stride;
      case DiscriminatorVariant::patch: return 8;
      case DiscriminatorVariant::fully_connected: return 16;
    }
    return 1;
  }

  bool operator==(const DiscriminatorSpec&) const = default;
};

/// Pre-activation outputs of every discriminator layer but the last, plus the logits.
struct FeatureTaps {
  std::vector<torch::Tensor> layers;
  torch::Tensor output;
};

// ---------------------------------------------------------------------------
// Receptive field

struct ConvGeometry {
  int kernel = 3;
  int stride = 1;
  int dilation = 1;
};

/// rf += (k - 1) * dilation * jump; jump *= stride, over a chain of layers.
inline int receptive_field(std::span<const ConvGeometry> chain) {
  long rf = 1;
  long jump = 1;
  for (const auto& l : chain) {
    rf += static_cast<long>(l.kernel - 1) * l.dilation * jump;
    jump *= l.stride;
  }
  return static_cast<int>(rf);
}

/// Longest input-to-logit path of a discriminator.
inline std::vector<ConvGeometry> receptive_path(const DiscriminatorSpec& spec) {
  std::vector<ConvGeometry> path;
  switch (spec.variant) {
    case DiscriminatorVariant::dilated: {
      for (int s = spec.output_stride; s > 1; s /= 2) path.push_back({3, 2, 1});
      for (int i = 0; i < spec.dilation_block_depth; ++i) path.push_back({3, 1, 1 << i});
      path.push_back({3, 1, 1});
      path.push_back({3, 1, 1});
      path.push_back({1, 1, 1});
      break;
    }
    case DiscriminatorVariant::patch:
      path = {{4, 2, 1}, {4, 2, 1}, {4, 2, 1}, {4, 1, 1}, {4, 1, 1}};
      break;
    case DiscriminatorVariant::fully_connected:
      path = {{4, 2, 1}, {4, 2, 1}, {4, 2, 1}, {4, 2, 1}};
      break;
  }
  return path;
}

/// Receptive field of one output logit in input pixels. The fully connected
/// variant pools globally, reported as INT_MAX.
inline int receptive_field(const DiscriminatorSpec& spec) {
  if (spec.variant == DiscriminatorVariant::fully_connected) return INT_MAX;
  const auto path = receptive_path(spec);
  return receptive_field(std::span<const ConvGeometry>(path));
}

inline std::int64_t parameter_count(const nn::Module& m) {
  std::int64_t n = 0;
  for (const auto& p : m.parameters()) n += p.numel();
  return n;
}

/// Zero-mean normal weights (std 0.02) and zero biases.
inline void init_weights(nn::Module& m) {
  torch::NoGradGuard guard;
  for (auto& kv : m.named_parameters()) {
    const auto& name = kv.key();
    auto& p = kv.value();
    if (name.size() >= 4 && name.compare(name.size() - 4, 4, "bias") == 0)
      p.zero_();
    else
      p.normal_(0.0, 0.02);
  }
}

// ---------------------------------------------------------------------------
// Generator

inline nn::Conv2d conv(int in, int out, int kernel, int stride = 1, int padding = 0, int dilation = 1,
                       bool bias = true) {
  return nn::Conv2d(nn::Conv2dOptions(in, out, kernel)
                        .stride(stride)
                        .padding(padding)
                        .dilation(dilation)
                        .bias(bias));
}

inline nn::InstanceNorm2d instance_norm(int channels) {
  return nn::InstanceNorm2d(nn::InstanceNorm2dOptions(channels).affine(false).track_running_stats(false));
}

/// Residual block whose identity and residual paths merge by concatenation,
/// followed by a 1x1 projection back to the input width.
struct ConcatResidualBlockImpl : nn::Module {
  explicit ConcatResidualBlockImpl(int channels)
      : conv1(conv(channels, channels, 3, 1, 1, 1, false)),
        conv2(conv(channels, channels, 3, 1, 1, 1, false)),
        merge(conv(2 * channels, channels, 1, 1, 0, 1, false)),
        norm1(instance_norm(channels)),
        norm2(instance_norm(channels)),
        norm3(instance_norm(channels)) {
    register_module("conv1", conv1);
    register_module("conv2", conv2);
    register_module("merge", merge);
    register_module("norm1", norm1);
    register_module("norm2", norm2);
    register_module("norm3", norm3);
  }

  torch::Tensor forward(const torch::Tensor& x) {
    auto r = torch::relu(norm1(conv1(x)));
    r = norm2(conv2(r));
    return torch::relu(norm3(merge(torch::cat({x, r}, 1))));
  }

  nn::Conv2d conv1, conv2, merge;
  nn::InstanceNorm2d norm1, norm2, norm3;
};
TORCH_MODULE(ConcatResidualBlock);

/// Encoder-decoder with residual blocks at every scale and concatenated
/// encoder-to-decoder skips. Maps [B, 3, H, W] to [B, 3, H, W] in [-1, 1].
struct GeneratorImpl : nn::Module {
  explicit GeneratorImpl(const GeneratorSpec& s) : spec(s) {
    spec.validate();
    const int f = spec.base_filters;
    const int depth = spec.downsamples;
    auto width = [f](int scale) { return f << scale; };

    auto residual_stack = [](int channels, int count) {
      nn::Sequential seq;
      for (int i = 0; i < count; ++i) seq->push_back(ConcatResidualBlock(channels));
      return seq;
    };

    stem = register_module("stem", conv(3, f, 3, 1, 1, 1, false));
    stem_norm = register_module("stem_norm", instance_norm(f));

    for (int i = 0; i <= depth; ++i) {
      const int blocks = i == depth ? spec.residual_blocks_per_scale : spec.scale_residual_blocks;
      encoder_blocks->push_back(residual_stack(width(i), blocks));
    }
    for (int i = 1; i <= depth; ++i) {
      nn::Sequential down(conv(width(i - 1), width(i), 3, 2, 1, 1, false), instance_norm(width(i)),
                          nn::ReLU());
      downs->push_back(down);
    }
    for (int i = depth; i >= 1; --i) {
      nn::Sequential up(
          nn::ConvTranspose2d(
              nn::ConvTranspose2dOptions(width(i), width(i - 1), 4).stride(2).padding(1).bias(false)),
          instance_norm(width(i - 1)), nn::ReLU());
      ups->push_back(up);
      nn::Sequential fuse(conv(2 * width(i - 1), width(i - 1), 3, 1, 1, 1, false),
                          instance_norm(width(i - 1)), nn::ReLU());
      fuses->push_back(fuse);
      decoder_blocks->push_back(residual_stack(width(i - 1), spec.scale_residual_blocks));
    }
    register_module("encoder_blocks", encoder_blocks);
    register_module("downs", downs);
    register_module("ups", ups);
    register_module("fuses", fuses);
    register_module("decoder_blocks", decoder_blocks);
    head = register_module("head", conv(f, 3, 3, 1, 1, 1, true));
    init_weights(*this);
  }

  static torch::Tensor run_stack(const std::shared_ptr<nn::Module>& m, const torch::Tensor& h) {
    auto* seq = m->as<nn::Sequential>();
    return seq->is_empty() ? h : seq->forward(h);
  }

  torch::Tensor forward(const torch::Tensor& x) {
    check_input(x);
    const int depth = spec.downsamples;
    std::vector<torch::Tensor> skips;
    auto h = torch::relu(stem_norm(stem(x)));
    for (int i = 0; i < depth; ++i) {
      h = run_stack(encoder_blocks[i], h);
      skips.push_back(h);
      h = downs[i]->as<nn::Sequential>()->forward(h);
    }
    h = run_stack(encoder_blocks[depth], h);
    for (int i = 0; i < depth; ++i) {
      h = ups[i]->as<nn::Sequential>()->forward(h);
      h = fuses[i]->as<nn::Sequential>()->forward(torch::cat({h, skips[depth - 1 - i]}, 1));
      h = run_stack(decoder_blocks[i], h);
    }
    return torch::tanh(head(h));
  }

  void check_input(const torch::Tensor& x) const {
    if (x.dim() != 4 || x.size(1) != 3)
      throw ShapeError("generator expects [B, 3, H, W] input, got " + shape_string(x));
    const int m = spec.size_multiple();
    if (x.size(2) % m != 0 || x.size(3) % m != 0)
      throw ShapeError("generator input H and W must each be a multiple of " + std::to_string(m) + ", got " +
                       shape_string(x));
  }

  static std::string shape_string(const torch::Tensor& x) {
    std::string s = "[";
    for (int64_t i = 0; i < x.dim(); ++i) s += (i ? ", " : "") + std::to_string(x.size(i));
    return s + "]";
  }

  int first_layer_filters() const { return static_cast<int>(stem->weight.size(0)); }

  GeneratorSpec spec;
  nn::Conv2d stem{nullptr};
  nn::InstanceNorm2d stem_norm{nullptr};
  nn::ModuleList encoder_blocks, downs, ups, fuses, decoder_blocks;
  nn::Conv2d head{nullptr};
};
TORCH_MODULE(Generator);

inline Generator build_generator(const GeneratorSpec& spec) { return Generator(spec); }

// ---------------------------------------------------------------------------
// Discriminators

/// One conv layer; the tap is its pre-activation output.
struct TapLayerImpl : nn::Module {
  TapLayerImpl(nn::Conv2dOptions opts, bool normalize) : normalize(normalize) {
    opts.bias(!normalize);
    conv = register_module("conv", nn::Conv2d(opts));
    if (normalize) norm = register_module("norm", instance_norm(static_cast<int>(opts.out_channels())));
  }

  torch::Tensor pre_activation(const torch::Tensor& x) {
    auto y = conv(x);
    return normalize ? norm(y) : y;
  }

  bool normalize;
  nn::Conv2d conv{nullptr};
  nn::InstanceNorm2d norm{nullptr};
};
TORCH_MODULE(TapLayer);

/// Shared structure for the three variants: a list of tapped layers with
/// leaky-rectifier activations and a variant-specific wiring in forward().
struct DiscriminatorImpl : nn::Module {
  explicit DiscriminatorImpl(const DiscriminatorSpec& s) : spec(s) {
    spec.validate();
    switch (spec.variant) {
      case DiscriminatorVariant::dilated: build_dilated(); break;
      case DiscriminatorVariant::patch: build_patch(); break;
      case DiscriminatorVariant::fully_connected: build_fully_connected(); break;
    }
    register_module("layers", layers);
    if (final_conv) register_module("final_conv", final_conv);
    if (final_linear) register_module("final_linear", final_linear);
    init_weights(*this);
  }

  FeatureTaps forward(const torch::Tensor& x) {
    if (x.dim() != 4 || x.size(1) != 3)
      throw ShapeError("discriminator expects [B, 3, H, W] input, got " + GeneratorImpl::shape_string(x));
    const int m = spec.effective_stride();
    if (x.size(2) % m != 0 || x.size(3) % m != 0)
      throw ShapeError("discriminator input H and W must be multiples of " + std::to_string(m) +
                       ", got " + GeneratorImpl::shape_string(x));

    FeatureTaps taps;
    auto run = [&](std::size_t i, const torch::Tensor& in) {
      auto pre = layers[i]->as<TapLayer>()->pre_activation(in);
      taps.layers.push_back(pre);
      return torch::leaky_relu(pre, 0.2);
    };

    torch::Tensor h = x;
    switch (spec.variant) {
      case DiscriminatorVariant::dilated: {
        std::size_t i = 0;
        for (; i < static_cast<std::size_t>(downsample_layers); ++i) h = run(i, h);
        const auto skip = h;
        for (int k = 0; k < spec.dilation_block_depth; ++k, ++i) h = run(i, h);
        h = run(i++, torch::cat({h, skip}, 1));
        h = run(i++, h);
        taps.output = final_conv(h);
        break;
      }
      case DiscriminatorVariant::patch: {
        for (std::size_t i = 0; i < layers->size(); ++i) h = run(i, h);
        taps.output = final_conv(h);
        break;
      }
      case DiscriminatorVariant::fully_connected: {
        for (std::size_t i = 0; i < layers->size(); ++i) h = run(i, h);
        h = torch::adaptive_avg_pool2d(h, {4, 4}).flatten(1);
        taps.output = final_linear(h);
        break;
      }
    }
    return taps;
  }

  DiscriminatorSpec spec;
  int downsample_layers = 0;
  nn::ModuleList layers;
  nn::Conv2d final_conv{nullptr};
  nn::Linear final_linear{nullptr};

 private:
  void add(int in, int out, int kernel, int stride, int padding, int dilation, bool first) {
    auto opts = nn::Conv2dOptions(in, out, kernel).stride(stride).padding(padding).dilation(dilation);
    layers->push_back(TapLayer(opts, spec.instance_norm && !first));
  }

  void build_dilated() {
    const int f = spec.base_filters;
    int width = 3;
    int next = f;
    for (int s = spec.output_stride; s > 1; s /= 2) {
      add(width, next, 3, 2, 1, 1, width == 3);
      width = next;
      next *= 2;
      ++downsample_layers;
    }
    for (int k = 0; k < spec.dilation_block_depth; ++k) add(width, width, 3, 1, 1 << k, 1 << k, false);
    add(2 * width, width, 3, 1, 1, 1, false);
    add(width, width, 3, 1, 1, 1, false);
    final_conv = conv(width, 1, 1);
  }

  void build_patch() {
    const int f = spec.base_filters;
    add(3, f, 4, 2, 1, 1, true);
    add(f, 2 * f, 4, 2, 1, 1, false);
    add(2 * f, 4 * f, 4, 2, 1, 1, false);
    // Stride-1 4x4 layers use "same" padding so the map is exactly H/8.
    layers->push_back(TapLayer(nn::Conv2dOptions(4 * f, 8 * f, 4).padding(torch::kSame), spec.instance_norm));
    final_conv = nn::Conv2d(nn::Conv2dOptions(8 * f, 1, 4).padding(torch::kSame));
  }

  void build_fully_connected() {
    const int f = spec.base_filters;
    add(3, f, 4, 2, 1, 1, true);
    add(f, 2 * f, 4, 2, 1, 1, false);
    add(2 * f, 4 * f, 4, 2, 1, 1, false);
    add(4 * f, 8 * f, 4, 2, 1, 1, false);
    final_linear = nn::Linear(8 * f * 16, 1);
  }
};
TORCH_MODULE(Discriminator);

inline Discriminator build_discriminator(const DiscriminatorSpec& spec) { return Discriminator(spec); }

}  // namespace ganimorph::nets
