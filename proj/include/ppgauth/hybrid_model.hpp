#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "ppgauth/nn.hpp"

namespace ppgauth {

// Convolutional token embedding (two strided convs) + positional embedding
// + self-attention + global average pool.
struct CvtBranchConfig {
  std::size_t kernel = 7;
  std::size_t stride1 = 4;
  std::size_t stride2 = 2;
  std::size_t padding = 3;
  std::size_t embed_dim = 64;
  std::size_t heads = 4;
};

// Patch embedding, depthwise/pointwise mixer blocks, then positional
// embedding + self-attention + global average pool. The embedding width
// equals the filter count.
struct ConvMixerBranchConfig {
  std::size_t filters = 32;
  std::size_t kernel = 5;
  std::size_t patch_kernel = 8;
  std::size_t patch_stride = 8;
  std::size_t blocks = 4;
  std::size_t heads = 4;
};

struct LstmBranchConfig {
  std::size_t hidden = 64;
  std::size_t steps = 350;
  bool bidirectional = false;  // forward/backward final states are averaged
};

// Which branches feed the fusion layer (for ablations).
struct BranchMask {
  bool cvt = true;
  bool convmixer = true;
  bool lstm = true;

  bool operator==(const BranchMask&) const = default;
};

struct ModelConfig {
  std::size_t input_size = 256;
  CvtBranchConfig cvt;
  ConvMixerBranchConfig convmixer;
  LstmBranchConfig lstm;
  std::size_t embed_dim = 64;
  std::size_t num_classes = 2;
  BranchMask branches;

  // Full-size network (256x256 scalograms, 350-step segments).
  static ModelConfig standard(std::size_t num_classes);
  // Small network used for gradient verification.
  static ModelConfig miniature(std::size_t num_classes);

  std::size_t cvt_grid() const;  // side of the CVT feature map
  std::size_t cvt_tokens() const { return cvt_grid() * cvt_grid(); }
  std::size_t convmixer_grid() const;
  std::size_t convmixer_tokens() const { return convmixer_grid() * convmixer_grid(); }
  std::size_t fused_width() const;

  // Throws InvalidArgument on inconsistent dimensions.
  void validate() const;
};

template <typename T>
class HybridModel {
 public:
  using Tn = ag::Tensor<T>;

  struct Output {
    Tn cvt_tokens;  // [N, tokens, d_c] after attention
    Tn z_cvt;       // [N, d_c]
    Tn cm_tokens;   // [N, tokens, d_m] after attention
    Tn z_cm;        // [N, d_m]
    Tn z_lstm;      // [N, hidden]
    Tn fused;       // [N, fused_width]
    Tn embedding;   // [N, embed_dim]
    Tn logits;      // [N, C]
    Tn probs;       // [N, C]
  };

  HybridModel(ModelConfig cfg, std::uint64_t seed);
  HybridModel(const HybridModel&) = delete;
  HybridModel& operator=(const HybridModel&) = delete;
  HybridModel(HybridModel&&) noexcept = default;
  HybridModel& operator=(HybridModel&&) noexcept = default;

  const ModelConfig& config() const { return cfg_; }
  nn::ParamStore<T>& store() { return store_; }
  const nn::ParamStore<T>& store() const { return store_; }

  void set_training(bool on) { training_ = on; }
  bool training() const { return training_; }

  // images: [N, H, W, 1] (values in [0, 1]); sequences: [N, steps].
  Output forward(const Tn& images, const Tn& sequences) const;
  // Eval-mode forward without gradient tracking, regardless of training().
  // Touches no parameters or running statistics.
  Output infer(const Tn& images, const Tn& sequences) const;

  // Per-branch entry points. tokens, when given, receives the attention
  // output before pooling.
  Tn cvt_forward(const Tn& images, Tn* tokens = nullptr) const;
  Tn convmixer_forward(const Tn& images, Tn* tokens = nullptr) const;
  Tn lstm_forward(const Tn& sequences) const;
  // Returns {embedding, logits}.
  std::pair<Tn, Tn> fuse(const Tn& fused) const;

  // ConvMixer block output with the residual path optionally removed.
  Tn convmixer_block(const Tn& z, std::size_t block, bool residual = true) const;

 private:
  void check_images(const Tn& images) const;
  Output forward_impl(const Tn& images, const Tn& sequences, bool training) const;
  Tn convmixer_impl(const Tn& images, Tn* tokens, bool training) const;
  Tn mixer_block(const Tn& z, std::size_t block, bool residual, bool training) const;

  ModelConfig cfg_;
  nn::ParamStore<T> store_;
  bool training_ = false;

  struct MixerBlock {
    nn::DepthwiseConv2d<T> depthwise;
    nn::BatchNorm<T> bn_depthwise;
    nn::Linear<T> pointwise;  // 1x1 conv == per-pixel dense layer
    nn::BatchNorm<T> bn_pointwise;
  };

  // CVT
  nn::Conv2d<T> cvt_conv1_, cvt_conv2_;
  nn::PositionalEmbedding<T> cvt_pos_;
  nn::MultiHeadSelfAttention<T> cvt_attn_;
  // ConvMixer
  nn::Conv2d<T> cm_patch_;
  nn::BatchNorm<T> cm_patch_bn_;
  std::vector<MixerBlock> cm_blocks_;
  nn::PositionalEmbedding<T> cm_pos_;
  nn::MultiHeadSelfAttention<T> cm_attn_;
  // LSTM
  nn::Lstm<T> lstm_, lstm_reverse_;
  // Head
  nn::Linear<T> projection_;
  nn::Linear<T> classifier_;
};

}  // namespace ppgauth
