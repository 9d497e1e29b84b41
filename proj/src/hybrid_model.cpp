#include "ppgauth/hybrid_model.hpp"

#include "ppgauth/error.hpp"

namespace ppgauth {

namespace {
std::size_t conv_out(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad) {
  if (in + 2 * pad < kernel || stride == 0) throw InvalidArgument("ModelConfig: convolution does not fit input");
  return (in + 2 * pad - kernel) / stride + 1;
}
}  // namespace

ModelConfig ModelConfig::standard(std::size_t num_classes) {
  ModelConfig cfg;
  cfg.num_classes = num_classes;
  return cfg;
}

ModelConfig ModelConfig::miniature(std::size_t num_classes) {
  ModelConfig cfg;
  cfg.input_size = 32;
  cfg.cvt.embed_dim = 8;
  cfg.cvt.heads = 2;
  cfg.convmixer.filters = 8;
  cfg.convmixer.heads = 2;
  cfg.convmixer.blocks = 1;
  cfg.lstm.hidden = 4;
  cfg.lstm.steps = 20;
  cfg.embed_dim = 8;
  cfg.num_classes = num_classes;
  return cfg;
}

std::size_t ModelConfig::cvt_grid() const {
  const std::size_t first = conv_out(input_size, cvt.kernel, cvt.stride1, cvt.padding);
  return conv_out(first, cvt.kernel, cvt.stride2, cvt.padding);
}

std::size_t ModelConfig::convmixer_grid() const {
  return conv_out(input_size, convmixer.patch_kernel, convmixer.patch_stride, 0);
}

std::size_t ModelConfig::fused_width() const {
  return (branches.cvt ? cvt.embed_dim : 0) + (branches.convmixer ? convmixer.filters : 0) +
         (branches.lstm ? lstm.hidden : 0);
}

void ModelConfig::validate() const {
  if (!branches.cvt && !branches.convmixer && !branches.lstm) {
    throw InvalidArgument("ModelConfig: at least one branch must be enabled");
  }
  if (num_classes < 2) throw InvalidArgument("ModelConfig: need at least 2 classes");
  if (embed_dim == 0) throw InvalidArgument("ModelConfig: embed_dim must be positive");
  if (branches.cvt) {
    if (cvt.heads == 0 || cvt.embed_dim % cvt.heads != 0) {
      throw InvalidArgument("ModelConfig: CVT heads must divide the CVT embedding dim");
    }
    if (cvt.padding >= cvt.kernel) throw InvalidArgument("ModelConfig: CVT padding must be smaller than the kernel");
    cvt_grid();
  }
  if (branches.convmixer) {
    if (convmixer.heads == 0 || convmixer.filters % convmixer.heads != 0) {
      throw InvalidArgument("ModelConfig: ConvMixer heads must divide the filter count");
    }
    if (convmixer.kernel % 2 == 0) throw InvalidArgument("ModelConfig: ConvMixer kernel must be odd");
    convmixer_grid();
  }
  if (branches.lstm && (lstm.hidden == 0 || lstm.steps == 0)) {
    throw InvalidArgument("ModelConfig: LSTM hidden size and steps must be positive");
  }
}

template <typename T>
HybridModel<T>::HybridModel(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  Rng rng(seed);
  if (cfg_.branches.cvt) {
    const auto& c = cfg_.cvt;
    cvt_conv1_ = nn::Conv2d<T>(store_, "cvt.conv1", 1, c.embed_dim, c.kernel, c.stride1, c.padding, rng);
    cvt_conv2_ = nn::Conv2d<T>(store_, "cvt.conv2", c.embed_dim, c.embed_dim, c.kernel, c.stride2, c.padding, rng);
    cvt_pos_ = nn::PositionalEmbedding<T>(store_, "cvt.pos", cfg_.cvt_tokens(), c.embed_dim, rng);
    cvt_attn_ = nn::MultiHeadSelfAttention<T>(store_, "cvt.attn", c.embed_dim, c.heads, rng);
  }
  if (cfg_.branches.convmixer) {
    const auto& m = cfg_.convmixer;
    cm_patch_ = nn::Conv2d<T>(store_, "cm.patch", 1, m.filters, m.patch_kernel, m.patch_stride, 0, rng);
    cm_patch_bn_ = nn::BatchNorm<T>(store_, "cm.patch_bn", m.filters);
    for (std::size_t b = 0; b < m.blocks; ++b) {
      const std::string p = "cm.block" + std::to_string(b);
      MixerBlock blk;
      blk.depthwise = nn::DepthwiseConv2d<T>(store_, p + ".depthwise", m.filters, m.kernel, rng);
      blk.bn_depthwise = nn::BatchNorm<T>(store_, p + ".bn_depthwise", m.filters);
      blk.pointwise = nn::Linear<T>(store_, p + ".pointwise", m.filters, m.filters, rng);
      blk.bn_pointwise = nn::BatchNorm<T>(store_, p + ".bn_pointwise", m.filters);
      cm_blocks_.push_back(std::move(blk));
    }
    cm_pos_ = nn::PositionalEmbedding<T>(store_, "cm.pos", cfg_.convmixer_tokens(), m.filters, rng);
    cm_attn_ = nn::MultiHeadSelfAttention<T>(store_, "cm.attn", m.filters, m.heads, rng);
  }
  if (cfg_.branches.lstm) {
    lstm_ = nn::Lstm<T>(store_, "lstm", cfg_.lstm.hidden, rng);
    if (cfg_.lstm.bidirectional) lstm_reverse_ = nn::Lstm<T>(store_, "lstm_reverse", cfg_.lstm.hidden, rng);
  }
  projection_ = nn::Linear<T>(store_, "fusion.projection", cfg_.fused_width(), cfg_.embed_dim, rng);
  classifier_ = nn::Linear<T>(store_, "fusion.classifier", cfg_.embed_dim, cfg_.num_classes, rng);
}

template <typename T>
void HybridModel<T>::check_images(const Tn& images) const {
  const auto& s = images.shape();
  if (s.size() != 4 || s[1] != cfg_.input_size || s[2] != cfg_.input_size || s[3] != 1) {
    throw ShapeError("HybridModel: expected images [N, " + std::to_string(cfg_.input_size) + ", " +
                     std::to_string(cfg_.input_size) + ", 1], got " + ag::shape_str(s));
  }
}

template <typename T>
typename HybridModel<T>::Tn HybridModel<T>::cvt_forward(const Tn& images, Tn* tokens) const {
  if (!cfg_.branches.cvt) throw InvalidArgument("HybridModel: CVT branch is disabled");
  check_images(images);
  const std::size_t n = images.size(0);
  Tn f = cvt_conv2_(ag::gelu(cvt_conv1_(images)));  // [N, g, g, d_c]
  Tn e = cvt_pos_(ag::reshape(f, {n, cfg_.cvt_tokens(), cfg_.cvt.embed_dim}));
  Tn a = cvt_attn_(e);
  if (tokens) *tokens = a;
  return ag::mean_pool_global(a);
}

template <typename T>
typename HybridModel<T>::Tn HybridModel<T>::convmixer_block(const Tn& z, std::size_t block, bool residual) const {
  return mixer_block(z, block, residual, training_);
}

template <typename T>
typename HybridModel<T>::Tn HybridModel<T>::mixer_block(const Tn& z, std::size_t block, bool residual,
                                                        bool training) const {
  const MixerBlock& blk = cm_blocks_.at(block);
  Tn mixed = ag::gelu(blk.depthwise(z));
  if (residual) mixed = ag::add(mixed, z);
  Tn zl = blk.bn_depthwise(mixed, training);
  return blk.bn_pointwise(ag::gelu(blk.pointwise(zl)), training);
}

template <typename T>
typename HybridModel<T>::Tn HybridModel<T>::convmixer_forward(const Tn& images, Tn* tokens) const {
  return convmixer_impl(images, tokens, training_);
}

template <typename T>
typename HybridModel<T>::Tn HybridModel<T>::convmixer_impl(const Tn& images, Tn* tokens, bool training) const {
  if (!cfg_.branches.convmixer) throw InvalidArgument("HybridModel: ConvMixer branch is disabled");
  check_images(images);
  const std::size_t n = images.size(0);
  Tn z = cm_patch_bn_(ag::gelu(cm_patch_(images)), training);
  for (std::size_t b = 0; b < cm_blocks_.size(); ++b) z = mixer_block(z, b, true, training);
  Tn e = cm_pos_(ag::reshape(z, {n, cfg_.convmixer_tokens(), cfg_.convmixer.filters}));
  Tn a = cm_attn_(e);
  if (tokens) *tokens = a;
  return ag::mean_pool_global(a);
}

template <typename T>
typename HybridModel<T>::Tn HybridModel<T>::lstm_forward(const Tn& sequences) const {
  if (!cfg_.branches.lstm) throw InvalidArgument("HybridModel: LSTM branch is disabled");
  if (sequences.rank() != 2 || sequences.size(1) != cfg_.lstm.steps) {
    throw ShapeError("HybridModel: expected sequences [N, " + std::to_string(cfg_.lstm.steps) + "], got " +
                     ag::shape_str(sequences.shape()));
  }
  Tn h = lstm_(sequences);
  if (cfg_.lstm.bidirectional) h = ag::scale(ag::add(h, lstm_reverse_(sequences, true)), T(0.5));
  return h;
}

template <typename T>
std::pair<typename HybridModel<T>::Tn, typename HybridModel<T>::Tn> HybridModel<T>::fuse(const Tn& fused) const {
  if (fused.rank() != 2 || fused.size(1) != cfg_.fused_width()) {
    throw ShapeError("HybridModel: fused features must be [N, " + std::to_string(cfg_.fused_width()) + "], got " +
                     ag::shape_str(fused.shape()));
  }
  Tn embedding = projection_(fused);
  return {embedding, classifier_(embedding)};
}

template <typename T>
typename HybridModel<T>::Output HybridModel<T>::forward(const Tn& images, const Tn& sequences) const {
  return forward_impl(images, sequences, training_);
}

template <typename T>
typename HybridModel<T>::Output HybridModel<T>::infer(const Tn& images, const Tn& sequences) const {
  ag::NoGradGuard guard;
  return forward_impl(images, sequences, false);
}

template <typename T>
typename HybridModel<T>::Output HybridModel<T>::forward_impl(const Tn& images, const Tn& sequences,
                                                             bool training) const {
  Output out;
  std::vector<Tn> parts;
  std::size_t batch = 0;
  if (cfg_.branches.cvt) {
    out.z_cvt = cvt_forward(images, &out.cvt_tokens);
    parts.push_back(out.z_cvt);
    batch = images.size(0);
  }
  if (cfg_.branches.convmixer) {
    out.z_cm = convmixer_impl(images, &out.cm_tokens, training);
    parts.push_back(out.z_cm);
    batch = images.size(0);
  }
  if (cfg_.branches.lstm) {
    out.z_lstm = lstm_forward(sequences);
    if (batch != 0 && sequences.size(0) != batch) throw ShapeError("HybridModel: image/sequence batch sizes differ");
    parts.push_back(out.z_lstm);
  }
  out.fused = parts.size() == 1 ? parts[0] : ag::concat(parts, 1);
  std::tie(out.embedding, out.logits) = fuse(out.fused);
  out.probs = ag::softmax_rows(out.logits);
  return out;
}

template class HybridModel<float>;
template class HybridModel<double>;

}  // namespace ppgauth
