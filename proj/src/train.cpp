#include "ppgauth/train.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "ppgauth/error.hpp"
#include "ppgauth/rng.hpp"

namespace ppgauth {

std::vector<int> Dataset::labels() const {
  std::vector<int> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.label);
  return out;
}

void Dataset::validate() const {
  if (samples.empty()) throw InvalidArgument("Dataset: no samples");
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    if (s.image.size() != image_size * image_size || s.sequence.size() != steps) {
      throw InvalidArgument("Dataset: sample " + std::to_string(i) + " has inconsistent image or sequence size");
    }
    if (s.label < 0 || static_cast<std::size_t>(s.label) >= num_classes) {
      throw InvalidArgument("Dataset: sample " + std::to_string(i) + " label out of range");
    }
  }
}

Split stratified_split(std::span<const int> labels, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction <= 1.0)) {
    throw InvalidArgument("stratified_split: train fraction must be in (0, 1]");
  }
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
  if (by_class.empty()) throw InvalidArgument("stratified_split: no examples");

  Rng rng(seed);
  Split split;
  for (auto& [label, idx] : by_class) {
    if (idx.size() < 2) {
      throw InvalidArgument("stratified_split: class " + std::to_string(label) + " has fewer than 2 examples");
    }
    rng.shuffle(idx);
    const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(idx.size())));
    if (n_train == 0) {
      throw InvalidArgument("stratified_split: class " + std::to_string(label) + " gets no training examples");
    }
    split.train.insert(split.train.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
    split.test.insert(split.test.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.test.begin(), split.test.end());
  return split;
}

void TrainConfig::validate() const {
  if (batch_size == 0) throw InvalidArgument("TrainConfig: batch size must be positive");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw InvalidArgument("TrainConfig: learning rate must be finite and >= 0");
  }
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) || !(epsilon > 0.0)) {
    throw InvalidArgument("TrainConfig: Adam betas must be in [0, 1) and epsilon > 0");
  }
  if (!(train_fraction > 0.0 && train_fraction <= 1.0)) {
    throw InvalidArgument("TrainConfig: train fraction must be in (0, 1]");
  }
}

template <typename T>
Adam<T>::Adam(std::vector<ag::Tensor<T>> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& p : params_) {
    m_.emplace_back(p.numel(), T(0));
    v_.emplace_back(p.numel(), T(0));
  }
}

template <typename T>
void Adam<T>::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  const T b1 = static_cast<T>(beta1_), b2 = static_cast<T>(beta2_);
  const T step = static_cast<T>(lr_ / c1);
  const T inv_c2 = static_cast<T>(1.0 / c2);
  const T eps = static_cast<T>(eps_);
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& p = params_[k];
    if (!p.has_grad()) continue;
    const auto g = std::as_const(p).grad();
    auto w = p.data();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = b1 * m[i] + (T(1) - b1) * g[i];
      v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
      w[i] -= step * m[i] / (std::sqrt(v[i] * inv_c2) + eps);
    }
  }
}

namespace {

template <typename T>
struct Batch {
  ag::Tensor<T> images;
  ag::Tensor<T> sequences;
  std::vector<int> labels;
};

template <typename T>
Batch<T> make_batch(const Dataset& data, std::span<const std::size_t> idx) {
  const std::size_t n = idx.size(), px = data.image_size * data.image_size;
  std::vector<T> img(n * px), seq(n * data.steps);
  Batch<T> b;
  for (std::size_t r = 0; r < n; ++r) {
    const Sample& s = data.samples.at(idx[r]);
    std::copy(s.image.begin(), s.image.end(), img.begin() + static_cast<std::ptrdiff_t>(r * px));
    std::copy(s.sequence.begin(), s.sequence.end(), seq.begin() + static_cast<std::ptrdiff_t>(r * data.steps));
    b.labels.push_back(s.label);
  }
  b.images = ag::Tensor<T>({n, data.image_size, data.image_size, 1}, std::move(img));
  b.sequences = ag::Tensor<T>({n, data.steps}, std::move(seq));
  return b;
}

template <typename T>
void check_compatible(const HybridModel<T>& model, const Dataset& data) {
  data.validate();
  const auto& cfg = model.config();
  if (cfg.input_size != data.image_size) throw ShapeError("model input size differs from the dataset image size");
  if (cfg.branches.lstm && cfg.lstm.steps != data.steps) throw ShapeError("model LSTM steps differ from the dataset");
  if (cfg.num_classes != data.num_classes) throw ShapeError("model class count differs from the dataset");
}

std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

template <typename T>
std::vector<std::pair<std::vector<T>, std::vector<T>>> snapshot_stats(const HybridModel<T>& model) {
  std::vector<std::pair<std::vector<T>, std::vector<T>>> out;
  for (const auto& [_, s] : model.store().stats()) out.emplace_back(s->running_mean, s->running_var);
  return out;
}

template <typename T>
void restore_stats(HybridModel<T>& model, const std::vector<std::pair<std::vector<T>, std::vector<T>>>& snap) {
  const auto& stats = model.store().stats();
  for (std::size_t i = 0; i < stats.size(); ++i) {
    stats[i].second->running_mean = snap[i].first;
    stats[i].second->running_var = snap[i].second;
  }
}

}  // namespace

template <typename T>
TrainReport train(HybridModel<T>& model, const Dataset& data, const Split& split, const TrainConfig& cfg,
                  const EpochCallback& on_epoch) {
  cfg.validate();
  check_compatible(model, data);
  if (split.train.empty()) throw InvalidArgument("train: empty training split");

  TrainReport report;
  auto params = model.store().tensors();
  Adam<T> opt(params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon);
  Rng rng(cfg.seed);
  const bool was_training = model.training();
  model.set_training(true);

  auto batches_of = [&](const std::vector<std::size_t>& order) {
    std::vector<std::span<const std::size_t>> out;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      out.emplace_back(order.data() + b, std::min(cfg.batch_size, order.size() - b));
    }
    return out;
  };

  // Initial loss: batch statistics as in training, without committing them.
  {
    const auto snap = snapshot_stats(model);
    ag::NoGradGuard guard;
    double total = 0.0;
    for (auto idx : batches_of(split.train)) {
      const Batch<T> b = make_batch<T>(data, idx);
      const auto out = model.forward(b.images, b.sequences);
      total += static_cast<double>(ag::cross_entropy(out.logits, std::span<const int>(b.labels)).item()) *
               static_cast<double>(idx.size());
    }
    report.initial_loss = total / static_cast<double>(split.train.size());
    restore_stats(model, snap);
  }

  double best_loss = report.initial_loss;
  std::size_t since_best = 0;
  std::vector<std::size_t> order = split.train;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double loss_sum = 0.0;
    std::size_t correct = 0, batch_no = 0;
    for (auto idx : batches_of(order)) {
      ++batch_no;
      const Batch<T> b = make_batch<T>(data, idx);
      model.store().zero_grad();
      const auto out = model.forward(b.images, b.sequences);
      const auto loss = ag::cross_entropy(out.logits, std::span<const int>(b.labels));
      const double lv = static_cast<double>(loss.item());
      if (!std::isfinite(lv)) {
        std::ostringstream msg;
        msg << "train: non-finite loss " << lv << " at epoch " << epoch << ", batch " << batch_no
            << " (learning rate " << cfg.learning_rate << ")";
        model.set_training(was_training);
        throw Error(msg.str());
      }
      loss.backward();
      opt.step();
      loss_sum += lv * static_cast<double>(idx.size());
      const auto& probs = out.probs.values();
      const std::size_t c = data.num_classes;
      for (std::size_t r = 0; r < idx.size(); ++r) {
        const auto row = probs.begin() + static_cast<std::ptrdiff_t>(r * c);
        const auto pred = std::max_element(row, row + static_cast<std::ptrdiff_t>(c)) - row;
        if (pred == b.labels[r]) ++correct;
      }
    }
    EpochMetrics em;
    em.epoch = epoch;
    em.train_loss = loss_sum / static_cast<double>(order.size());
    em.train_accuracy = static_cast<double>(correct) / static_cast<double>(order.size());
    if (!split.test.empty()) {
      const Evaluation ev = evaluate(model, data, split.test, cfg.batch_size);
      em.test_loss = ev.loss;
      em.test_accuracy = ev.accuracy;
    }
    report.epochs.push_back(em);
    if (on_epoch) on_epoch(em);

    if (em.train_loss < best_loss) {
      best_loss = em.train_loss;
      since_best = 0;
    } else if (cfg.patience > 0 && ++since_best >= cfg.patience) {
      report.stopped_early = epoch < cfg.epochs;
      break;
    }
  }
  model.set_training(was_training);
  return report;
}

template <typename T>
Evaluation evaluate(const HybridModel<T>& model, const Dataset& data, std::span<const std::size_t> indices,
                    std::size_t batch_size) {
  check_compatible(model, data);
  if (batch_size == 0) throw InvalidArgument("evaluate: batch size must be positive");
  Evaluation ev;
  if (indices.empty()) return ev;
  const std::size_t c = data.num_classes;
  const std::size_t e = model.config().embed_dim;
  double loss_sum = 0.0;
  std::size_t correct = 0;
  for (std::size_t b0 = 0; b0 < indices.size(); b0 += batch_size) {
    const auto idx = indices.subspan(b0, std::min(batch_size, indices.size() - b0));
    const Batch<T> b = make_batch<T>(data, idx);
    const auto out = model.infer(b.images, b.sequences);
    loss_sum += static_cast<double>(ag::cross_entropy(out.logits, std::span<const int>(b.labels)).item()) *
                static_cast<double>(idx.size());
    for (std::size_t r = 0; r < idx.size(); ++r) {
      std::vector<double> p(c), emb(e);
      for (std::size_t j = 0; j < c; ++j) p[j] = static_cast<double>(out.probs.values()[r * c + j]);
      for (std::size_t j = 0; j < e; ++j) emb[j] = static_cast<double>(out.embedding.values()[r * e + j]);
      const int pred = static_cast<int>(argmax(p));
      if (pred == b.labels[r]) ++correct;
      ev.predictions.push_back(pred);
      ev.probs.push_back(std::move(p));
      ev.embeddings.push_back(std::move(emb));
    }
  }
  ev.loss = loss_sum / static_cast<double>(indices.size());
  ev.accuracy = static_cast<double>(correct) / static_cast<double>(indices.size());
  return ev;
}

template <typename T>
std::vector<double> embed(const HybridModel<T>& model, std::span<const float> image, std::span<const float> sequence) {
  const auto& cfg = model.config();
  const std::size_t s = cfg.input_size;
  if (image.size() != s * s) throw ShapeError("embed: image must have " + std::to_string(s * s) + " pixels");
  const std::size_t steps = cfg.branches.lstm ? cfg.lstm.steps : sequence.size();
  if (sequence.size() != steps) throw ShapeError("embed: sequence must have " + std::to_string(steps) + " steps");
  ag::Tensor<T> img({1, s, s, 1}, std::vector<T>(image.begin(), image.end()));
  ag::Tensor<T> seq({1, steps}, std::vector<T>(sequence.begin(), sequence.end()));
  const auto out = model.infer(img, seq);
  return std::vector<double>(out.embedding.values().begin(), out.embedding.values().end());
}

template class Adam<float>;
template class Adam<double>;
template TrainReport train<float>(HybridModel<float>&, const Dataset&, const Split&, const TrainConfig&,
                                  const EpochCallback&);
template TrainReport train<double>(HybridModel<double>&, const Dataset&, const Split&, const TrainConfig&,
                                   const EpochCallback&);
template Evaluation evaluate<float>(const HybridModel<float>&, const Dataset&, std::span<const std::size_t>,
                                    std::size_t);
template Evaluation evaluate<double>(const HybridModel<double>&, const Dataset&, std::span<const std::size_t>,
                                     std::size_t);
template std::vector<double> embed<float>(const HybridModel<float>&, std::span<const float>, std::span<const float>);
template std::vector<double> embed<double>(const HybridModel<double>&, std::span<const float>, std::span<const float>);

}  // namespace ppgauth
