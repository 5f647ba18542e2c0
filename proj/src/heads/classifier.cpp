#include "latentlm/heads/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "latentlm/autodiff/ops.hpp"
#include "latentlm/errors.hpp"

namespace latentlm {
namespace {

void check_labels(std::span<const int> labels, std::size_t classes) {
  for (int y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= classes)
      throw RangeError("label " + std::to_string(y) + " outside [0, " + std::to_string(classes) + ")");
}

std::vector<std::size_t> shuffled(std::size_t n, Rng& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  return order;
}

std::vector<int> labels_of(std::span<const EncodedSentence> s) {
  std::vector<int> out;
  out.reserve(s.size());
  for (const auto& x : s) out.push_back(x.label);
  return out;
}

}  // namespace

std::string_view to_string(HeadMode mode) {
  return mode == HeadMode::kFeatureBased ? "feature_based" : "fine_tune";
}

HeadMode head_mode_from_string(std::string_view s) {
  if (s == "feature_based") return HeadMode::kFeatureBased;
  if (s == "fine_tune") return HeadMode::kFineTune;
  throw ConfigError("unknown classifier mode '" + std::string(s) + "'");
}

void ClassifierConfig::validate() const {
  if (classes < 2) throw ConfigError("classifier needs at least two classes");
  if (batch_size == 0) throw ConfigError("classifier batch_size must be positive");
  if (!(head_adam.lr > 0.0) || !(backbone_adam.lr > 0.0)) throw ConfigError("learning rates must be positive");
}

void attach_classifier(Parameters& params, std::size_t classes) {
  params.w_c = Tensor({classes, params.config.hidden});
}

Var classifier_loss(Tape& tape, const Parameters& params, const PackedSequences& enc, std::span<const int> labels) {
  if (labels.size() != enc.count()) throw ShapeError("one label per sentence is required");
  check_labels(labels, params.w_c.rows());
  const auto post = encode(tape, params, enc);
  return ops::cross_entropy(ops::matmul_nt(post.h_cls, tape.parameter(params.w_c)), labels, -1);
}

ClassifierLog train_linear_head(Tensor& w_c, std::span<const std::vector<double>> features,
                                std::span<const int> labels, const ClassifierConfig& config, Rng& rng) {
  config.validate();
  if (features.empty()) throw DataError("classifier training set is empty");
  if (labels.size() != features.size()) throw ShapeError("one label per feature row is required");
  check_labels(labels, config.classes);
  const std::size_t f = features[0].size();
  for (const auto& row : features)
    if (row.size() != f) throw ShapeError("ragged feature rows");
  if (w_c.rank() != 2 || w_c.rows() != config.classes || w_c.cols() != f) w_c = Tensor({config.classes, f});

  Tensor* trainable[] = {&w_c};
  w_c.set_requires_grad(true);
  AdamState adam(config.head_adam);
  ClassifierLog log;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const auto order = shuffled(features.size(), rng);
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      std::vector<double> x;
      std::vector<int> y;
      for (std::size_t i = start; i < end; ++i) {
        x.insert(x.end(), features[order[i]].begin(), features[order[i]].end());
        y.push_back(labels[order[i]]);
      }
      w_c.zero_grad();
      Tape tape;
      const Var xs = tape.constant(Tensor({end - start, f}, std::move(x)));
      const Var loss = ops::cross_entropy(ops::matmul_nt(xs, tape.parameter(w_c)), y, -1);
      tape.backward(loss);
      adam_step(trainable, adam);
      total += tape.scalar(loss) * static_cast<double>(end - start);
    }
    log.epoch_loss.push_back(total / static_cast<double>(features.size()));
  }
  w_c.set_requires_grad(false);
  return log;
}

ClassifierLog train_classifier(Parameters& params, std::span<const EncodedSentence> labeled,
                               const ClassifierConfig& config, Rng& rng) {
  config.validate();
  if (labeled.empty()) throw DataError("classifier training set is empty");
  const auto labels = labels_of(labeled);
  check_labels(labels, config.classes);
  attach_classifier(params, config.classes);
  if (config.mode == HeadMode::kFeatureBased) {
    const auto features = encode_batch(params, labeled).h_cls;
    return train_linear_head(params.w_c, features, labels, config, rng);
  }

  std::vector<Tensor*> head{&params.w_c};
  std::vector<Tensor*> backbone = params.encoder_tensors();
  for (Tensor* t : head) t->set_requires_grad(true);
  for (Tensor* t : backbone) t->set_requires_grad(true);
  AdamState head_adam(config.head_adam), backbone_adam(config.backbone_adam);
  ClassifierLog log;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const auto order = shuffled(labeled.size(), rng);
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      std::vector<std::span<const int>> views;
      std::vector<int> y;
      for (std::size_t i = start; i < end; ++i) {
        views.emplace_back(labeled[order[i]].encoder_view);
        y.push_back(labels[order[i]]);
      }
      params.zero_grad();
      double value = 0.0;
      try {
        Tape tape;
        const Var loss = classifier_loss(tape, params, pack_sequences(views, params.config.max_len), y);
        tape.backward(loss);
        value = tape.scalar(loss);
      } catch (const NumericError& e) {
        params.set_requires_grad(false);
        throw DivergenceError(std::string("classifier fine-tuning diverged: ") + e.what());
      }
      adam_step(head, head_adam);
      adam_step(backbone, backbone_adam);
      total += value * static_cast<double>(end - start);
    }
    log.epoch_loss.push_back(total / static_cast<double>(labeled.size()));
  }
  params.set_requires_grad(false);
  return log;
}

std::vector<int> predict_features(const Tensor& w_c, std::span<const std::vector<double>> features) {
  std::vector<int> out;
  out.reserve(features.size());
  for (const auto& f : features) {
    if (f.size() != w_c.cols()) throw ShapeError("feature width does not match the classifier");
    int best = 0;
    double best_score = 0.0;
    for (std::size_t k = 0; k < w_c.rows(); ++k) {
      double s = 0.0;
      for (std::size_t j = 0; j < f.size(); ++j) s += w_c.at(k, j) * f[j];
      if (k == 0 || s > best_score) best = static_cast<int>(k), best_score = s;
    }
    out.push_back(best);
  }
  return out;
}

std::vector<int> predict(const Parameters& params, std::span<const EncodedSentence> sentences) {
  if (params.w_c.size() == 0) throw ConfigError("no classifier head attached");
  return predict_features(params.w_c, encode_batch(params, sentences).h_cls);
}

double accuracy(std::span<const int> predicted, std::span<const int> gold) {
  if (predicted.size() != gold.size()) throw ShapeError("prediction and label counts differ");
  if (gold.empty()) throw DataError("accuracy of an empty set");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) hit += predicted[i] == gold[i];
  return static_cast<double>(hit) / static_cast<double>(gold.size());
}

std::vector<FewShotRow> few_shot_protocol(const Parameters& backbone, std::span<const EncodedSentence> pool,
                                          std::span<const EncodedSentence> test, const FewShotConfig& config,
                                          Rng& rng) {
  config.classifier.validate();
  if (config.sizes.empty() || config.trials == 0) throw ConfigError("few-shot protocol needs sizes and trials");
  if (test.empty()) throw DataError("few-shot test set is empty");
  const std::size_t k = config.classifier.classes;
  const auto pool_labels = labels_of(pool);
  const auto test_labels = labels_of(test);
  check_labels(pool_labels, k);
  check_labels(test_labels, k);
  std::vector<std::vector<std::size_t>> by_class(k);
  for (std::size_t i = 0; i < pool.size(); ++i) by_class[static_cast<std::size_t>(pool_labels[i])].push_back(i);
  const std::size_t largest = *std::max_element(config.sizes.begin(), config.sizes.end());
  for (std::size_t c = 0; c < k; ++c)
    if (by_class[c].size() < largest)
      throw DataError("class " + std::to_string(c) + " has " + std::to_string(by_class[c].size()) +
                      " examples; the protocol needs " + std::to_string(largest));

  const bool frozen = config.classifier.mode == HeadMode::kFeatureBased;
  std::vector<std::vector<double>> pool_features, test_features;
  if (frozen) {
    pool_features = encode_batch(backbone, pool).h_cls;
    test_features = encode_batch(backbone, test).h_cls;
  }

  std::vector<FewShotRow> rows;
  for (std::size_t size : config.sizes) {
    FewShotRow row;
    row.per_class = size;
    for (std::size_t trial = 0; trial < config.trials; ++trial) {
      Rng trial_rng = rng.fork(size * 1000003 + trial);
      std::vector<std::size_t> picked;
      for (std::size_t c = 0; c < k; ++c) {
        auto idx = by_class[c];
        // Partial Fisher-Yates: the first `size` entries are a uniform sample.
        for (std::size_t i = 0; i < size; ++i) std::swap(idx[i], idx[i + trial_rng.below(idx.size() - i)]);
        picked.insert(picked.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(size));
      }
      double acc = 0.0;
      if (frozen) {
        std::vector<std::vector<double>> x;
        std::vector<int> y;
        for (std::size_t i : picked) x.push_back(pool_features[i]), y.push_back(pool_labels[i]);
        Tensor w_c;
        train_linear_head(w_c, x, y, config.classifier, trial_rng);
        acc = accuracy(predict_features(w_c, test_features), test_labels);
      } else {
        Parameters tuned = backbone;
        std::vector<EncodedSentence> train_set;
        for (std::size_t i : picked) train_set.push_back(pool[i]);
        train_classifier(tuned, train_set, config.classifier, trial_rng);
        acc = accuracy(predict(tuned, test), test_labels);
      }
      row.accuracies.push_back(acc);
    }
    const double n = static_cast<double>(row.accuracies.size());
    row.mean = std::accumulate(row.accuracies.begin(), row.accuracies.end(), 0.0) / n;
    double ss = 0.0;
    for (double a : row.accuracies) ss += (a - row.mean) * (a - row.mean);
    row.stddev = std::sqrt(ss / n);
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace latentlm
