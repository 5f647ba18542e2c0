#pragma once

// Linear classifier on the encoder's [CLS] state:
//   loss = cross_entropy(h_cls W_C^T, y)
// trained either on frozen features or jointly with the encoder.

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "latentlm/autodiff/adam.hpp"
#include "latentlm/autodiff/rng.hpp"
#include "latentlm/autodiff/tape.hpp"
#include "latentlm/model/parameters.hpp"
#include "latentlm/model/transformer.hpp"
#include "latentlm/text/corpus.hpp"

namespace latentlm {

enum class HeadMode { kFeatureBased, kFineTune };

std::string_view to_string(HeadMode mode);
HeadMode head_mode_from_string(std::string_view s);

struct ClassifierConfig {
  std::size_t classes = 2;
  HeadMode mode = HeadMode::kFeatureBased;
  std::size_t epochs = 100;
  std::size_t batch_size = 32;
  AdamHyper head_adam{1e-2, 0.9, 0.999, 1e-8};
  /// Encoder updates in fine-tune mode.
  AdamHyper backbone_adam{1e-4, 0.9, 0.999, 1e-8};

  void validate() const;
};

struct ClassifierLog {
  std::vector<double> epoch_loss;
};

/// Sets params.w_c to zeros of shape [classes, H].
void attach_classifier(Parameters& params, std::size_t classes);

/// Mean cross entropy of h_cls W_C^T against labels.
Var classifier_loss(Tape& tape, const Parameters& params, const PackedSequences& enc, std::span<const int> labels);

/// Trains W_C on fixed feature rows. Throws DataError for an empty set and
/// RangeError for a label outside [0, K).
ClassifierLog train_linear_head(Tensor& w_c, std::span<const std::vector<double>> features,
                                std::span<const int> labels, const ClassifierConfig& config, Rng& rng);

/// Attaches a fresh head and trains it on the labeled sentences. In
/// feature-based mode the backbone is never written.
ClassifierLog train_classifier(Parameters& params, std::span<const EncodedSentence> labeled,
                               const ClassifierConfig& config, Rng& rng);

/// Argmax of W_C f for each row; ties go to the lowest class.
std::vector<int> predict_features(const Tensor& w_c, std::span<const std::vector<double>> features);
std::vector<int> predict(const Parameters& params, std::span<const EncodedSentence> sentences);
double accuracy(std::span<const int> predicted, std::span<const int> gold);

struct FewShotConfig {
  std::vector<std::size_t> sizes{1, 10, 100, 1000};
  std::size_t trials = 10;
  ClassifierConfig classifier;
};

struct FewShotRow {
  std::size_t per_class = 0;
  double mean = 0.0;
  double stddev = 0.0;  // population standard deviation over trials
  std::vector<double> accuracies;
};

/// For each size, draws that many training sentences per class from `pool`
/// (without replacement, independently per trial), trains a fresh head and
/// scores it on `test`. Throws DataError when a class has fewer than the
/// largest size.
std::vector<FewShotRow> few_shot_protocol(const Parameters& backbone, std::span<const EncodedSentence> pool,
                                          std::span<const EncodedSentence> test, const FewShotConfig& config,
                                          Rng& rng);

}  // namespace latentlm
