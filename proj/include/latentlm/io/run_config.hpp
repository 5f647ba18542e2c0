#pragma once

// JSON run configuration shared by the command-line subcommands. Every
// section is optional; unknown keys are rejected at every level.
//
// {
//   "model": {"layers", "hidden", "heads", "latent", "max_len", "ffn_mult",
//             "injection", "ln_eps"},
//   "train": {"objective", "lambda", "grad_clip", "batch_size", "epochs",
//             "steps", "seed", "strict", "log_every", "eval_every",
//             "schedule": {"kind", "n_cycles", "ae_fraction", "ramp_fraction",
//                          "hold_fraction", "beta_max"},
//             "adam": {"lr", "beta1", "beta2", "eps"}},
//   "data": {"train", "valid", "labeled", "grammar", "synthetic_sentences",
//            "synthetic_valid", "synthetic_seed", "vocab_size", "tokenizer"},
//   "eval": {"k", "au_threshold", "max_sentences"},
//   "output_dir": "..."
// }

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>

#include "json.hpp"
#include "latentlm/model/config.hpp"
#include "latentlm/objective/vae.hpp"
#include "latentlm/text/corpus.hpp"
#include "latentlm/text/vocabulary.hpp"

namespace latentlm {

struct DataConfig {
  /// One sentence per line; when empty the built-in grammar is sampled.
  std::string train_path;
  std::string valid_path;
  /// Lines are "<label>\t<sentence>".
  bool labeled = false;
  std::string grammar = "sentiment";
  std::size_t synthetic_sentences = 5000;
  std::size_t synthetic_valid = 500;
  std::uint64_t synthetic_seed = 1;
  std::size_t vocab_size = 256;
  TokenizerKind tokenizer = TokenizerKind::kWhitespace;
};

struct EvalConfig {
  std::size_t k = 50;
  double au_threshold = 0.01;
  /// Validation sentences used by evaluation; 0 means all.
  std::size_t max_sentences = 1000;
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  DataConfig data;
  EvalConfig eval;
  std::string output_dir = "out";

  /// Throws ConfigError. Vocabulary sizes are filled in from the data later,
  /// so they are not checked here.
  void validate() const;
};

RunConfig run_config_from_json(const nlohmann::json& j);
nlohmann::ordered_json to_json(const RunConfig& config);
/// Throws ConfigError for unreadable or invalid files.
RunConfig load_run_config(const std::filesystem::path& path);

struct PreparedData {
  Vocabulary vocab;
  Corpus train;
  Corpus valid;
};

/// Builds the vocabulary from the training text and encodes both splits.
/// Synthetic data uses synthetic_seed for training and synthetic_seed + 1
/// for validation.
PreparedData prepare_data(const DataConfig& data, std::size_t max_len);
/// Encodes a split with an existing vocabulary (for evaluation of a trained
/// model). Uses the validation split settings.
Corpus load_split(const DataConfig& data, const Vocabulary& vocab, std::size_t max_len, bool validation);

}  // namespace latentlm
