#include "cli.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "latentlm/errors.hpp"
#include "latentlm/eval/metrics.hpp"
#include "latentlm/heads/classifier.hpp"
#include "latentlm/heads/features.hpp"
#include "latentlm/heads/gan.hpp"
#include "latentlm/io/checkpoint.hpp"
#include "latentlm/io/run_config.hpp"
#include "latentlm/latent/ops.hpp"
#include "latentlm/model/transformer.hpp"
#include "latentlm/service/service.hpp"
#include "latentlm/text/synth.hpp"

namespace latentlm::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  bool strict = false;
  std::string out;
  std::string checkpoint;
};

RunConfig resolve(const Options& o) {
  RunConfig c = o.config.empty() ? RunConfig{} : load_run_config(o.config);
  if (o.seed) c.train.seed = *o.seed;
  if (o.strict) c.train.strict = true;
  if (!o.out.empty()) c.output_dir = o.out;
  c.validate();
  return c;
}

fs::path output_dir(const RunConfig& c) {
  fs::path dir(c.output_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
  return dir;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
  if (!f) throw IoError("failed writing " + path.string());
}

Model require_model(const Options& o) {
  if (o.checkpoint.empty()) throw ConfigError("--checkpoint is required");
  return load_checkpoint(o.checkpoint);
}

std::span<const EncodedSentence> first_n(const std::vector<EncodedSentence>& v, std::size_t n) {
  return std::span(v).first(n == 0 ? v.size() : std::min(n, v.size()));
}

// Validation split of the configured data, or the training split when there
// is none.
std::vector<EncodedSentence> evaluation_corpus(const RunConfig& c, const Model& m) {
  auto valid = load_split(c.data, m.vocab, m.params.config.max_len, true).sentences;
  if (!valid.empty()) return valid;
  return load_split(c.data, m.vocab, m.params.config.max_len, false).sentences;
}

std::string fmt(double v, const char* spec = "%.4f") {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

int cmd_train(const Options& o, std::ostream& out) {
  const RunConfig c = resolve(o);
  const auto data = prepare_data(c.data, c.model.max_len);
  if (data.train.sentences.empty()) throw ConfigError("training corpus is empty");
  ModelConfig mc = c.model;
  mc.enc_vocab = mc.dec_vocab = data.vocab.size();
  Model model{Parameters::init(mc, Rng(c.train.seed).fork(3)), data.vocab, 0, c.train.seed};

  const fs::path dir = output_dir(c);
  write_file(dir / "config.json", to_json(c).dump(2) + "\n");
  std::ofstream metrics(dir / "metrics.jsonl", std::ios::binary);
  std::ofstream evals(dir / "eval.jsonl", std::ios::binary);
  if (!metrics || !evals) throw IoError("cannot write logs in " + dir.string());

  const auto valid = first_n(data.valid.sentences, c.eval.max_sentences);
  std::optional<MetricsReport> last;
  TrainHooks hooks;
  hooks.on_step = [&](const StepRecord& r) { write_metrics_line(metrics, r); };
  hooks.on_eval = [&](std::size_t step, const Parameters& p) {
    if (valid.size() < 2) return;
    Rng rng = Rng(c.train.seed).fork(9);
    last = evaluate(p, valid, EvalOptions{c.eval.k, c.eval.au_threshold}, rng);
    auto j = ordered_json::parse(to_json(*last));
    ordered_json line;
    line["step"] = step;
    for (auto& [k, v] : j.items()) line[k] = v;
    evals << line.dump() << '\n';
  };
  const auto result = train(c.train, data.train.sentences, model.params, hooks);
  model.step = result.steps;
  save_checkpoint(model, dir / "checkpoint.bin");

  out << "trained " << result.steps << " steps on " << data.train.sentences.size() << " sentences (vocabulary "
      << data.vocab.size() << ", dropped " << data.train.stats.dropped << ")\n";
  if (last) out << format_table(*last);
  out << "checkpoint: " << (dir / "checkpoint.bin").string() << "\n";
  return 0;
}

int cmd_eval(const Options& o, std::size_t k, std::ostream& out) {
  const RunConfig c = resolve(o);
  const Model m = require_model(o);
  const auto corpus = evaluation_corpus(c, m);
  Rng rng = Rng(c.train.seed).fork(9);
  const auto report =
      evaluate(m.params, first_n(corpus, c.eval.max_sentences), EvalOptions{k ? k : c.eval.k, c.eval.au_threshold}, rng);
  write_file(output_dir(c) / "eval.json", to_json(report) + "\n");
  out << format_table(report);
  return 0;
}

int cmd_interpolate(const Options& o, const std::string& a, const std::string& b, std::size_t steps,
                    std::ostream& out) {
  const RunConfig c = resolve(o);
  const Model m = require_model(o);
  const auto r = interpolate(m, a, b, steps);
  ordered_json rows = ordered_json::array();
  out << "tau\ttext\n";
  for (std::size_t i = 0; i < r.taus.size(); ++i) {
    rows.push_back({{"tau", r.taus[i]}, {"text", r.sentences[i]}, {"z", r.latents[i]}});
    out << fmt(r.taus[i], "%.2f") << '\t' << r.sentences[i] << '\n';
  }
  write_file(output_dir(c) / "interpolate.json", ordered_json{{"rows", rows}}.dump() + "\n");
  return 0;
}

int cmd_arith(const Options& o, const std::string& a, const std::string& b, const std::string& cc,
              std::ostream& out) {
  const RunConfig c = resolve(o);
  const Model m = require_model(o);
  const auto r = arithmetic(m, a, b, cc);
  write_file(output_dir(c) / "arith.json", ordered_json{{"z_d", r.z_d}, {"text", r.sentence}}.dump() + "\n");
  out << "A: " << a << "\nB: " << b << "\nC: " << cc << "\nD: " << r.sentence << '\n';
  return 0;
}

int cmd_classify(const Options& o, const std::string& mode, const std::vector<std::size_t>& sizes,
                 std::size_t trials, std::size_t epochs, std::ostream& out) {
  const RunConfig c = resolve(o);
  const Model m = require_model(o);
  const std::size_t max_len = m.params.config.max_len;
  const auto pool = load_split(c.data, m.vocab, max_len, false).sentences;
  const auto test = load_split(c.data, m.vocab, max_len, true).sentences;
  FewShotConfig fs_cfg;
  fs_cfg.sizes = sizes;
  fs_cfg.trials = trials;
  fs_cfg.classifier.mode = head_mode_from_string(mode);
  fs_cfg.classifier.epochs = epochs;
  int max_label = 1;
  for (const auto& s : pool) max_label = std::max(max_label, s.label);
  fs_cfg.classifier.classes = static_cast<std::size_t>(max_label) + 1;
  Rng rng = Rng(c.train.seed).fork(11);
  const auto rows = few_shot_protocol(m.params, pool, test, fs_cfg, rng);
  ordered_json j = ordered_json::array();
  out << "per_class\tmean\tstd\n";
  for (const auto& r : rows) {
    j.push_back({{"per_class", r.per_class}, {"mean", r.mean}, {"std", r.stddev}, {"accuracies", r.accuracies}});
    out << r.per_class << '\t' << fmt(r.mean) << '\t' << fmt(r.stddev) << '\n';
  }
  write_file(output_dir(c) / "classify.json", ordered_json{{"mode", mode}, {"rows", j}}.dump() + "\n");
  return 0;
}

int cmd_cgan(const Options& o, std::size_t steps, std::size_t n, bool conditional_d, std::ostream& out) {
  const RunConfig c = resolve(o);
  const Model m = require_model(o);
  const auto pool = load_split(c.data, m.vocab, m.params.config.max_len, false).sentences;
  if (pool.empty()) throw ConfigError("cGAN training corpus is empty");
  const auto latents = encode_batch(m.params, pool).mu;
  std::vector<int> labels;
  int max_label = 1;
  for (const auto& s : pool) labels.push_back(s.label), max_label = std::max(max_label, s.label);
  GanConfig g;
  g.steps = steps;
  g.conditional_discriminator = conditional_d;
  Rng rng = Rng(c.train.seed).fork(13);
  const auto result = cgan_train(latents, labels, static_cast<std::size_t>(max_label) + 1, g, rng);

  const bool oracle = c.data.train_path.empty();
  std::size_t hits = 0, total = 0;
  ordered_json samples = ordered_json::array();
  Rng gen = Rng(c.train.seed).fork(14);
  for (int y = 0; y <= max_label; ++y) {
    for (auto& s : cgan_generate(m, result.gan, y, n, gen)) {
      out << y << '\t' << s.text << '\n';
      ordered_json row{{"label", y}, {"text", s.text}};
      if (oracle) {
        const auto slots = parse_template(s.text);
        const bool hit = slots && template_label(*slots, c.data.grammar) == y;
        hits += hit;
        row["oracle_match"] = hit;
      }
      ++total;
      samples.push_back(std::move(row));
    }
  }
  ordered_json j{{"steps", steps}, {"final_d_loss", result.log.empty() ? 0.0 : result.log.back().d_loss},
                 {"final_g_loss", result.log.empty() ? 0.0 : result.log.back().g_loss}, {"samples", samples}};
  if (oracle && total > 0) {
    const double acc = static_cast<double>(hits) / static_cast<double>(total);
    j["oracle_accuracy"] = acc;
    out << "oracle accuracy: " << fmt(acc) << '\n';
  }
  write_file(output_dir(c) / "cgan.json", j.dump() + "\n");
  return 0;
}

int cmd_export(const Options& o, const std::string& which, const std::string& split, std::ostream& out) {
  const RunConfig c = resolve(o);
  const Model m = require_model(o);
  if (split != "train" && split != "valid") throw ConfigError("--split must be train or valid");
  const auto corpus = load_split(c.data, m.vocab, m.params.config.max_len, split == "valid").sentences;
  const fs::path path = output_dir(c) / "features.tsv";
  export_features(m.params, corpus, feature_kind_from_string(which), path);
  out << "wrote " << corpus.size() << " rows to " << path.string() << '\n';
  return 0;
}

int cmd_serve(const Options& o, const std::string& addr, std::size_t max_in_flight, std::ostream& out) {
  const Model m = require_model(o);
  const auto colon = addr.rfind(':');
  if (colon == std::string::npos) throw ConfigError("--addr must be host:port");
  int port = 0;
  try {
    port = std::stoi(addr.substr(colon + 1));
  } catch (const std::exception&) {
    throw ConfigError("--addr has a bad port");
  }
  ServiceOptions opt;
  opt.max_in_flight = max_in_flight;
  HttpServer server(m, opt);
  out << "serving on " << addr << std::endl;
  server.run(addr.substr(0, colon), port);
  return 0;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Latent-variable language model: training, evaluation and latent-space tools"};
  app.require_subcommand(1);
  Options o;
  auto common = [&](CLI::App* sub, bool checkpoint) {
    sub->add_option("--config", o.config, "JSON run configuration");
    sub->add_option("--seed", o.seed, "Overrides train.seed");
    sub->add_flag("--strict", o.strict, "Scalar kernels for cross-host reproducibility");
    sub->add_option("--out", o.out, "Output directory");
    if (checkpoint) sub->add_option("--checkpoint", o.checkpoint, "Checkpoint file")->required();
  };

  auto* train_cmd = app.add_subcommand("train", "Train a model");
  common(train_cmd, false);

  std::size_t k = 0;
  auto* eval_cmd = app.add_subcommand("eval", "PPL, MI, AU and ELBO terms on the validation split");
  common(eval_cmd, true);
  eval_cmd->add_option("--k", k, "Importance samples (default from config)");

  std::string a, b, c;
  std::size_t steps = 11;
  auto* interp_cmd = app.add_subcommand("interpolate", "Decode points on the line between two sentences");
  common(interp_cmd, true);
  interp_cmd->add_option("--a", a, "First sentence")->required();
  interp_cmd->add_option("--b", b, "Second sentence")->required();
  interp_cmd->add_option("--steps", steps, "Number of points including both ends");

  auto* arith_cmd = app.add_subcommand("arith", "Decode z_B - z_A + z_C");
  common(arith_cmd, true);
  arith_cmd->add_option("--a", a, "Sentence A")->required();
  arith_cmd->add_option("--b", b, "Sentence B")->required();
  arith_cmd->add_option("--c", c, "Sentence C")->required();

  std::string mode = "feature_based";
  std::vector<std::size_t> sizes{1, 10, 100, 1000};
  std::size_t trials = 10, epochs = 100;
  auto* classify_cmd = app.add_subcommand("classify", "Few-shot classification on [CLS] features");
  common(classify_cmd, true);
  classify_cmd->add_option("--mode", mode, "feature_based or fine_tune");
  classify_cmd->add_option("--sizes", sizes, "Training examples per class")->delimiter(',');
  classify_cmd->add_option("--trials", trials, "Trials per size");
  classify_cmd->add_option("--epochs", epochs, "Training epochs");

  std::size_t gan_steps = 3000, per_class = 10;
  bool conditional_d = false;
  auto* cgan_cmd = app.add_subcommand("cgan", "Train a conditional GAN on posterior means and generate");
  common(cgan_cmd, true);
  cgan_cmd->add_option("--steps", gan_steps, "GAN training steps");
  cgan_cmd->add_option("--n", per_class, "Sentences generated per class");
  cgan_cmd->add_flag("--conditional-d", conditional_d, "Let the discriminator see the label");

  std::string which = "mu", split = "train";
  auto* export_cmd = app.add_subcommand("export", "Write per-sentence features as TSV");
  common(export_cmd, true);
  export_cmd->add_option("--which", which, "h_cls or mu");
  export_cmd->add_option("--split", split, "train or valid");

  std::string addr = "127.0.0.1:8080";
  std::size_t max_in_flight = 4;
  auto* serve_cmd = app.add_subcommand("serve", "HTTP JSON API");
  common(serve_cmd, true);
  serve_cmd->add_option("--addr", addr, "host:port");
  serve_cmd->add_option("--max-in-flight", max_in_flight, "Concurrent decoding requests");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }

  try {
    if (*train_cmd) return cmd_train(o, out);
    if (*eval_cmd) return cmd_eval(o, k, out);
    if (*interp_cmd) return cmd_interpolate(o, a, b, steps, out);
    if (*arith_cmd) return cmd_arith(o, a, b, c, out);
    if (*classify_cmd) return cmd_classify(o, mode, sizes, trials, epochs, out);
    if (*cgan_cmd) return cmd_cgan(o, gan_steps, per_class, conditional_d, out);
    if (*export_cmd) return cmd_export(o, which, split, out);
    if (*serve_cmd) return cmd_serve(o, addr, max_in_flight, out);
  } catch (const DivergenceError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}

}  // namespace latentlm::cli
