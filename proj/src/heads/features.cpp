#include "latentlm/heads/features.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>

#include "latentlm/errors.hpp"
#include "latentlm/model/transformer.hpp"

namespace latentlm {

std::string_view to_string(FeatureKind kind) { return kind == FeatureKind::kHCls ? "h_cls" : "mu"; }

FeatureKind feature_kind_from_string(std::string_view s) {
  if (s == "h_cls") return FeatureKind::kHCls;
  if (s == "mu") return FeatureKind::kMu;
  throw ConfigError("unknown feature kind '" + std::string(s) + "'");
}

FeatureTable compute_features(const Parameters& params, std::span<const EncodedSentence> corpus, FeatureKind kind) {
  auto post = encode_batch(params, corpus);
  FeatureTable t;
  t.rows = kind == FeatureKind::kHCls ? std::move(post.h_cls) : std::move(post.mu);
  for (const auto& s : corpus) t.labels.push_back(s.label);
  return t;
}

void export_features(const Parameters& params, std::span<const EncodedSentence> corpus, FeatureKind kind,
                     const std::filesystem::path& path) {
  const std::size_t width = kind == FeatureKind::kHCls ? params.config.hidden : params.config.latent;
  write_feature_table(compute_features(params, corpus, kind), width, path);
}

void write_feature_table(const FeatureTable& table, std::size_t width, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write feature file " + path.string());
  out << "label";
  for (std::size_t j = 0; j < width; ++j) out << "\tf" << j;
  out << '\n';
  char buf[32];
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    if (table.rows[i].size() != width) throw ShapeError("feature row width mismatch");
    out << table.labels[i];
    for (double v : table.rows[i]) {
      std::snprintf(buf, sizeof buf, "%.17g", v);
      out << '\t' << buf;
    }
    out << '\n';
  }
  if (!out) throw IoError("failed writing feature file " + path.string());
}

FeatureTable read_feature_table(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read feature file " + path.string());
  std::string line;
  if (!std::getline(in, line) || line.rfind("label", 0) != 0) throw IoError("feature file has no header");
  std::size_t width = 0;
  for (char c : line) width += c == '\t';
  FeatureTable t;
  while (std::getline(in, line)) {
    std::istringstream fields(line);
    std::string field;
    std::vector<double> row;
    int label = 0;
    bool first = true;
    while (std::getline(fields, field, '\t')) {
      if (first) {
        label = std::stoi(field);
        first = false;
      } else {
        row.push_back(std::stod(field));
      }
    }
    if (row.size() != width) throw IoError("feature row has the wrong number of columns");
    t.labels.push_back(label);
    t.rows.push_back(std::move(row));
  }
  return t;
}

}  // namespace latentlm
