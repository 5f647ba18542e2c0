#pragma once

// Feature export for external projection tools. Format: a header line
// "label<TAB>f0<TAB>f1...", then one row per sentence with the label and the
// features printed to 17 significant digits.

#include <cstddef>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include "latentlm/model/parameters.hpp"
#include "latentlm/text/corpus.hpp"

namespace latentlm {

enum class FeatureKind { kHCls, kMu };

std::string_view to_string(FeatureKind kind);
FeatureKind feature_kind_from_string(std::string_view s);

struct FeatureTable {
  std::vector<int> labels;
  std::vector<std::vector<double>> rows;
};

FeatureTable compute_features(const Parameters& params, std::span<const EncodedSentence> corpus, FeatureKind kind);

/// Throws IoError when the file cannot be written.
void export_features(const Parameters& params, std::span<const EncodedSentence> corpus, FeatureKind kind,
                     const std::filesystem::path& path);
void write_feature_table(const FeatureTable& table, std::size_t width, const std::filesystem::path& path);
/// Throws IoError on unreadable or malformed files.
FeatureTable read_feature_table(const std::filesystem::path& path);

}  // namespace latentlm
