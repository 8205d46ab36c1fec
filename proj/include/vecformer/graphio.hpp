#pragma once

// On-disk graph container: a directory holding graph.json (header),
// edges.csv, features.csv, labels.csv and optional env.csv. All CSVs are
// comma-separated, '.' decimal, LF line endings, UTF-8, no header row.
// Symmetric graphs store each undirected edge once (src <= dst); the loader
// restores the closure.

#include <filesystem>

#include "vecformer/graph.hpp"

namespace vecformer {

inline constexpr int kGraphContainerVersion = 1;

void save_graph(const GraphDataset& ds, const std::filesystem::path& dir);
GraphDataset load_graph(const std::filesystem::path& dir);

// Plain rectangular CSV of reals (no header); used for external signal
// matrices. Throws FormatError with file:line on malformed input.
Tensor load_csv_matrix(const std::filesystem::path& file);

}  // namespace vecformer
