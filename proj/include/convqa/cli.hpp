#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace convqa {

inline constexpr int kManifestVersion = 1;
inline constexpr const char* kOutDirEnv = "CONVQA_OUT_DIR";

// Runs one command line (args excludes the program name). Returns the exit
// code: 0 success, 1 runtime error, 2 usage error.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Side-by-side F1 table over the cells of two or more report files. Throws
// UsageError for fewer than two reports and Error when the reports cover
// different corpora, schemes or partitions.
struct Comparison {
  std::vector<std::string> labels;
  std::vector<std::string> cells;             // e.g. "by_domain/news"
  std::vector<std::vector<double>> f1;        // [cell][report], NaN when empty
};
Comparison compare_reports(const std::vector<std::filesystem::path>& reports);
// Deltas are first report minus each other report.
std::string comparison_to_csv(const Comparison& cmp);
std::string comparison_to_text(const Comparison& cmp);

}  // namespace convqa
