#ifndef FHALAB_REPORT_HPP
#define FHALAB_REPORT_HPP

#include <string>

#include "fhalab/training.hpp"

namespace fhalab::report {

/// Strict parse: unknown fields are rejected with the offending name.
/// "method" is required; every other field has the stock default, so a
/// method-only config runs with the standard hyper-parameters.
training::ExperimentConfig parse_config_json(const std::string& json_text);
training::ExperimentConfig load_config_file(const std::string& path);

std::string summary_json_string(const training::ExperimentSummary& summary);
void write_summary_json(const std::string& path, const training::ExperimentSummary& summary);
training::ExperimentSummary parse_summary_json(const std::string& json_text);

/// Every *.json summary in a directory (non-summary json is rejected).
std::vector<training::ExperimentSummary> load_summaries_dir(const std::string& dir);

struct ReportFiles {
  std::string accuracy_grid_csv;  // rows = methods, cols = shots, cells mean+-std
  std::string diversity_csv;
  std::string text_table;
};

/// Grids sorted by method name then shot count; cells reuse the exact number
/// formatting of the summary JSON.
ReportFiles build_report(std::vector<training::ExperimentSummary> summaries);

void write_report(const std::string& out_dir, const ReportFiles& files);

}  // namespace fhalab::report

#endif
