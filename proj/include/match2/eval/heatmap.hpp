#pragma once

// CSV export of the matching patterns and the pattern similarity tensor for
// one record: pu_mean.csv (question tokens x answer tokens), pa_mean.csv,
// ps_layer<k>.csv and ps_mean.csv (user-question tokens x archived-question
// tokens). Row/column headers carry the token strings.

#include <string>
#include <vector>

#include "match2/model/model.hpp"
#include "match2/text/vocab.hpp"

namespace match2 {

struct HeatmapExport {
  std::vector<std::string> files;  // paths written, for reporting
};

HeatmapExport export_heatmap(ModelParams& params, const Vocabulary& vocab,
                             const DatasetRecord& record, const std::string& out_dir);

// Parses a heatmap CSV back into (row headers, column headers, values);
// used by the round-trip test.
struct ParsedCsv {
  std::vector<std::string> row_names;
  std::vector<std::string> col_names;
  std::vector<std::vector<double>> values;
};
ParsedCsv parse_heatmap_csv(const std::string& path);

}  // namespace match2
