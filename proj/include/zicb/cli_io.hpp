#pragma once

#include <string>
#include <utility>
#include <vector>

#include "zicb/data_model.hpp"
#include "zicb/errors.hpp"

namespace zicb {

struct CsvSchema {
  std::string outcome = "y";
  std::string id = "id";
  std::string question = "question";
  std::vector<std::string> covariates;
  std::vector<std::pair<std::string, std::string>> interactions;
  bool intercept = true;
};

// Long-format CSV, one row per (subject, question). Plain comma-separated
// values, no quoting. Subjects keep first-appearance order; rows within a
// subject are sorted by the question index.
ClusteredDataset read_long_csv(const std::string& path,
                               const CsvSchema& schema);

// Writes id,question,y plus the non-intercept covariate columns; question
// indices are positional (1..J per subject).
void write_long_csv(const ClusteredDataset& data, const std::string& path);

// Entry point used by the binary; returns the process exit code
// (0 success, 1 usage or data error, 2 estimation failure).
int cli_main(int argc, const char* const* argv);

}  // namespace zicb
