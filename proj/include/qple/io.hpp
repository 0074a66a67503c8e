#pragma once

#include <string>
#include <vector>

#include "qple/em.hpp"

namespace qple {

/// Shortest exact decimal representation; CSV output must be byte-stable
/// across runs.
std::string format_double(double v);

void write_csv(const std::string& path, const std::string& header,
               const std::vector<std::vector<std::string>>& rows);

struct IngestResult {
    Dataset data;
    std::vector<std::string> x_names;
};

/// Reads `y,x1..xd` rows (NA marks a missing coordinate) plus the sidecar
/// JSON mapping subject index -> observation spec.  Covariates are affinely
/// rescaled to [0,1]; the map is stored in the dataset.
IngestResult ingest(const std::string& csv_path, const std::string& sidecar_path,
                    const ExpFamilySpec& family, const KernelSpec& kernel);

std::string model_to_json_string(const FitResult& fit);
RepresenterModel model_from_json_string(const std::string& text);

/// Parses CLI-style specs: "binomial:2" / "poisson"; "cubic" / "tps" /
/// "rbf:0.4" / "ssanova:<file.json>".
ExpFamilySpec parse_family(const std::string& text);
KernelSpec parse_kernel(const std::string& text);

}  // namespace qple
