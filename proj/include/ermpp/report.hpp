#pragma once

#include <string>
#include <vector>

#include "ermpp/pipeline.hpp"

namespace ermpp {

/// CSV, one row per held-out domain: seed accuracy columns, mean, stderr.
/// The leading comment lines embed the config digest and the generator
/// spec. Byte-identical across reruns of the same config.
std::string report_csv(const EvalReport& report, const std::string& config_digest,
                       const std::string& generator_spec);

/// Aligned Markdown comparison across toggle sets, annotated with the config
/// digest, the generator spec, and the verbatim config echo.
std::string reports_markdown(const std::vector<EvalReport>& reports,
                             const std::string& config_digest, const std::string& config_echo,
                             const std::string& generator_spec);

/// Self-describing JSON record of one run. wall_clock_sec is informational
/// and the only field allowed to differ between identical runs.
std::string run_record_json(const RunRecord& rec);

/// Full-precision, locale-independent float formatting shared by all report
/// writers.
std::string format_double(double v);

}  // namespace ermpp
