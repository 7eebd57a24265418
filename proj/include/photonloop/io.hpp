#pragma once

#include <iosfwd>
#include <json.hpp>
#include <string>

#include "photonloop/clickstats.hpp"
#include "photonloop/models.hpp"

namespace photonloop::io {

inline constexpr int kSchemaVersion = 1;

// Loop configuration as JSON with LoopConfig's field names. mode, R, eta
// and nu are required; everything else falls back to LoopConfig defaults.
LoopConfig config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const LoopConfig& config);
LoopConfig load_config(const std::string& path);

// Histogram CSV: bin,clicks,trials,p_hat,ci_lo,ci_hi
void write_histogram_csv(std::ostream& os, const ClickHistogram& hist);
void write_histogram_csv(const std::string& path, const ClickHistogram& hist);
// Counts are authoritative; p_hat and the interval are recomputed.
ClickHistogram read_histogram_csv(std::istream& is);
ClickHistogram read_histogram_csv(const std::string& path);

// Time-tag CSV: channel,time_ps with channel 0 = sync, 1 = detector.
void write_time_tags_csv(std::ostream& os, const TimeTagStream& stream);
void write_time_tags_csv(const std::string& path, const TimeTagStream& stream);
TimeTagStream read_time_tags_csv(std::istream& is);
TimeTagStream read_time_tags_csv(const std::string& path);

nlohmann::json to_json(const ClickHistogram& hist);
nlohmann::json to_json(const ClickPatternStats& stats);
nlohmann::json to_json(const FitResult& fit);
nlohmann::json to_json(const CalibrationResult& result);
nlohmann::json to_json(const clickstats::IngestDiagnostics& diag);

void write_json(const std::string& path, const nlohmann::json& j);

}  // namespace photonloop::io
