#pragma once

#include "varmech/analysis.hpp"
#include "varmech/trainer.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace varmech::io {

inline constexpr const char* kToolVersion = "varmech 0.1.0";

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// stable exit codes of the command-line tool
enum ExitCode : int {
  exit_ok = 0,
  exit_config_error = 2,
  exit_not_stable = 3,
  exit_divergence = 4,
  exit_infeasible = 5,
};

// every float in CSV artifacts uses 17 significant digits (exact round trip)
std::string format_double(double v);

uint64_t fnv1a64(const void* data, size_t len);
uint64_t fnv1a64_file(const std::string& path);

// ---- problem configuration file ------------------------------------------------

prob::ProblemConfig default_problem_config(prob::ProblemKind kind);
// parse with defaults; schema errors carry the line number when available
prob::ProblemConfig load_problem_config(const std::string& path);
nlohmann::json problem_config_to_json(const prob::ProblemConfig& cfg);
prob::ProblemConfig problem_config_from_json(const nlohmann::json& j);

train::Schedule default_schedule(prob::ProblemKind kind, uint64_t seed);

// ---- artifact writers -----------------------------------------------------------

void write_trace_csv(const train::LossTrace& trace, const std::string& path);
void write_sweep_csv(const analysis::GeneralizationReport& rep, const std::string& path);
void write_sweep_summary(const analysis::GeneralizationReport& rep, const std::string& path);
void write_la_csv(const analysis::LearningActivityTable& table,
                  std::span<const std::string> feature_names,
                  std::span<const std::string> sample_dependent, const std::string& path);

// decorative line plots; acceptance reads CSVs only
void write_trace_svg(const train::LossTrace& trace, const std::string& path);
void write_sweep_svg(const analysis::GeneralizationReport& rep, const std::string& path);

// manifest with content hashes of every artifact in the bundle
struct ReportBundle {
  std::filesystem::path dir;
  std::vector<std::string> files; // relative paths, manifest excluded

  void add(const std::string& rel) { files.push_back(rel); }
  std::filesystem::path path(const std::string& rel) const { return dir / rel; }
};

void write_manifest(const ReportBundle& bundle, const std::string& command_line,
                    uint64_t config_hash, uint64_t seed);

} // namespace varmech::io
