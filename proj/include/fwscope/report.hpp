// End-to-end analysis: signature scan, target computation, symbolic
// reachability, claimed model, rule-database comparison and the report.
#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "fwscope/queries.hpp"
#include "fwscope/usbdb.hpp"
#include "fwscope/usbstatic.hpp"
#include "json.hpp"

namespace fwscope::report {

inline constexpr int kSchemaVersion = 1;
inline constexpr size_t kMaxImageSize = 0x10000;

class ImageTooLarge : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class ConfigInvalid : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class QuerySelection { Identity, Consistency, Both };
enum class PolicyMode { Full, Partial, Auto };

std::string_view query_selection_name(QuerySelection q);
std::optional<QuerySelection> query_selection_from_name(std::string_view s);
std::string_view policy_mode_name(PolicyMode p);
std::optional<PolicyMode> policy_mode_from_name(std::string_view s);

struct RunConfig {
  std::string image_path;
  std::vector<uint8_t> image;  // used instead of image_path when non-empty
  std::string expected{"unknown"};
  QuerySelection query{QuerySelection::Both};
  PolicyMode policy{PolicyMode::Auto};
  unsigned tau{16};
  unsigned max_ep{4};
  uint64_t seed{1};
  double time_limit{300};
  uint64_t state_limit{20000};
  uint32_t loop_threshold{256};
  std::vector<std::string> preconditions;  // REGION:ADDR:REL:VAL
  std::optional<uint16_t> setup_base;      // XRAM address of the setup packet
  std::string signatures_path;             // empty: built-in patterns
  std::string ruledb_path;                 // empty: shipped database
  std::string report_path;
  bool timings{false};  // wall times in the report (breaks byte-identity)

  // Throws ConfigInvalid.
  void validate() const;
  nlohmann::json to_json() const;
};

enum class Verdict { Consistent, Anomalous, BehaviorFlagged, None };
std::string_view verdict_name(Verdict v);

struct AnalysisReport {
  RunConfig config;
  size_t image_size{0};
  std::string image_digest;
  std::vector<usbstatic::DescriptorHit> hits;
  std::optional<usbstatic::Ep0Inference> ep0;
  std::map<std::string, std::vector<uint16_t>> targets;  // class -> copy sites
  std::set<symexec::Location> counters;
  std::optional<queries::SymbolicLocationSet> symbolic;
  std::string policy_used;
  std::optional<queries::Query1Report> query1;
  std::vector<queries::Query2Report> query2;
  std::optional<usbdb::DeviceDescriptor> device;
  std::optional<usbdb::ConfigurationDescriptor> configuration;
  usbdb::ClaimedModel model;
  usbdb::IdentityVerdict identity;
  bool behavior_flagged{false};
  bool complete{true};
  Verdict verdict{Verdict::None};
  std::string status;  // "completed", "completed-with-findings-none" or "incomplete"
  std::vector<std::string> diagnostics;

  // 0 consistent (or nothing found), 1 anomalous or flagged, 2 incomplete.
  int exit_code() const;
  nlohmann::json to_json() const;
  std::string dump() const;  // the serialized report, newline-terminated
};

AnalysisReport run_pipeline(const RunConfig& config);

// Throws IoError naming the path.
void emit_report(const AnalysisReport& report, const std::string& path);
nlohmann::json load_report(const std::string& path);

std::string hex16(uint32_t v);
// FNV-1a over the constraint strings.
std::string path_digest(const std::vector<queries::PathConstraint>& path);

}  // namespace fwscope::report
