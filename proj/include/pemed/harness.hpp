#pragma once

// Simulated-click evaluation: per-case DSC curves, NoC@tau and dataset-level
// benchmark reports.

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "pemed/engine.hpp"

namespace pemed {

/// One interactive session as seen by the simulator. Masks are soft 1xHxW.
class SessionRunner {
 public:
  virtual ~SessionRunner() = default;
  virtual TensorF first_click(const TensorF& image, const Click& click) = 0;
  virtual TensorF next_click(const Click& click) = 0;
};

/// Routes the first click through self_loop_init and later ones through refine.
class EngineRunner final : public SessionRunner {
 public:
  explicit EngineRunner(const Engine& engine) : engine_(engine) {}
  TensorF first_click(const TensorF& image, const Click& click) override;
  TensorF next_click(const Click& click) override;

 private:
  const Engine& engine_;
  std::optional<SessionState> state_;
};

using RunnerFactory = std::function<std::unique_ptr<SessionRunner>()>;

struct NocResult {
  int count = 0;
  bool reached = false;
  friend bool operator==(const NocResult&, const NocResult&) = default;
};

/// DSC of the binarized mask after each of clicks 1..cap. Click 1 comes from
/// the gt alone. When the prediction becomes exact no further click exists and
/// the last value is carried to the cap. With stop_at set, simulation ends at
/// the first click whose DSC reaches it. Throws EMPTY_GT for an empty gt.
std::vector<double> simulate_dsc_curve(SessionRunner& runner, const TensorF& image, const TensorF& gt, int cap,
                                       std::optional<double> stop_at = std::nullopt);

/// Smallest 1-based k with curve[k-1] >= tau among the first cap entries, or
/// (cap, false).
NocResult noc_from_curve(std::span<const double> curve, double tau, int cap);

NocResult noc(SessionRunner& runner, const TensorF& image, const TensorF& gt, double tau, int cap = 10);

struct BenchmarkOptions {
  int cap = 10;
  std::vector<double> taus{0.85, 0.90};
};

/// Integer percent label used as the JSON key for a threshold ("85" for 0.85).
std::string tau_label(double tau);

struct CaseRecord {
  std::string id;
  std::vector<double> dsc;  ///< clicks 1..cap
  std::map<std::string, NocResult> noc;  ///< keyed by tau_label
};

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  ///< population standard deviation
};

struct NocSummary {
  MeanStd count;  ///< over all cases, unreached ones counted as cap
  double failure_rate = 0.0;
};

struct BenchmarkSummary {
  std::size_t n_cases = 0;
  std::size_t n_skipped = 0;
  int cap = 0;
  std::map<int, MeanStd> dsc_at;  ///< click counts {1,2,3,5,10} that fit under cap
  std::vector<double> mean_curve;
  std::map<std::string, NocSummary> noc;
};

struct BenchmarkReport {
  std::vector<CaseRecord> cases;  ///< sorted by id
  BenchmarkSummary summary;
  std::vector<std::string> warnings;
};

struct DatasetCase {
  std::string id;
  TensorF image;
  TensorF gt;
};

struct Dataset {
  std::vector<DatasetCase> cases;  ///< sorted by id
  std::vector<std::string> warnings;
  std::size_t skipped = 0;
};

/// Reads `<case>.img.pgm` / `<case>.gt.pgm` pairs, resizing to size x size.
/// Unreadable, unpaired or empty-gt cases are skipped with a warning.
/// Throws DATASET_EMPTY when nothing usable remains, IO_ERROR when the
/// directory cannot be listed.
Dataset load_dataset(const std::filesystem::path& dir, Index size);

BenchmarkSummary summarize(const std::vector<CaseRecord>& cases, const BenchmarkOptions& options,
                           std::size_t skipped = 0);

/// Cases run in parallel with one runner each; results merge in id order.
BenchmarkReport run_benchmark(const Dataset& dataset, const RunnerFactory& factory, const BenchmarkOptions& options);
BenchmarkReport run_benchmark(const std::filesystem::path& dataset_dir, const Engine& engine,
                              const BenchmarkOptions& options);

nlohmann::json to_json(const CaseRecord& record);
nlohmann::json to_json(const BenchmarkSummary& summary);

/// Writes report.jsonl and summary.json into out_dir (created if needed).
void write_report(const BenchmarkReport& report, const std::filesystem::path& out_dir);

}  // namespace pemed
