#include "pemed/harness.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <fstream>

#include "pemed/image_io.hpp"
#include "pemed/metrics.hpp"

namespace pemed {

TensorF EngineRunner::first_click(const TensorF& image, const Click& click) {
  SelfLoopResult r = engine_.self_loop_init(image, click);
  state_ = std::move(r.state);
  return std::move(r.m1);
}

TensorF EngineRunner::next_click(const Click& click) {
  if (!state_) throw Error(ErrorCode::StateCorrupt, "next_click before first_click");
  RefineResult r = engine_.refine(*state_, click);
  state_ = std::move(r.state);
  return std::move(r.mask);
}

std::vector<double> simulate_dsc_curve(SessionRunner& runner, const TensorF& image, const TensorF& gt, int cap,
                                       std::optional<double> stop_at) {
  if (cap < 1) throw Error(ErrorCode::InvalidArgument, "click cap must be >= 1");
  const TensorF empty(gt.shape());
  if (dsc(empty, gt) == 1.0) throw Error(ErrorCode::EmptyGt, "ground truth has no foreground");
  std::vector<double> curve;
  TensorF pred = binarize(runner.first_click(image, next_click(empty, gt)));
  curve.push_back(dsc(pred, gt));
  while (static_cast<int>(curve.size()) < cap) {
    if (stop_at && curve.back() >= *stop_at) break;
    if (curve.back() == 1.0) {
      curve.push_back(1.0);
      continue;
    }
    pred = binarize(runner.next_click(next_click(pred, gt)));
    curve.push_back(dsc(pred, gt));
  }
  return curve;
}

NocResult noc_from_curve(std::span<const double> curve, double tau, int cap) {
  if (!(tau > 0.0 && tau <= 1.0)) throw Error(ErrorCode::InvalidArgument, "tau must lie in (0, 1]");
  if (cap < 1) throw Error(ErrorCode::InvalidArgument, "click cap must be >= 1");
  const std::size_t n = std::min(curve.size(), static_cast<std::size_t>(cap));
  for (std::size_t k = 0; k < n; ++k) {
    if (curve[k] >= tau) return {static_cast<int>(k) + 1, true};
  }
  return {cap, false};
}

NocResult noc(SessionRunner& runner, const TensorF& image, const TensorF& gt, double tau, int cap) {
  const std::vector<double> curve = simulate_dsc_curve(runner, image, gt, cap, tau);
  return noc_from_curve(curve, tau, cap);
}

std::string tau_label(double tau) { return std::to_string(static_cast<int>(std::lround(tau * 100.0))); }

namespace {

MeanStd mean_std(const std::vector<double>& xs) {
  MeanStd out;
  if (xs.empty()) return out;
  double sum = 0.0;
  for (double x : xs) sum += x;
  out.mean = sum / static_cast<double>(xs.size());
  double sq = 0.0;
  for (double x : xs) sq += (x - out.mean) * (x - out.mean);
  out.std = std::sqrt(sq / static_cast<double>(xs.size()));
  return out;
}

TensorF to_size(const TensorF& t, Index size) {
  if (t.dim(1) == size && t.dim(2) == size) return t;
  return resize_bilinear(t, size, size);
}

}  // namespace

Dataset load_dataset(const std::filesystem::path& dir, Index size) {
  namespace fs = std::filesystem;
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) throw Error(ErrorCode::Io, "not a directory: " + dir.string());
  const std::string img_suffix = ".img.pgm";
  std::vector<std::string> ids;
  for (const auto& entry : fs::directory_iterator(dir, ec)) {
    const std::string name = entry.path().filename().string();
    if (name.size() > img_suffix.size() && name.ends_with(img_suffix)) {
      ids.push_back(name.substr(0, name.size() - img_suffix.size()));
    }
  }
  if (ec) throw Error(ErrorCode::Io, "cannot list " + dir.string() + ": " + ec.message());
  std::sort(ids.begin(), ids.end());

  Dataset out;
  for (const std::string& id : ids) {
    try {
      TensorF image = to_size(load_image(read_file(dir / (id + ".img.pgm"))), size);
      TensorF gt = binarize(to_size(load_image(read_file(dir / (id + ".gt.pgm"))), size));
      if (dsc(TensorF(gt.shape()), gt) == 1.0) throw Error(ErrorCode::EmptyGt, "empty ground truth");
      out.cases.push_back({id, std::move(image), std::move(gt)});
    } catch (const Error& e) {
      out.warnings.push_back("skipping case " + id + ": " + e.what());
      ++out.skipped;
    }
  }
  if (out.cases.empty()) throw Error(ErrorCode::DatasetEmpty, "no usable cases in " + dir.string());
  return out;
}

BenchmarkSummary summarize(const std::vector<CaseRecord>& cases, const BenchmarkOptions& options,
                           std::size_t skipped) {
  BenchmarkSummary s;
  s.n_cases = cases.size();
  s.n_skipped = skipped;
  s.cap = options.cap;
  for (int k = 0; k < options.cap; ++k) {
    std::vector<double> column;
    for (const CaseRecord& c : cases) column.push_back(c.dsc.at(static_cast<std::size_t>(k)));
    s.mean_curve.push_back(mean_std(column).mean);
  }
  for (int k : {1, 2, 3, 5, 10}) {
    if (k > options.cap) continue;
    std::vector<double> column;
    for (const CaseRecord& c : cases) column.push_back(c.dsc.at(static_cast<std::size_t>(k - 1)));
    s.dsc_at[k] = mean_std(column);
  }
  for (double tau : options.taus) {
    const std::string key = tau_label(tau);
    std::vector<double> counts;
    std::size_t failures = 0;
    for (const CaseRecord& c : cases) {
      const NocResult& r = c.noc.at(key);
      counts.push_back(static_cast<double>(r.count));
      failures += r.reached ? 0 : 1;
    }
    NocSummary ns;
    ns.count = mean_std(counts);
    ns.failure_rate = cases.empty() ? 0.0 : static_cast<double>(failures) / static_cast<double>(cases.size());
    s.noc[key] = ns;
  }
  return s;
}

BenchmarkReport run_benchmark(const Dataset& dataset, const RunnerFactory& factory, const BenchmarkOptions& options) {
  if (dataset.cases.empty()) throw Error(ErrorCode::DatasetEmpty, "benchmark over an empty dataset");
  if (options.cap < 1) throw Error(ErrorCode::InvalidArgument, "click cap must be >= 1");
  for (double tau : options.taus) noc_from_curve({}, tau, options.cap);  // validates tau

  const auto n = static_cast<std::int64_t>(dataset.cases.size());
  std::vector<CaseRecord> records(dataset.cases.size());
  std::vector<std::exception_ptr> errors(dataset.cases.size());
#pragma omp parallel for schedule(dynamic)
  for (std::int64_t i = 0; i < n; ++i) {
    const auto u = static_cast<std::size_t>(i);
    try {
      const DatasetCase& c = dataset.cases[u];
      std::unique_ptr<SessionRunner> runner = factory();
      CaseRecord rec;
      rec.id = c.id;
      rec.dsc = simulate_dsc_curve(*runner, c.image, c.gt, options.cap);
      for (double tau : options.taus) rec.noc[tau_label(tau)] = noc_from_curve(rec.dsc, tau, options.cap);
      records[u] = std::move(rec);
    } catch (...) {
      errors[u] = std::current_exception();
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  BenchmarkReport report;
  report.cases = std::move(records);
  report.warnings = dataset.warnings;
  report.summary = summarize(report.cases, options, dataset.skipped);
  return report;
}

BenchmarkReport run_benchmark(const std::filesystem::path& dataset_dir, const Engine& engine,
                              const BenchmarkOptions& options) {
  const Dataset dataset = load_dataset(dataset_dir, engine.config().input_size);
  return run_benchmark(dataset, [&engine] { return std::make_unique<EngineRunner>(engine); }, options);
}

nlohmann::json to_json(const CaseRecord& record) {
  nlohmann::json noc = nlohmann::json::object();
  for (const auto& [key, r] : record.noc) noc[key] = {{"count", r.count}, {"reached", r.reached}};
  return {{"case", record.id}, {"dsc", record.dsc}, {"noc", noc}};
}

nlohmann::json to_json(const BenchmarkSummary& summary) {
  nlohmann::json dsc_at = nlohmann::json::object();
  for (const auto& [k, ms] : summary.dsc_at) dsc_at[std::to_string(k)] = {{"mean", ms.mean}, {"std", ms.std}};
  nlohmann::json noc = nlohmann::json::object();
  for (const auto& [key, ns] : summary.noc) {
    noc[key] = {{"mean", ns.count.mean}, {"std", ns.count.std}, {"failure_rate", ns.failure_rate}};
  }
  return {{"n_cases", summary.n_cases}, {"n_skipped", summary.n_skipped}, {"cap", summary.cap},
          {"dsc_at", dsc_at},           {"mean_curve", summary.mean_curve}, {"noc", noc}};
}

void write_report(const BenchmarkReport& report, const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw Error(ErrorCode::Io, "cannot create " + out_dir.string() + ": " + ec.message());
  std::string lines;
  for (const CaseRecord& c : report.cases) lines += to_json(c).dump() + "\n";
  const std::string summary = to_json(report.summary).dump(2) + "\n";
  write_file(out_dir / "report.jsonl", {reinterpret_cast<const std::uint8_t*>(lines.data()), lines.size()});
  write_file(out_dir / "summary.json", {reinterpret_cast<const std::uint8_t*>(summary.data()), summary.size()});
}

}  // namespace pemed
