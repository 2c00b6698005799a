// Command-line front end: train, bench, serve, synth.

#include <atomic>
#include <condition_variable>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <thread>

#include <CLI11.hpp>

#include "pemed/checkpoint.hpp"
#include "pemed/harness.hpp"
#include "pemed/http.hpp"
#include "pemed/training.hpp"

namespace {

using namespace pemed;

struct ConfigFile {
  ModelConfig model;
  TrainConfig train;
};

ConfigFile read_config(const std::string& path) {
  ConfigFile out;
  if (path.empty()) return out;
  const Bytes bytes = read_file(path);
  const KeyValues kv = parse_key_values(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
  for (const auto& [key, value] : kv) {
    if (!ModelConfig::keys().contains(key) && !TrainConfig::keys().contains(key)) {
      throw Error(ErrorCode::InvalidArgument, path + ": unknown key '" + key + "'");
    }
  }
  out.model = ModelConfig::from_key_values(kv);
  out.train = TrainConfig::from_key_values(kv);
  return out;
}

std::vector<double> parse_taus(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw Error(ErrorCode::InvalidArgument, "bad --tau entry '" + item + "'");
    }
  }
  if (out.empty()) throw Error(ErrorCode::InvalidArgument, "--tau needs at least one value");
  return out;
}

std::shared_ptr<const Engine> load_engine(const std::string& path, std::string* id_out) {
  const Bytes bytes = read_file(path);
  Checkpoint ckpt = deserialize_checkpoint(bytes);
  if (id_out) *id_out = checkpoint_id(bytes);
  auto net = std::make_shared<const NetworkF>(ckpt.config, std::move(ckpt.params));
  return std::make_shared<const Engine>(net);
}

int run_train(const std::string& config_path, const std::string& out, std::string log_path) {
  const ConfigFile cfg = read_config(config_path);
  if (log_path.empty()) log_path = out + ".log.jsonl";
  std::ofstream log(log_path);
  if (!log) throw Error(ErrorCode::Io, "cannot open " + log_path);
  TrainHooks hooks;
  hooks.log = &log;
  hooks.on_epoch = [&](const EpochLog& e) {
    std::cerr << "epoch " << e.epoch << "/" << cfg.train.epochs << " loss " << e.mean_loss << " lr " << e.lr << " ("
              << e.seconds << " s)\n";
  };
  train(cfg.train, cfg.model, out, hooks);
  std::cerr << "wrote " << out << "\n";
  return 0;
}

int run_bench(const std::string& checkpoint, const std::string& data, int cap, const std::string& taus,
              const std::string& out) {
  const auto engine = load_engine(checkpoint, nullptr);
  BenchmarkOptions options;
  options.cap = cap;
  options.taus = parse_taus(taus);
  const BenchmarkReport report = run_benchmark(data, *engine, options);
  for (const std::string& w : report.warnings) std::cerr << "warning: " << w << "\n";
  write_report(report, out);
  std::cout << to_json(report.summary).dump(2) << "\n";
  return 0;
}

int run_serve(std::string checkpoint, const std::string& host, int port, double ttl_minutes, double max_mib) {
  if (checkpoint.empty()) {
    if (const char* env = std::getenv("PEMED_CHECKPOINT")) checkpoint = env;
  }
  if (checkpoint.empty()) throw Error(ErrorCode::InvalidArgument, "no --checkpoint and PEMED_CHECKPOINT is unset");
  std::string id;
  const auto engine = load_engine(checkpoint, &id);
  ServiceOptions options;
  options.ttl = std::chrono::milliseconds(static_cast<std::int64_t>(ttl_minutes * 60'000.0));
  options.max_payload_bytes = static_cast<std::size_t>(max_mib * 1024.0 * 1024.0);
  SessionService service(engine, id, options);
  httplib::Server server;
  mount_routes(server, service);

  std::mutex m;
  std::condition_variable cv;
  bool stopping = false;
  std::thread sweeper([&] {
    std::unique_lock lock(m);
    while (!cv.wait_for(lock, std::chrono::seconds(30), [&] { return stopping; })) service.evict_idle();
  });
  std::cerr << "serving checkpoint " << id << " on " << host << ":" << port << "\n";
  const bool ok = server.listen(host, port);
  {
    std::lock_guard lock(m);
    stopping = true;
  }
  cv.notify_all();
  sweeper.join();
  if (!ok) throw Error(ErrorCode::Io, "could not listen on " + host + ":" + std::to_string(port));
  return 0;
}

int run_synth(const std::string& config_path, const std::string& out, int count, std::uint64_t seed, Index size) {
  const ConfigFile cfg = read_config(config_path);
  if (size <= 0) size = cfg.model.input_size;
  std::filesystem::create_directories(out);
  for (int i = 0; i < count; ++i) {
    const Sample s = gen_synthetic_sample(case_seed(seed, static_cast<std::uint64_t>(i)), size, size, cfg.train.synth,
                                          cfg.model.total_stride());
    char name[32];
    std::snprintf(name, sizeof name, "case_%04d", i);
    write_file(std::filesystem::path(out) / (std::string(name) + ".img.pgm"), encode_pgm(s.image));
    write_file(std::filesystem::path(out) / (std::string(name) + ".gt.pgm"), encode_pgm(s.gt));
  }
  std::cerr << "wrote " << count << " cases to " << out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Interactive medical image segmentation: training, benchmarking and serving"};
  app.require_subcommand(1);

  std::string config, out, log, checkpoint, data, taus = "0.85,0.90", host = "127.0.0.1";
  int cap = 10, port = 8080, count = 20;
  double ttl = 30.0, max_mib = 8.0;
  std::uint64_t seed = 1000003;
  Index size = 0;

  auto* train_cmd = app.add_subcommand("train", "Train a model on synthetic data");
  train_cmd->add_option("--config", config, "Flat key = value config file");
  train_cmd->add_option("--out", out, "Checkpoint path")->required();
  train_cmd->add_option("--log", log, "JSON-lines training log (default <out>.log.jsonl)");

  auto* bench_cmd = app.add_subcommand("bench", "Simulated-click benchmark over a dataset directory");
  bench_cmd->add_option("--checkpoint", checkpoint)->required();
  bench_cmd->add_option("--data", data, "Directory of <case>.img.pgm / <case>.gt.pgm pairs")->required();
  bench_cmd->add_option("--cap", cap, "Click cap")->check(CLI::PositiveNumber);
  bench_cmd->add_option("--tau", taus, "Comma-separated DSC thresholds");
  bench_cmd->add_option("--out", out, "Report directory")->required();

  auto* serve_cmd = app.add_subcommand("serve", "Run the HTTP session service");
  serve_cmd->add_option("--checkpoint", checkpoint, "Checkpoint (falls back to $PEMED_CHECKPOINT)");
  serve_cmd->add_option("--host", host);
  serve_cmd->add_option("--port", port)->check(CLI::Range(1, 65535));
  serve_cmd->add_option("--ttl-minutes", ttl, "Idle session lifetime")->check(CLI::PositiveNumber);
  serve_cmd->add_option("--max-payload-mib", max_mib)->check(CLI::PositiveNumber);

  auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic benchmark dataset");
  synth_cmd->add_option("--config", config, "Config file for generator and model size");
  synth_cmd->add_option("--out", out, "Output directory")->required();
  synth_cmd->add_option("--count", count)->check(CLI::PositiveNumber);
  synth_cmd->add_option("--seed", seed);
  synth_cmd->add_option("--size", size, "Image side (default: model input_size)");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*train_cmd) return run_train(config, out, log);
    if (*bench_cmd) return run_bench(checkpoint, data, cap, taus, out);
    if (*serve_cmd) return run_serve(checkpoint, host, port, ttl, max_mib);
    if (*synth_cmd) return run_synth(config, out, count, seed, size);
  } catch (const pemed::Error& e) {
    std::cerr << "error [" << pemed::to_string(e.code()) << "]: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
