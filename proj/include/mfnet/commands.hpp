#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "mfnet/config.hpp"
#include "mfnet/tsn.hpp"

namespace mfnet {

struct Datasets {
  Dataset train;
  Dataset val;
  std::vector<std::string> class_names;
};

/// `data.root` set: frame folders <root>/train and <root>/val. Otherwise the
/// synthetic set is generated in memory and split by id hash. Ingestion
/// problems are reported on `log`.
Datasets load_datasets(const RunConfig& config, std::ostream& log);

/// OpenMP worker count for the conv kernels; BLAS itself stays single-threaded.
void configure_threads(int threads);

struct TrainResult {
  EpochMetrics last_train;
  std::optional<EvalResult> last_val;
  std::filesystem::path final_checkpoint;
};

/// Writes config.txt, metrics.csv and checkpoints under config.out_dir.
TrainResult train_run(const RunConfig& config, const Datasets& data,
                      const std::optional<std::filesystem::path>& resume, std::ostream& log);

/// Metrics file lines: "# config_hash=<hex>", the CSV header, then rows.
inline constexpr const char* kMetricsHeader = "epoch,split,loss,top1,top5,lr";

// Command entry points: data on `out`, diagnostics on `err`; return the exit status.
int cmd_gen_data(const RunConfig& config, std::ostream& out, std::ostream& err);
int cmd_train(const RunConfig& config, const std::optional<std::filesystem::path>& resume, std::ostream& out,
              std::ostream& err);
int cmd_eval(const RunConfig& config, const std::filesystem::path& checkpoint, std::ostream& out, std::ostream& err);
int cmd_gradcheck(const RunConfig& config, std::ostream& out, std::ostream& err);

}  // namespace mfnet
