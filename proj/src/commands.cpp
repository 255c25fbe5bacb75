#include "mfnet/commands.hpp"

#include <cblas.h>
#include <omp.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "mfnet/checkpoint.hpp"
#include "mfnet/error.hpp"
#include "mfnet/gradcheck.hpp"

namespace fs = std::filesystem;

namespace mfnet {

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

Dataset ingest(const fs::path& root, std::vector<std::string>& class_names, std::ostream& log) {
  FrameFolder folder = load_frame_folder(root);
  for (const auto& e : folder.errors) log << "warning: " << root.string() << ": skipped '" << e.clip_id << "': " << e.message << '\n';
  if (!folder.errors.empty()) log << "warning: " << folder.errors.size() << " clip(s) skipped under " << root.string() << '\n';
  if (folder.samples.empty()) throw InputError("no usable clips under " + root.string());
  if (class_names.empty()) class_names = folder.class_names;
  else if (class_names != folder.class_names) throw InputError(root.string() + "/classes.txt disagrees with the other split");
  return std::move(folder.samples);
}

std::string row(int epoch, const std::string& split, const EpochMetrics& m, double lr) {
  return std::to_string(epoch) + "," + split + "," + fmt(m.loss) + "," + fmt(m.top1) + "," + fmt(m.top5) + "," + fmt(lr);
}

// Rows of an existing metrics file for epochs before `start`.
std::vector<std::string> kept_rows(const fs::path& path, int start) {
  std::vector<std::string> rows;
  std::ifstream in(path);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#' || line == kMetricsHeader) continue;
    if (std::stoi(line.substr(0, line.find(','))) < start) rows.push_back(line);
  }
  return rows;
}

template <typename F>
int guarded(std::ostream& err, F&& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return 2;
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace

void configure_threads(int threads) {
  omp_set_num_threads(std::max(1, threads));
  openblas_set_num_threads(1);
}

Datasets load_datasets(const RunConfig& config, std::ostream& log) {
  Datasets d;
  if (config.data_root.empty()) {
    const Dataset all = generate_synthetic(config.synthetic_spec(), config.count_per_class);
    DatasetSplit split = split_by_id_hash(all, config.val_fraction);
    d.train = std::move(split.train);
    d.val = std::move(split.val);
    d.class_names = synthetic_class_names();
  } else {
    const fs::path root(config.data_root);
    d.train = ingest(root / "train", d.class_names, log);
    d.val = ingest(root / "val", d.class_names, log);
  }
  if (static_cast<std::int64_t>(d.class_names.size()) != config.num_classes)
    throw ConfigError("dataset has " + std::to_string(d.class_names.size()) + " classes but model.num_classes=" +
                      std::to_string(config.num_classes));
  config.input_spec().augment.validate(d.class_names);
  return d;
}

TrainResult train_run(const RunConfig& config, const Datasets& data, const std::optional<fs::path>& resume,
                      std::ostream& log) {
  config.validate();
  Model model = build_model(config.model_config(), config.seed);
  SgdState optimizer = make_sgd_state(model.registry(), config.lr, config.momentum, config.weight_decay);
  int start = 0;
  if (resume) {
    const Checkpoint ckpt = read_checkpoint(*resume);
    if (!same_architecture(parse_config(ckpt.config_text), config))
      throw ConfigError("checkpoint " + resume->string() + " was written for a different architecture");
    restore_checkpoint(ckpt, model, &optimizer);
    start = static_cast<int>(ckpt.epoch);
    log << "resuming from " << resume->string() << " at epoch " << start << '\n';
  }

  const fs::path out_dir(config.out_dir);
  fs::create_directories(out_dir);
  const std::string config_text = serialize_config(config);
  {
    std::ofstream cfg(out_dir / "config.txt");
    cfg << config_text;
    if (!cfg) throw IoError("cannot write " + (out_dir / "config.txt").string());
  }
  const fs::path metrics_path = out_dir / "metrics.csv";
  const std::vector<std::string> previous = resume ? kept_rows(metrics_path, start) : std::vector<std::string>{};
  std::ofstream metrics(metrics_path, std::ios::trunc);
  if (!metrics) throw IoError("cannot write " + metrics_path.string());
  metrics << "# config_hash=" << config_hash(config) << '\n' << kMetricsHeader << '\n';
  for (const auto& r : previous) metrics << r << '\n';
  metrics.flush();

  const StepLr schedule(config.lr, config.lr_step, config.lr_gamma);
  const TrainOptions options = config.train_options();
  const InputSpec input = config.input_spec();
  TrainResult result;
  for (int epoch = start; epoch < config.epochs; ++epoch) {
    optimizer.learning_rate = schedule.at(epoch);
    result.last_train = train_epoch(model, data.train, options, optimizer, epoch);
    metrics << row(epoch, "train", result.last_train, optimizer.learning_rate) << '\n';
    log << "epoch " << epoch << " train loss " << fmt(result.last_train.loss) << " top1 " << fmt(result.last_train.top1);
    const bool last = epoch + 1 == config.epochs;
    if (!data.val.empty() && config.eval_every > 0 && ((epoch + 1) % config.eval_every == 0 || last)) {
      result.last_val = evaluate(model, data.val, config.k_eval, input, config.batch_size, config.workers);
      metrics << row(epoch, "val", result.last_val->metrics, optimizer.learning_rate) << '\n';
      log << " | val loss " << fmt(result.last_val->metrics.loss) << " top1 " << fmt(result.last_val->metrics.top1);
    }
    log << '\n';
    metrics.flush();
    if (!metrics) throw IoError("failed writing " + metrics_path.string());

    const Checkpoint ckpt = capture_checkpoint(model, &optimizer, config_text, static_cast<std::uint32_t>(epoch + 1));
    write_checkpoint(out_dir / "last.ckpt", ckpt);
    if (config.checkpoint_every > 0 && (epoch + 1) % config.checkpoint_every == 0) {
      char name[32];
      std::snprintf(name, sizeof name, "epoch_%04d.ckpt", epoch + 1);
      write_checkpoint(out_dir / name, ckpt);
    }
  }
  result.final_checkpoint = out_dir / "final.ckpt";
  write_checkpoint(result.final_checkpoint,
                   capture_checkpoint(model, &optimizer, config_text, static_cast<std::uint32_t>(std::max(start, config.epochs))));
  return result;
}

int cmd_gen_data(const RunConfig& config, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    config.validate();
    const Dataset all = generate_synthetic(config.synthetic_spec(), config.count_per_class);
    const DatasetSplit split = split_by_id_hash(all, config.val_fraction);
    const fs::path root(config.out_dir);
    for (const char* split_name : {"train", "val"}) {
      const fs::path dir = root / split_name;
      if (!fs::exists(dir) || fs::is_empty(dir)) continue;
      if (!fs::exists(dir / "classes.txt"))
        throw UsageError(dir.string() + " exists and is not a frame folder; refusing to overwrite it");
      err << "replacing previous export in " << dir.string() << '\n';
      fs::remove_all(dir);
    }
    const auto& names = synthetic_class_names();
    export_frame_folder(split.train, names, root / "train");
    export_frame_folder(split.val, names, root / "val");
    out << "class,train,val\n";
    for (std::size_t c = 0; c < names.size(); ++c) {
      const auto count = [&](const Dataset& d) {
        return std::count_if(d.begin(), d.end(), [&](const VideoSample& s) { return s.label() == static_cast<int>(c); });
      };
      out << names[c] << ',' << count(split.train) << ',' << count(split.val) << '\n';
    }
    out << "total," << split.train.size() << ',' << split.val.size() << '\n';
    err << "wrote " << all.size() << " clips under " << root.string() << '\n';
    return 0;
  });
}

int cmd_train(const RunConfig& config, const std::optional<fs::path>& resume, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    config.validate();
    configure_threads(config.threads);
    const Datasets data = load_datasets(config, err);
    err << "train " << data.train.size() << " clips, val " << data.val.size() << " clips, config hash "
        << config_hash(config) << '\n';
    const TrainResult r = train_run(config, data, resume, err);
    out << "final_checkpoint=" << r.final_checkpoint.string() << '\n';
    out << "train_loss=" << fmt(r.last_train.loss) << "\ntrain_top1=" << fmt(r.last_train.top1) << '\n';
    if (r.last_val)
      out << "val_loss=" << fmt(r.last_val->metrics.loss) << "\nval_top1=" << fmt(r.last_val->metrics.top1)
          << "\nval_top5=" << fmt(r.last_val->metrics.top5) << '\n';
    return 0;
  });
}

int cmd_eval(const RunConfig& config, const fs::path& checkpoint, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    config.validate();
    configure_threads(config.threads);
    const Checkpoint ckpt = read_checkpoint(checkpoint);
    Model model = build_model(config.model_config(), config.seed);
    restore_checkpoint(ckpt, model, nullptr);
    const Datasets data = load_datasets(config, err);
    const InputSpec input = config.input_spec();

    std::vector<int> ks = config.k_eval_sweep;
    if (std::find(ks.begin(), ks.end(), config.k_eval) == ks.end()) ks.insert(ks.begin(), config.k_eval);
    const int top_n = static_cast<int>(std::min<std::int64_t>(5, config.num_classes));
    out << "# accuracy on " << data.val.size() << " clips; top5 counts the best " << top_n << " of "
        << config.num_classes << " classes\n";
    out << "k_eval,top1,top5,loss\n";
    std::optional<EvalResult> main;
    for (int k : ks) {
      EvalResult r = evaluate(model, data.val, k, input, config.batch_size, config.workers);
      out << k << ',' << fmt(r.metrics.top1) << ',' << fmt(r.metrics.top5) << ',' << fmt(r.metrics.loss) << '\n';
      if (k == config.k_eval) main = std::move(r);
    }
    out << "# confusion at k_eval=" << config.k_eval << " (rows: true class, columns: predicted)\n";
    out << "true\\pred";
    for (const auto& n : data.class_names) out << ',' << n;
    out << '\n';
    for (std::size_t i = 0; i < data.class_names.size(); ++i) {
      out << data.class_names[i];
      for (auto v : main->confusion[i]) out << ',' << v;
      out << '\n';
    }
    out << "# within-pair confusion (share of each class predicted as its time-reversed partner)\n";
    out << "class,partner,within_pair\n";
    for (std::size_t i = 0; i < data.class_names.size(); ++i) {
      const auto partner = static_cast<std::size_t>(paired_class(static_cast<int>(i)));
      if (partner >= data.class_names.size()) continue;
      out << data.class_names[i] << ',' << data.class_names[partner] << ','
          << fmt(within_pair_confusion(*main, static_cast<int>(i))) << '\n';
    }
    return 0;
  });
}

int cmd_gradcheck(const RunConfig& config, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    configure_threads(config.threads);
    GradcheckSuiteOptions options;
    options.seeds = config.gradcheck_seeds;
    options.base_seed = config.seed;
    options.op_tolerance = config.gradcheck_op_tolerance;
    options.graph_tolerance = config.gradcheck_graph_tolerance;
    const auto reports = run_gradcheck_suite(options);
    out << "op,cases,worst_rel_error,worst_seed,tolerance,status\n";
    int failed = 0;
    for (const auto& r : reports) {
      out << r.op << ',' << r.cases << ',' << fmt(r.worst_error) << ',' << r.worst_seed << ',' << fmt(r.tolerance) << ','
          << (r.passed() ? "pass" : "FAIL") << '\n';
      if (!r.passed()) {
        ++failed;
        err << "gradcheck failed: " << r.op << " error " << fmt(r.worst_error) << " > " << fmt(r.tolerance) << " (seed "
            << r.worst_seed << ")\n";
      }
    }
    if (failed) err << failed << " of " << reports.size() << " gradient checks failed\n";
    return failed ? 1 : 0;
  });
}

}  // namespace mfnet
