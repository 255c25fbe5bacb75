#include <CLI11.hpp>

#include <iostream>
#include <optional>

#include "mfnet/checkpoint.hpp"
#include "mfnet/commands.hpp"
#include "mfnet/error.hpp"

namespace {

struct CommonFlags {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
};

void add_common(CLI::App* cmd, CommonFlags& flags) {
  cmd->add_option("--config", flags.config_path, "Config file of key=value lines");
  cmd->add_option("--set", flags.overrides, "Override one key, e.g. --set optim.lr=0.02 (repeatable)");
  cmd->add_option("--seed", flags.seed, "Run seed (run.seed)");
  cmd->add_option("--out-dir", flags.out_dir, "Output directory (run.out_dir)");
}

mfnet::RunConfig resolve(const CommonFlags& flags, const std::string& fallback_text = "") {
  mfnet::RunConfig config;
  if (!flags.config_path.empty()) config = mfnet::load_config_file(flags.config_path);
  else if (!fallback_text.empty()) config = mfnet::parse_config(fallback_text);
  for (const auto& o : flags.overrides) mfnet::apply_override(config, o);
  if (flags.seed) config.seed = *flags.seed;
  if (flags.out_dir) config.out_dir = *flags.out_dir;
  return config;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Action recognition with shift-based motion blocks: synthetic data, training, evaluation, gradient checks"};
  app.require_subcommand(1);

  CommonFlags gen_flags, train_flags, eval_flags, grad_flags;
  auto* gen = app.add_subcommand("gen-data", "Write the synthetic symmetric-gesture dataset as frame folders");
  add_common(gen, gen_flags);
  auto* train = app.add_subcommand("train", "Train a model and write metrics and checkpoints");
  add_common(train, train_flags);
  std::string resume;
  train->add_option("--resume", resume, "Checkpoint to continue from");
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint: accuracy per K_eval and confusion matrix");
  add_common(eval, eval_flags);
  std::string checkpoint;
  eval->add_option("--checkpoint", checkpoint, "Checkpoint to evaluate")->required();
  auto* grad = app.add_subcommand("gradcheck", "Finite-difference checks of every backward rule");
  add_common(grad, grad_flags);

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return mfnet::cmd_gen_data(resolve(gen_flags), std::cout, std::cerr);
    if (train->parsed()) {
      std::optional<std::filesystem::path> from;
      if (!resume.empty()) from = resume;
      return mfnet::cmd_train(resolve(train_flags), from, std::cout, std::cerr);
    }
    if (eval->parsed()) {
      const std::string embedded = eval_flags.config_path.empty() ? mfnet::read_checkpoint(checkpoint).config_text : "";
      return mfnet::cmd_eval(resolve(eval_flags, embedded), checkpoint, std::cout, std::cerr);
    }
    if (grad->parsed()) return mfnet::cmd_gradcheck(resolve(grad_flags), std::cout, std::cerr);
  } catch (const mfnet::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
