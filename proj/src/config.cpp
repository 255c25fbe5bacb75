#include "mfnet/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "mfnet/error.hpp"

namespace mfnet {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
}

template <typename T>
T parse_number(const std::string& text) {
  const std::string t = trim(text);
  T v{};
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || ec != std::errc() || ptr != t.data() + t.size())
    throw ConfigError("cannot parse '" + text + "' as a number");
  return v;
}

template <typename T>
std::string format_number(T v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

template <typename T>
std::vector<T> parse_list(const std::string& text) {
  std::vector<T> out;
  if (trim(text).empty()) return out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<T>(item));
  return out;
}

template <typename T>
std::string format_list(const std::vector<T>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + format_number(v[i]);
  return s;
}

bool parse_bool(const std::string& text) {
  const std::string t = trim(text);
  if (t == "true" || t == "1") return true;
  if (t == "false" || t == "0") return false;
  throw ConfigError("expected true or false, got '" + text + "'");
}

template <typename T>
T at_least(T v, T lo) {
  if (v < lo) throw ConfigError("must be >= " + format_number(lo));
  return v;
}

struct Field {
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename T>
Field number(T RunConfig::*member, T lo) {
  return {[member, lo](RunConfig& c, const std::string& v) { c.*member = at_least(parse_number<T>(v), lo); },
          [member](const RunConfig& c) { return format_number(c.*member); }};
}

template <typename T>
Field list(std::vector<T> RunConfig::*member) {
  return {[member](RunConfig& c, const std::string& v) { c.*member = parse_list<T>(v); },
          [member](const RunConfig& c) { return format_list(c.*member); }};
}

const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table = [] {
    std::vector<std::pair<std::string, Field>> t;
    t.emplace_back("model.input_size", number(&RunConfig::input_size, std::int64_t{1}));
    t.emplace_back("model.stem_channels", number(&RunConfig::stem_channels, std::int64_t{1}));
    t.emplace_back("model.stage_channels", list(&RunConfig::stage_channels));
    t.emplace_back("model.blocks_per_stage", list(&RunConfig::blocks_per_stage));
    t.emplace_back("model.num_classes", number(&RunConfig::num_classes, std::int64_t{1}));
    t.emplace_back("model.dropout_keep", number(&RunConfig::dropout_keep, 0.0));
    t.emplace_back("motion.variant",
                   Field{[](RunConfig& c, const std::string& v) {
                           const std::string s = trim(v);
                           if (s == "concat") c.motion_variant = FusionVariant::Concat;
                           else if (s == "sum") c.motion_variant = FusionVariant::Sum;
                           else if (s == "off") c.motion_variant.reset();
                           else throw ConfigError("expected concat, sum or off, got '" + v + "'");
                         },
                         [](const RunConfig& c) {
                           return c.motion_variant ? std::string(*c.motion_variant == FusionVariant::Sum ? "sum" : "concat")
                                                   : std::string("off");
                         }});
    t.emplace_back("motion.stages", list(&RunConfig::motion_stages));
    t.emplace_back("motion.reduction", number(&RunConfig::motion_reduction, 1));
    t.emplace_back("motion.directions",
                   Field{[](RunConfig& c, const std::string& v) { c.motion_directions = DirectionSet::parse(trim(v)); },
                         [](const RunConfig& c) { return c.motion_directions.to_string(); }});
    t.emplace_back("sampling.k_train", number(&RunConfig::k_train, 1));
    t.emplace_back("sampling.k_eval", number(&RunConfig::k_eval, 1));
    t.emplace_back("sampling.k_eval_sweep", list(&RunConfig::k_eval_sweep));
    t.emplace_back("optim.lr", number(&RunConfig::lr, 0.0));
    t.emplace_back("optim.momentum", number(&RunConfig::momentum, 0.0));
    t.emplace_back("optim.weight_decay", number(&RunConfig::weight_decay, 0.0));
    t.emplace_back("optim.batch_size", number(&RunConfig::batch_size, 1));
    t.emplace_back("optim.epochs", number(&RunConfig::epochs, 0));
    t.emplace_back("optim.lr_step", number(&RunConfig::lr_step, 1));
    t.emplace_back("optim.lr_gamma", number(&RunConfig::lr_gamma, 0.0));
    t.emplace_back("data.root", Field{[](RunConfig& c, const std::string& v) { c.data_root = trim(v); },
                                      [](const RunConfig& c) { return c.data_root; }});
    t.emplace_back("data.seed",
                   Field{[](RunConfig& c, const std::string& v) {
                           if (trim(v) == "auto") c.data_seed.reset();
                           else c.data_seed = parse_number<std::uint64_t>(v);
                         },
                         [](const RunConfig& c) { return c.data_seed ? format_number(*c.data_seed) : std::string("auto"); }});
    t.emplace_back("data.count_per_class", number(&RunConfig::count_per_class, 1));
    t.emplace_back("data.val_fraction", number(&RunConfig::val_fraction, 0.0));
    t.emplace_back("data.num_frames", number(&RunConfig::num_frames, 1));
    t.emplace_back("data.image_size", number(&RunConfig::image_size, 8));
    t.emplace_back("data.noise_std", number(&RunConfig::noise_std, 0.0));
    t.emplace_back("data.workers", number(&RunConfig::workers, 0));
    t.emplace_back("data.mean", list(&RunConfig::mean));
    t.emplace_back("data.std", list(&RunConfig::stddev));
    t.emplace_back("augment.scales", list(&RunConfig::scales));
    t.emplace_back("augment.crop_size", number(&RunConfig::crop_size, 1));
    t.emplace_back("augment.flip", Field{[](RunConfig& c, const std::string& v) { c.flip = parse_bool(v); },
                                         [](const RunConfig& c) { return std::string(c.flip ? "true" : "false"); }});
    t.emplace_back("run.seed", number(&RunConfig::seed, std::uint64_t{0}));
    t.emplace_back("run.out_dir", Field{[](RunConfig& c, const std::string& v) { c.out_dir = trim(v); },
                                        [](const RunConfig& c) { return c.out_dir; }});
    t.emplace_back("run.threads", number(&RunConfig::threads, 1));
    t.emplace_back("run.checkpoint_every", number(&RunConfig::checkpoint_every, 0));
    t.emplace_back("run.eval_every", number(&RunConfig::eval_every, 0));
    t.emplace_back("gradcheck.seeds", number(&RunConfig::gradcheck_seeds, 1));
    t.emplace_back("gradcheck.op_tolerance", number(&RunConfig::gradcheck_op_tolerance, 0.0));
    t.emplace_back("gradcheck.graph_tolerance", number(&RunConfig::gradcheck_graph_tolerance, 0.0));
    return t;
  }();
  return table;
}

const Field& field(const std::string& key) {
  for (const auto& [name, f] : fields())
    if (name == key) return f;
  throw ConfigError("unknown config key '" + key + "'");
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
  const Field& f = field(key);
  try {
    f.set(*this, value);
  } catch (const std::exception& e) {
    throw ConfigError(key + ": " + e.what());
  }
}

std::string RunConfig::get(const std::string& key) const { return field(key).get(*this); }

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n;
    for (const auto& [name, f] : fields()) n.push_back(name);
    return n;
  }();
  return names;
}

void RunConfig::validate() const {
  if (stage_channels.empty()) throw ConfigError("model.stage_channels must list at least one stage");
  if (blocks_per_stage.size() != stage_channels.size())
    throw ConfigError("model.blocks_per_stage has " + std::to_string(blocks_per_stage.size()) +
                      " entries but model.stage_channels has " + std::to_string(stage_channels.size()));
  if (dropout_keep <= 0.0 || dropout_keep > 1.0) throw ConfigError("model.dropout_keep must lie in (0, 1]");
  if (motion_variant && k_train < 2)
    throw ConfigError("motion blocks need sampling.k_train >= 2 (got " + std::to_string(k_train) +
                      "); use motion.variant=off for single-snippet training");
  if (motion_variant && k_eval < 2) throw ConfigError("motion blocks need sampling.k_eval >= 2");
  for (int k : k_eval_sweep)
    if (k < (motion_variant ? 2 : 1)) throw ConfigError("sampling.k_eval_sweep entry " + std::to_string(k) + " is too small");
  if (count_per_class < 1) throw ConfigError("data.count_per_class must be >= 1");
  if (val_fraction >= 1.0) throw ConfigError("data.val_fraction must be < 1");
  if (mean.size() != 3 || stddev.size() != 3) throw ConfigError("data.mean and data.std need 3 values");
  for (double s : stddev)
    if (s <= 0) throw ConfigError("data.std entries must be positive");
  if (lr_gamma <= 0) throw ConfigError("optim.lr_gamma must be positive");
  if (crop_size != input_size) throw ConfigError("augment.crop_size must equal model.input_size");
  model_config().validate();
}

ModelConfig RunConfig::model_config() const {
  ModelConfig m;
  m.input_size = input_size;
  m.stem_channels = stem_channels;
  m.stages.clear();
  for (std::size_t i = 0; i < stage_channels.size(); ++i)
    m.stages.push_back({stage_channels[i], i < blocks_per_stage.size() ? blocks_per_stage[i] : 1, i > 0});
  m.num_classes = num_classes;
  m.dropout_keep = dropout_keep;
  m.motion.variant = motion_variant;
  m.motion.stages = motion_stages;
  m.motion.reduction_factor = motion_reduction;
  m.motion.directions = motion_directions;
  return m;
}

InputSpec RunConfig::input_spec() const {
  InputSpec in;
  in.augment.scales = scales;
  in.augment.crop_height = crop_size;
  in.augment.crop_width = crop_size;
  in.augment.horizontal_flip = flip;
  for (std::size_t c = 0; c < 3 && c < mean.size(); ++c) in.mean[c] = mean[c];
  for (std::size_t c = 0; c < 3 && c < stddev.size(); ++c) in.stddev[c] = stddev[c];
  return in;
}

SyntheticSpec RunConfig::synthetic_spec() const {
  return {image_size, image_size, num_frames, noise_std, effective_data_seed()};
}

TrainOptions RunConfig::train_options() const {
  TrainOptions t;
  t.k = k_train;
  t.batch_size = batch_size;
  t.seed = seed;
  t.workers = workers;
  t.input = input_spec();
  return t;
}

RunConfig parse_config(const std::string& text, RunConfig base) {
  std::stringstream ss(text);
  std::string line;
  int number = 0;
  while (std::getline(ss, line)) {
    ++number;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(number) + ": expected key=value");
    try {
      base.set(trim(line.substr(0, eq)), line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(number) + ": " + e.what());
    }
  }
  return base;
}

RunConfig load_config_file(const std::string& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), std::move(base));
}

void apply_override(RunConfig& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not key=value");
  config.set(trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

std::string serialize_config(const RunConfig& config) {
  std::string out;
  for (const auto& key : RunConfig::keys()) out += key + "=" + config.get(key) + "\n";
  return out;
}

std::string config_hash(const RunConfig& config) {
  std::string text;
  for (const auto& key : RunConfig::keys())
    if (key != "run.out_dir") text += key + "=" + config.get(key) + "\n";
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(text)));
  return buf;
}

bool same_architecture(const RunConfig& a, const RunConfig& b) {
  for (const auto& key : RunConfig::keys())
    if (key.rfind("model.", 0) == 0 || key == "motion.variant" || key == "motion.stages" || key == "motion.reduction" ||
        key == "motion.directions")
      if (key != "model.dropout_keep" && a.get(key) != b.get(key)) return false;
  return true;
}

}  // namespace mfnet
