// Command-line front end: dataset synthesis, training, evaluation, labeling,
// diameter measurement, and a gradient self-check.
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

#include <array>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "stmixer/stmixer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

void print_config_echo(const json& j) { std::cout << "config: " << j.dump() << "\n"; }

json load_json_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw stmixer::DataError("cannot open config file: " + path);
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw stmixer::DataError("malformed config file " + path + ": " + e.what());
  }
  return j;
}

// Applies recognized keys of a JSON object onto a SynthConfig; unknown keys
// are an error so typos do not silently vanish.
void apply_synth_overrides(const json& j, stmixer::SynthConfig& cfg) {
  for (const auto& [key, value] : j.items()) {
    if (key == "roi_size") {
      cfg.roi_size = value.get<int>();
    } else if (key == "spacing") {
      cfg.spacing = {value.at(0).get<double>(), value.at(1).get<double>(),
                     value.at(2).get<double>()};
    } else if (key == "radius_lo_mm") {
      cfg.radius_lo_mm = value.get<double>();
    } else if (key == "radius_hi_mm") {
      cfg.radius_hi_mm = value.get<double>();
    } else if (key == "class_priors") {
      cfg.class_priors = {value.at(0).get<double>(), value.at(1).get<double>(),
                          value.at(2).get<double>()};
    } else if (key == "missing_t0_prob") {
      cfg.missing_t0_prob = value.get<double>();
    } else if (key == "noise_std") {
      cfg.noise_std = value.get<double>();
    } else {
      throw std::invalid_argument("unknown synth config key: " + key);
    }
  }
}

stmixer::ModelConfig make_model_config(const std::string& mixer, double alpha) {
  stmixer::ModelConfig mc;
  mc.mixer = stmixer::mixer_from_string(mixer);
  mc.loss.alpha = alpha;
  return mc;
}

json train_echo(const std::string& dataset, const std::string& out, const std::string& mixer,
                const stmixer::TrainConfig& tc) {
  return json{{"command", "train"},   {"dataset", dataset},
              {"out", out},           {"mixer", mixer},
              {"seed", tc.seed},      {"alpha", tc.alpha},
              {"epochs", tc.total_epochs}, {"batch", tc.batch_size},
              {"lr", tc.base_lr},     {"warmup_epochs", tc.warmup_epochs},
              {"weight_decay", tc.weight_decay}};
}

int cmd_synth(const std::string& out_dir, int n, uint64_t seed, const std::string& preset,
              const std::string& config_path) {
  stmixer::SynthConfig cfg;
  if (preset == "acceptance") {
    cfg = stmixer::acceptance_synth_config();
  } else if (preset == "balanced") {
    cfg = stmixer::balanced_synth_config();
  } else if (preset != "default") {
    throw std::invalid_argument("unknown preset: " + preset);
  }
  json overrides = json::object();
  if (!config_path.empty()) {
    overrides = load_json_file(config_path);
    apply_synth_overrides(overrides, cfg);
  }
  print_config_echo(json{{"command", "synth"},
                         {"out", out_dir},
                         {"n", n},
                         {"seed", seed},
                         {"preset", preset},
                         {"overrides", overrides}});
  stmixer::Dataset ds = stmixer::generate_dataset(cfg, n, seed);
  stmixer::save_dataset(out_dir, ds);
  int counts[3] = {0, 0, 0};
  for (const auto& c : ds.cases) counts[static_cast<int>(c.label)]++;
  std::printf("wrote %zu cases to %s (stability=%d dilatation=%d shrinkage=%d)\n",
              ds.cases.size(), out_dir.c_str(), counts[0], counts[1], counts[2]);
  return kExitOk;
}

int cmd_train(const std::string& dataset_dir, const std::string& out_dir,
              const std::string& mixer, stmixer::TrainConfig tc,
              const std::string& config_path) {
  if (!config_path.empty()) {
    const json j = load_json_file(config_path);
    for (const auto& [key, value] : j.items()) {
      if (key == "warmup_epochs") {
        tc.warmup_epochs = value.get<int>();
      } else if (key == "weight_decay") {
        tc.weight_decay = value.get<double>();
      } else if (key == "warmup_start") {
        tc.warmup_start = value.get<double>();
      } else {
        throw std::invalid_argument("unknown train config key: " + key);
      }
    }
  }
  const json echo = train_echo(dataset_dir, out_dir, mixer, tc);
  print_config_echo(echo);
  stmixer::Dataset ds = stmixer::load_dataset(dataset_dir);
  stmixer::Model<float> model(make_model_config(mixer, tc.alpha));
  model.init(tc.seed);
  const stmixer::TrainResult result = stmixer::train(model, ds, tc);

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw stmixer::DataError("cannot create output directory: " + out_dir);
  stmixer::write_metrics_csv((fs::path(out_dir) / "metrics.csv").string(), result);
  stmixer::save_checkpoint((fs::path(out_dir) / "checkpoint.bin").string(), model, echo.dump());

  std::printf("best epoch %d (val auc_h1=%.4f)\n", result.best_epoch, result.best_auc_h1);
  std::cout << result.history.back().val.pretty() << "\n";
  if (result.best_epoch >= 0) {
    std::cout << "best validation report:\n"
              << result.history[static_cast<size_t>(result.best_epoch)].val.pretty() << "\n";
  }
  return kExitOk;
}

int cmd_eval(const std::string& dataset_dir, const std::string& checkpoint,
             const std::string& split_name) {
  print_config_echo(json{{"command", "eval"},
                         {"dataset", dataset_dir},
                         {"checkpoint", checkpoint},
                         {"split", split_name}});
  stmixer::Dataset ds = stmixer::load_dataset(dataset_dir);
  // The checkpoint's config echo pins the mixer and alpha it was trained with.
  std::string mixer = "stm";
  double alpha = 1.0;
  try {
    const json j = json::parse(stmixer::read_checkpoint_echo(checkpoint));
    if (j.contains("mixer")) mixer = j["mixer"].get<std::string>();
    if (j.contains("alpha")) alpha = j["alpha"].get<double>();
  } catch (const json::exception&) {
    // Echo of an unknown shape: keep defaults.
  }
  stmixer::Model<float> model(make_model_config(mixer, alpha));
  stmixer::load_checkpoint(checkpoint, model);
  const stmixer::Split split = stmixer::split_from_string(split_name);
  const std::vector<int> idx = ds.indices(split);
  const stmixer::EvalReport rep = stmixer::evaluate(model, ds, idx, alpha == 0.0);
  std::cout << stmixer::EvalReport::csv_header() << "\n" << rep.csv_row() << "\n";
  return kExitOk;
}

// Reads `id,d_prev,d_curr` rows and echoes them with the evolution label
// appended. A leading header row is passed through.
int cmd_label(const std::string& in_path, const std::string& out_path) {
  print_config_echo(json{{"command", "label"}, {"in", in_path}, {"out", out_path}});
  std::ifstream is(in_path);
  if (!is) throw stmixer::DataError("cannot open diameters CSV: " + in_path);
  std::ostream* os = &std::cout;
  std::ofstream of;
  if (!out_path.empty()) {
    of.open(out_path, std::ios::binary);
    if (!of) throw stmixer::DataError("cannot write: " + out_path);
    os = &of;
  }
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (line_no == 1 && line.find("d_prev") != std::string::npos) {
      *os << line << ",label\n";
      continue;
    }
    const size_t c1 = line.find(',');
    const size_t c2 = c1 == std::string::npos ? std::string::npos : line.find(',', c1 + 1);
    if (c2 == std::string::npos) {
      throw stmixer::DataError(in_path + ":" + std::to_string(line_no) +
                               ": expected id,d_prev,d_curr");
    }
    double d_prev = 0, d_curr = 0;
    try {
      d_prev = std::stod(line.substr(c1 + 1, c2 - c1 - 1));
      d_curr = std::stod(line.substr(c2 + 1));
    } catch (const std::exception&) {
      throw stmixer::DataError(in_path + ":" + std::to_string(line_no) +
                               ": unparsable diameter");
    }
    stmixer::EvolutionLabel y;
    try {
      y = stmixer::label_evolution(d_prev, d_curr);
    } catch (const std::invalid_argument& e) {
      throw stmixer::DataError(in_path + ":" + std::to_string(line_no) + ": " + e.what());
    }
    *os << line << ',' << stmixer::to_string(y) << "\n";
  }
  return kExitOk;
}

int cmd_measure(const std::string& volume_path, const std::vector<int>& dims,
                const std::vector<double>& spacing) {
  print_config_echo(json{{"command", "measure"},
                         {"volume", volume_path},
                         {"dims", dims},
                         {"spacing", spacing}});
  const stmixer::Volume3D mask = stmixer::read_raw_volume(
      volume_path, dims[0], dims[1], dims[2], {spacing[0], spacing[1], spacing[2]});
  stmixer::DiameterMeasurement m;
  try {
    m = stmixer::measure_diameter(mask);
  } catch (const std::invalid_argument& e) {
    throw stmixer::DataError(volume_path + ": " + e.what());
  }
  std::printf("%.6g\n", m.value_mm);
  return kExitOk;
}

// Finite-difference check of the full default model on a two-case synthetic
// batch (one case missing its prior scan), run in double precision.
int cmd_gradcheck(uint64_t seed, int samples, double eps) {
  print_config_echo(
      json{{"command", "gradcheck"}, {"seed", seed}, {"samples", samples}, {"eps", eps}});
  stmixer::SynthConfig scfg = stmixer::balanced_synth_config();
  scfg.missing_t0_prob = 0.0;
  stmixer::SynthCase with_t0 = stmixer::generate_case(seed, 0, scfg);
  scfg.missing_t0_prob = 1.0;
  stmixer::SynthCase without_t0 = stmixer::generate_case(seed, 1, scfg);
  const std::array<const stmixer::LabeledCase*, 2> batch{&with_t0.labeled, &without_t0.labeled};

  stmixer::ModelConfig mc;
  stmixer::Model<double> model(mc);
  model.init(seed);
  auto build = [&](stmixer::Tape<double>& t) {
    stmixer::ModelValues<double> mv = model.on(t);
    std::vector<stmixer::Tape<double>::Value> losses;
    for (const stmixer::LabeledCase* c : batch) {
      stmixer::HeadLogits<double> out = model.forward(t, mv, *c);
      losses.push_back(stmixer::hloss(t, out.h1, out.h2, c->label, mc.loss));
    }
    return t.mean(losses);
  };
  stmixer::GradCheckOptions<double> opt;
  opt.eps = eps;
  opt.samples_per_tensor = samples;
  opt.seed = seed;
  const std::vector<stmixer::ParamSlot<double>*> params = model.param_list();
  const stmixer::GradCheckResult<double> res = stmixer::grad_check<double>(build, params, opt);
  std::printf("max relative error %.3e over %zu coordinates (worst: %s[%zu] %.3e vs %.3e)\n",
              res.max_rel_err, res.coords_checked, res.worst_param.c_str(), res.worst_index,
              res.worst_analytic, res.worst_numeric);
  if (!(res.max_rel_err < 1e-3)) {
    std::fprintf(stderr, "gradient check failed: %.3e >= 1e-3\n", res.max_rel_err);
    return kExitNumeric;
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Growth-trend prediction for paired 3D nodule scans"};
  app.require_subcommand(1);

  uint64_t seed = 0;
  std::string config_path;
  std::string out_dir;
  std::string dataset_dir;
  double alpha = 1.0;
  int epochs = 60;
  int batch = 16;
  double lr = 5e-4;
  std::string mixer = "stm";

  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset directory");
  int synth_n = 100;
  std::string preset = "default";
  synth->add_option("--out", out_dir, "Output directory")->required();
  synth->add_option("--n", synth_n, "Number of cases");
  synth->add_option("--seed", seed, "Dataset seed");
  synth->add_option("--preset", preset, "Config preset: default, acceptance, balanced");
  synth->add_option("--config", config_path, "JSON file with generator overrides");

  auto* train = app.add_subcommand("train", "Train a model on a dataset directory");
  train->add_option("--dataset", dataset_dir, "Dataset directory")->required();
  train->add_option("--out", out_dir, "Output directory for checkpoint and metrics")->required();
  train->add_option("--seed", seed, "Training seed");
  train->add_option("--alpha", alpha, "H-loss H1 weight");
  train->add_option("--epochs", epochs, "Total epochs (also the schedule horizon)");
  train->add_option("--batch", batch, "Batch size");
  train->add_option("--lr", lr, "Base learning rate (peak is lr*batch/64)");
  train->add_option("--mixer", mixer, "Mixer: stm or concat")
      ->check(CLI::IsMember({"stm", "concat"}));
  train->add_option("--config", config_path, "JSON file with trainer overrides");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset split");
  std::string checkpoint, split_name = "val";
  eval->add_option("--dataset", dataset_dir, "Dataset directory")->required();
  eval->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  eval->add_option("--split", split_name, "Split: train, val, test")
      ->check(CLI::IsMember({"train", "val", "test"}));

  auto* label = app.add_subcommand("label", "Append evolution labels to a diameters CSV");
  std::string label_in, label_out;
  label->add_option("--in", label_in, "CSV with id,d_prev,d_curr rows")->required();
  label->add_option("--out", label_out, "Output CSV (default: stdout)");

  auto* measure = app.add_subcommand("measure", "Measure a mask volume's diameter in mm");
  std::string volume_path;
  std::vector<int> dims;
  std::vector<double> spacing{1.0, 1.0, 1.0};
  measure->add_option("--volume", volume_path, "Raw little-endian float32 mask file")
      ->required();
  measure->add_option("--dims", dims, "Voxel counts: z y x")->expected(3)->required();
  measure->add_option("--spacing", spacing, "Voxel spacing in mm: z y x")->expected(3);

  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of the full model");
  int gc_samples = 1;
  double gc_eps = 1e-4;
  gradcheck->add_option("--seed", seed, "Seed for data and parameters");
  gradcheck->add_option("--samples", gc_samples, "Coordinates probed per tensor");
  gradcheck->add_option("--eps", gc_eps, "Finite-difference step");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (synth->parsed()) return cmd_synth(out_dir, synth_n, seed, preset, config_path);
    if (train->parsed()) {
      stmixer::TrainConfig tc;
      tc.seed = seed;
      tc.alpha = alpha;
      tc.total_epochs = epochs;
      tc.batch_size = batch;
      tc.base_lr = lr;
      return cmd_train(dataset_dir, out_dir, mixer, tc, config_path);
    }
    if (eval->parsed()) return cmd_eval(dataset_dir, checkpoint, split_name);
    if (label->parsed()) return cmd_label(label_in, label_out);
    if (measure->parsed()) return cmd_measure(volume_path, dims, spacing);
    if (gradcheck->parsed()) return cmd_gradcheck(seed, gc_samples, gc_eps);
    std::fprintf(stderr, "no subcommand\n");
    return kExitUsage;
  } catch (const stmixer::NumericError& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return kExitNumeric;
  } catch (const stmixer::DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kExitData;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "invalid arguments: %s\n", e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitData;
  }
}
