#include "msam/cli.hpp"

#include <cmath>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "msam/errors.hpp"
#include "msam/harness.hpp"

namespace msam {
namespace {

using nlohmann::json;

void write_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw UsageError("cannot write '" + path.string() + "'");
  f << text;
}

int cmd_train(const std::string& config_path, const std::string& out_dir, std::ostream& out) {
  ExperimentConfig config = load_config(config_path);
  if (!out_dir.empty()) config.output_dir = out_dir;
  const auto records = run_comparison(config);
  int code = 0;
  for (const auto& rec : records) {
    out << to_string(rec.optimizer) << ": hash=" << rec.config_hash
        << " epochs=" << rec.epochs_completed;
    if (!rec.metrics.empty()) {
      const auto& m = rec.metrics.back();
      out << " train_acc=" << format_number(m.train.accuracy)
          << " test_acc=" << format_number(m.test.accuracy) << " tau=" << format_number(m.tau);
    }
    if (rec.failed) {
      out << " FAILED at iteration " << rec.failed_iteration.value_or(0) << ": " << rec.error;
      code = 2;
    }
    out << '\n';
  }
  out << "artifacts in " << config.output_dir.string() << '\n';
  return code;
}

int cmd_landscape(const std::string& checkpoint, double radius, std::size_t res,
                  std::uint64_t seed, const std::string& tag, const std::string& out_dir,
                  std::ostream& out) {
  const Checkpoint cp = read_checkpoint(checkpoint);
  const MultimodalModel model = restore_model(cp);
  const Splits data = build_data(cp.config);
  const auto grid =
      landscape_grid(model, data.train.inputs, data.train.labels, res, radius, seed);

  const std::filesystem::path dir =
      out_dir.empty() ? std::filesystem::path(checkpoint).parent_path() : std::filesystem::path(out_dir);
  std::ostringstream csv;
  csv << "alpha,beta,loss\n";
  for (std::size_t i = 0; i < res; ++i)
    for (std::size_t j = 0; j < res; ++j)
      csv << format_number(grid.alphas[i]) << ',' << format_number(grid.betas[j]) << ','
          << format_number(grid.values.at(i, j)) << '\n';
  const auto csv_path = dir / ("landscape_" + tag + ".csv");
  write_file(csv_path, csv.str());

  double lo = grid.values.data()[0], hi = lo;
  for (double v : grid.values.data()) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  json side = {{"checkpoint", checkpoint}, {"config_hash", config_hash(cp.config)},
               {"radius", radius},         {"resolution", res},
               {"seed", seed},             {"direction_draws", grid.attempts},
               {"center_loss", grid.center()}, {"min_loss", lo}, {"max_loss", hi},
               {"evaluated_on", "train"}};
  write_file(dir / ("landscape_" + tag + ".json"), side.dump(2) + "\n");
  out << "center_loss=" << format_number(grid.center()) << " min=" << format_number(lo)
      << " max=" << format_number(hi) << '\n'
      << "wrote " << csv_path.string() << '\n';
  return 0;
}

int cmd_shapley_audit(const std::string& checkpoint, std::size_t batch_index,
                      const std::string& variant, const std::string& target,
                      const std::string& out_path, std::ostream& out) {
  const Checkpoint cp = read_checkpoint(checkpoint);
  const MultimodalModel model = restore_model(cp);
  const Splits data = build_data(cp.config);
  const auto order = batches(data.train, cp.config.batch_size, shuffle_seed(cp.config), 1);
  if (batch_index >= order.size()) {
    throw UsageError("--batch " + std::to_string(batch_index) + " out of range (epoch has " +
                     std::to_string(order.size()) + " batches)");
  }
  const auto& b = order[batch_index];
  AttributionOptions opts{parse_shapley_target(target), parse_shapley_variant(variant), {}};
  const auto attr = attribute_batch(model, b.inputs, b.labels, opts);

  const double residual = attr.efficiency_residual();
  const double scale = std::max(1.0, std::abs(attr.full_value - attr.baseline));
  const bool efficient = std::abs(residual) <= 1e-9 * scale;

  std::ostringstream csv;
  csv << "row,coalition,value\n";
  for (std::size_t s = 0; s < attr.coalition_values.size(); ++s)
    csv << "v," << s << ',' << format_number(attr.coalition_values[s]) << '\n';
  for (std::size_t m = 0; m < attr.modalities(); ++m)
    csv << "phi,m" << m + 1 << ',' << format_number(attr.phi[m]) << '\n';
  for (std::size_t m = 0; m < attr.modalities(); ++m)
    csv << "nu,m" << m + 1 << ',' << format_number(attr.nu[m]) << '\n';
  csv << "dominant,m" << attr.dominant + 1 << ",\n";
  csv << "efficiency_residual,," << format_number(residual) << '\n';
  csv << "efficiency_pass,," << (efficient ? 1 : 0) << '\n';

  const std::filesystem::path path =
      out_path.empty() ? std::filesystem::path(checkpoint).parent_path() / "shapley_audit.csv"
                       : std::filesystem::path(out_path);
  write_file(path, csv.str());
  out << csv.str() << "wrote " << path.string() << '\n';
  return 0;
}

int cmd_gradcheck(const std::string& config_path, std::size_t samples, std::ostream& out) {
  const ExperimentConfig config = config_path.empty() ? default_config() : load_config(config_path);
  config.validate();
  const MultimodalModel model = build_model(config);
  const Splits data = build_data(config);
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < std::min(samples, data.train.size()); ++i) idx.push_back(i);
  const MiniBatch b = gather(data.train, idx);
  GradCheckOptions opts;
  opts.sample = model.params().size();
  opts.seed = config.seed;
  const auto report = grad_check(model.loss_fn(b.inputs, b.labels), model.params(), opts);
  out << "parameters=" << model.params().size() << " checked=" << report.checked.size()
      << " max_rel_err=" << format_number(report.max_rel_err)
      << " worst_index=" << report.worst_index << " flagged=" << report.flagged.size()
      << (report.passed ? " PASS" : " FAIL") << '\n';
  return report.passed ? 0 : 2;
}

int cmd_convergence(const std::string& run_dir, std::optional<std::size_t> calibration,
                    std::ostream& out) {
  const std::filesystem::path dir(run_dir);
  const auto norms = read_grad_norms(dir / "steps.csv");
  const auto r = convergence_report(norms, calibration);
  std::ostringstream csv;
  csv << "t,grad_sq_norm,running_average,bound\n";
  for (std::size_t t = 0; t < norms.size(); ++t)
    csv << t + 1 << ',' << format_number(r.squared_norms[t]) << ','
        << format_number(r.running_average[t]) << ',' << format_number(r.bound[t]) << '\n';
  write_file(dir / "convergence.csv", csv.str());
  const std::size_t n = norms.size();
  const double last = r.running_average.back();
  const double at_cal = r.running_average[r.calibration - 1];
  out << "T=" << n << " calibration=" << r.calibration << " C=" << format_number(r.constant)
      << " g_max=" << format_number(r.g_max) << '\n'
      << "avg(T_cal)=" << format_number(at_cal) << " avg(T)=" << format_number(last)
      << " bound(T)=" << format_number(r.bound.back()) << '\n'
      << "decreasing=" << (last < at_cal ? "yes" : "no")
      << " below_bound=" << (last < r.bound.back() ? "yes" : "no") << '\n';
  return 0;
}

int cmd_export(const std::string& spec_path, const std::string& out_path, std::ostream& out) {
  const SyntheticSpec spec = load_data_spec(spec_path);
  const Splits s = generate(spec);
  write_dataset(out_path, s);
  out << "wrote " << out_path << " (" << s.train.size() << '/' << s.val.size() << '/'
      << s.test.size() << " samples, " << spec.modalities.size() << " modalities)\n";
  return 0;
}

}  // namespace

int cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Modality-aware sharpness-aware minimization experiments", "msam"};
  app.require_subcommand(1);

  std::string config_path, out_dir;
  auto* train = app.add_subcommand("train", "train the optimizers of a config");
  train->add_option("--config", config_path, "experiment config (JSON)")->required();
  train->add_option("--out", out_dir, "override the output directory");

  std::string checkpoint, tag = "default", land_out;
  double radius = 1.0;
  std::size_t res = 21;
  std::uint64_t land_seed = 0;
  auto* land = app.add_subcommand("landscape", "loss surface along two random directions");
  land->add_option("--checkpoint", checkpoint, "checkpoint.json of a run")->required();
  land->add_option("--radius", radius, "grid half-width");
  land->add_option("--res", res, "points per axis (odd)");
  land->add_option("--seed", land_seed, "direction seed");
  land->add_option("--tag", tag, "output name suffix");
  land->add_option("--out", land_out, "output directory (default: next to the checkpoint)");

  std::size_t batch_index = 0;
  std::string variant = "standard", target = "loss", audit_out;
  auto* audit = app.add_subcommand("shapley-audit", "coalition table of one training batch");
  audit->add_option("--checkpoint", checkpoint, "checkpoint.json of a run")->required();
  audit->add_option("--batch", batch_index, "batch index in the first epoch's order");
  audit->add_option("--variant", variant, "standard|paper")
      ->check(CLI::IsMember({"standard", "paper"}));
  audit->add_option("--target", target, "loss|accuracy")->check(CLI::IsMember({"loss", "accuracy"}));
  audit->add_option("--out", audit_out, "CSV path (default: shapley_audit.csv next to checkpoint)");

  std::string gc_config;
  std::size_t gc_samples = 16;
  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of the model gradient");
  gc->add_option("--config", gc_config, "experiment config (default: built-in)");
  gc->add_option("--samples", gc_samples, "training samples in the checked batch")
      ->check(CLI::PositiveNumber);

  std::string run_dir;
  std::size_t calibrate = 0;
  auto* conv = app.add_subcommand("convergence", "running gradient-norm average of a run");
  conv->add_option("--run", run_dir, "run output directory")->required();
  conv->add_option("--calibrate", calibrate, "iteration at which the bound is calibrated");

  std::string spec_path, data_out = "dataset.msamds";
  auto* exp = app.add_subcommand("export-data", "write a synthetic dataset to a binary file");
  exp->add_option("--spec", spec_path, "data spec (JSON)")->required();
  exp->add_option("--out", data_out, "output file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*train) return cmd_train(config_path, out_dir, out);
    if (*land) return cmd_landscape(checkpoint, radius, res, land_seed, tag, land_out, out);
    if (*audit) return cmd_shapley_audit(checkpoint, batch_index, variant, target, audit_out, out);
    if (*gc) return cmd_gradcheck(gc_config, gc_samples, out);
    if (*conv)
      return cmd_convergence(run_dir, calibrate ? std::optional<std::size_t>(calibrate) : std::nullopt,
                             out);
    if (*exp) return cmd_export(spec_path, data_out, out);
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << '\n';
    return 2;
  } catch (const SpecError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const DimensionError& e) {
    err << "dimension error: " << e.what() << '\n';
    return 1;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "failure: " << e.what() << '\n';
    return 2;
  }
  return 1;
}

}  // namespace msam
