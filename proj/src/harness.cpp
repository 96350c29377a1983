#include "msam/harness.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "msam/errors.hpp"

namespace msam {

using nlohmann::json;

std::string format_number(std::optional<double> v) {
  if (!v) return "";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", *v);
  return buf;
}

MultimodalModel build_model(const ExperimentConfig& config) {
  Rng rng(mix_seed(config.seed, 0x1d));
  return MultimodalModel::build(config.model, rng);
}

Splits build_data(const ExperimentConfig& config) { return generate(config.data); }

std::uint64_t shuffle_seed(const ExperimentConfig& config) { return mix_seed(config.seed, 0x5b); }

namespace {

bool uses_attribution(OptimizerKind k) {
  return k == OptimizerKind::msam || k == OptimizerKind::msam_branch;
}

std::vector<double> mono_accuracies(const MultimodalModel& model, const Dataset& d) {
  std::vector<double> out;
  for (std::size_t m = 0; m < model.modalities(); ++m) out.push_back(mono_modal_accuracy(model, d, m));
  return out;
}

struct EpochAccumulator {
  std::size_t iterations = 0;
  double grad_sq = 0.0;
  std::vector<double> nu_sum;
  std::vector<std::size_t> dominant_count;
  std::size_t nu_iterations = 0;

  explicit EpochAccumulator(std::size_t modalities)
      : nu_sum(modalities, 0.0), dominant_count(modalities, 0) {}

  void add(const StepReport& r) {
    ++iterations;
    grad_sq += r.grad_norm * r.grad_norm;
    if (r.dominant) {
      ++nu_iterations;
      for (std::size_t m = 0; m < nu_sum.size(); ++m) nu_sum[m] += r.nu[m];
      ++dominant_count[*r.dominant];
    }
  }
};

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw UsageError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw UsageError("write to '" + path.string() + "' failed");
}

std::string steps_csv(const std::vector<StepTrace>& steps, std::size_t modalities) {
  std::ostringstream out;
  out << "t,epoch,loss,grad_norm,perturbation_norm,lr,rho,dominant";
  for (std::size_t m = 1; m <= modalities; ++m) out << ",nu_m" << m;
  out << '\n';
  for (const auto& s : steps) {
    out << s.t << ',' << s.epoch << ',' << format_number(s.loss) << ','
        << format_number(s.grad_norm) << ',' << format_number(s.perturbation_norm) << ','
        << format_number(s.lr) << ',' << format_number(s.rho) << ',';
    if (s.dominant) out << *s.dominant + 1;
    for (std::size_t m = 0; m < modalities; ++m) {
      out << ',';
      if (!s.nu.empty()) out << format_number(s.nu[m]);
    }
    out << '\n';
  }
  return out.str();
}

json metric_json(const MetricRecord& r) {
  json j;
  j["epoch"] = r.epoch;
  j["train"] = {{"loss", r.train.loss}, {"acc", r.train.accuracy}};
  j["val"] = {{"loss", r.val.loss}, {"acc", r.val.accuracy}};
  j["test"] = {{"loss", r.test.loss}, {"acc", r.test.accuracy}};
  j["tau"] = r.tau ? json(*r.tau) : json(nullptr);
  j["mono_test"] = r.mono_test;
  j["mean_nu"] = r.mean_nu;
  j["dominant_share"] = r.dominant_share;
  j["grad_sq_norm"] = r.grad_sq_norm;
  return j;
}

void write_artifacts(const ExperimentConfig& config, const RunRecord& rec) {
  const auto& dir = config.output_dir;
  std::filesystem::create_directories(dir);
  const std::size_t modalities = config.model.modalities();
  write_text(dir / "metrics.csv", metrics_csv(rec.metrics, modalities));
  write_text(dir / "steps.csv", steps_csv(rec.steps, modalities));
  write_checkpoint(dir / "checkpoint.json", config, rec.final_params);

  json s;
  s["config_hash"] = rec.config_hash;
  s["optimizer"] = to_string(rec.optimizer);
  s["config"] = to_json(config);
  s["epochs_completed"] = rec.epochs_completed;
  s["iterations"] = rec.steps.size();
  s["early_stopped"] = rec.early_stopped;
  s["failed"] = rec.failed;
  s["failed_iteration"] = rec.failed_iteration ? json(*rec.failed_iteration) : json(nullptr);
  s["error"] = rec.error;
  s["wall_clock_seconds"] = rec.wall_clock_seconds;
  s["final"] = rec.metrics.empty() ? json(nullptr) : metric_json(rec.metrics.back());
  if (rec.convergence) {
    const auto& c = *rec.convergence;
    s["convergence"] = {{"constant", c.constant},
                        {"calibration", c.calibration},
                        {"g_max", c.g_max},
                        {"final_average", c.running_average.back()},
                        {"final_bound", c.bound.back()}};
  }
  write_text(dir / "summary.json", s.dump(2) + "\n");
}

}  // namespace

std::string metrics_csv_header(std::size_t modalities) {
  std::string h = "epoch,split,loss,acc,tau";
  for (std::size_t m = 1; m <= modalities; ++m) h += ",acc_m" + std::to_string(m);
  for (std::size_t m = 1; m <= modalities; ++m) h += ",nu_m" + std::to_string(m);
  h += ",dom_freq,grad_sq_norm,lr,rho";
  return h;
}

std::string metrics_csv(const std::vector<MetricRecord>& records, std::size_t modalities) {
  std::ostringstream out;
  out << metrics_csv_header(modalities) << '\n';
  for (const auto& r : records) {
    const std::pair<const char*, std::pair<const LossAccuracy*, const std::vector<double>*>> rows[] = {
        {"train", {&r.train, &r.mono_train}},
        {"val", {&r.val, &r.mono_val}},
        {"test", {&r.test, &r.mono_test}}};
    for (const auto& [split, entry] : rows) {
      out << r.epoch << ',' << split << ',' << format_number(entry.first->loss) << ','
          << format_number(entry.first->accuracy) << ',' << format_number(r.tau);
      for (std::size_t m = 0; m < modalities; ++m) out << ',' << format_number((*entry.second)[m]);
      for (std::size_t m = 0; m < modalities; ++m) {
        out << ',';
        if (!r.mean_nu.empty()) out << format_number(r.mean_nu[m]);
      }
      out << ',' << format_number(r.dom_freq) << ',' << format_number(r.grad_sq_norm) << ','
          << format_number(r.lr) << ',' << format_number(r.rho) << '\n';
    }
  }
  return out.str();
}

RunRecord run(const ExperimentConfig& config, const RunOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  config.validate();

  RunRecord rec;
  rec.config_hash = config_hash(config);
  rec.optimizer = config.optimizer.kind;

  const Splits data = build_data(config);
  MultimodalModel model = build_model(config);
  const OptimConfig opt = config.resolved_optimizer();
  const std::size_t modalities = model.modalities();
  BatchObjective objective(model, AttributionOptions{opt.shapley_target, opt.shapley_variant, {}});
  OptimState state(model.params().size());
  const std::uint64_t shuffle = shuffle_seed(config);

  double best_val = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;

  try {
    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
      EpochAccumulator acc(modalities);
      StepReport last;
      for (const auto& batch : batches(data.train, config.batch_size, shuffle, epoch)) {
        objective.set_batch(batch.inputs, batch.labels);
        StepReport r = optimizer_step(objective, model.params().values(), state, opt);
        if (options.check_passes) {
          const auto expected = expected_passes(opt.kind, modalities, r.perturbed_loss.has_value(),
                                                r.attribution_refreshed, opt.shapley_target);
          if (!(r.passes == expected)) {
            throw std::logic_error("iteration " + std::to_string(r.t) + ": pass count mismatch");
          }
        }
        acc.add(r);
        rec.steps.push_back(StepTrace{epoch, r.t, r.loss, r.grad_norm, r.perturbation_norm, r.lr,
                                      r.rho, r.dominant, r.nu});
        last = std::move(r);
      }
      rec.epochs_completed = epoch;

      if (epoch % config.eval_every != 0 && epoch != config.epochs) continue;
      MetricRecord m;
      m.epoch = epoch;
      m.train = evaluate_dataset(model, data.train);
      m.val = evaluate_dataset(model, data.val);
      m.test = evaluate_dataset(model, data.test);
      m.tau = overfitting_gap(m.train.accuracy, m.test.accuracy);
      m.mono_train = mono_accuracies(model, data.train);
      m.mono_val = mono_accuracies(model, data.val);
      m.mono_test = mono_accuracies(model, data.test);
      m.grad_sq_norm = acc.grad_sq / static_cast<double>(acc.iterations);
      m.lr = last.lr;
      m.rho = last.rho;
      if (uses_attribution(opt.kind) && acc.nu_iterations > 0) {
        const auto n = static_cast<double>(acc.nu_iterations);
        std::size_t top = 0;
        for (std::size_t i = 0; i < modalities; ++i) {
          m.mean_nu.push_back(acc.nu_sum[i] / n);
          m.dominant_share.push_back(static_cast<double>(acc.dominant_count[i]) / n);
          if (acc.dominant_count[i] > acc.dominant_count[top]) top = i;
        }
        m.dom_freq = m.dominant_share[top];
      }
      const double val_loss = m.val.loss;
      rec.metrics.push_back(std::move(m));

      if (config.early_stop_patience > 0) {
        if (val_loss < best_val) {
          best_val = val_loss;
          since_best = 0;
        } else if (++since_best >= config.early_stop_patience) {
          rec.early_stopped = true;
          break;
        }
      }
    }
  } catch (const NumericError& e) {
    rec.failed = true;
    rec.failed_iteration = state.t;
    rec.error = e.what();
  }

  rec.final_params = model.params();
  if (rec.steps.size() >= 2) {
    std::vector<double> norms;
    norms.reserve(rec.steps.size());
    for (const auto& s : rec.steps) norms.push_back(s.grad_norm);
    rec.convergence = convergence_report(norms);
  }
  rec.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (options.write_artifacts) write_artifacts(config, rec);
  return rec;
}

std::vector<RunRecord> run_comparison(const ExperimentConfig& config, const RunOptions& options) {
  if (config.compare.empty()) return {run(config, options)};
  std::vector<RunRecord> out;
  json summary = json::array();
  for (auto kind : config.compare) {
    ExperimentConfig c = config.with_optimizer(kind);
    c.output_dir = config.output_dir / to_string(kind);
    out.push_back(run(c, options));
    const auto& rec = out.back();
    json row = {{"optimizer", to_string(kind)}, {"config_hash", rec.config_hash}, {"failed", rec.failed}};
    if (!rec.metrics.empty()) {
      const auto& m = rec.metrics.back();
      row["test_acc"] = m.test.accuracy;
      row["train_acc"] = m.train.accuracy;
      row["tau"] = m.tau ? json(*m.tau) : json(nullptr);
    }
    summary.push_back(std::move(row));
  }
  if (options.write_artifacts) {
    std::filesystem::create_directories(config.output_dir);
    write_text(config.output_dir / "comparison.json", summary.dump(2) + "\n");
  }
  return out;
}

void write_checkpoint(const std::filesystem::path& path, const ExperimentConfig& config,
                      const ParameterVector& params) {
  json j;
  j["config"] = to_json(config);
  j["config_hash"] = config_hash(config);
  j["parameters"] = json::array();
  for (std::size_t i = 0; i < params.tensor_count(); ++i) {
    const auto& info = params.info(i);
    const Tensor t = params.tensor(i);
    j["parameters"].push_back(
        {{"name", info.name}, {"shape", info.shape},
         {"values", std::vector<double>(t.data().begin(), t.data().end())}});
  }
  write_text(path, j.dump() + "\n");
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw SpecError("cannot open checkpoint '" + path.string() + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw SpecError("checkpoint '" + path.string() + "' is not valid JSON: " + e.what());
  }
  if (!j.contains("config") || !j.contains("parameters")) {
    throw SpecError("checkpoint '" + path.string() + "' lacks config or parameters");
  }
  Checkpoint cp{parse_config(j.at("config")), {}};
  cp.params = build_model(cp.config).params();
  std::size_t filled = 0;
  for (const auto& p : j.at("parameters")) {
    const auto name = p.at("name").get<std::string>();
    const auto index = cp.params.find(name);
    if (!index) throw SpecError("checkpoint parameter '" + name + "' does not exist in the model");
    const auto shape = p.at("shape").get<Shape>();
    cp.params.set_tensor(*index, Tensor(shape, p.at("values").get<std::vector<double>>()));
    ++filled;
  }
  if (filled != cp.params.tensor_count()) throw SpecError("checkpoint is missing parameters");
  return cp;
}

MultimodalModel restore_model(const Checkpoint& checkpoint) {
  MultimodalModel model = build_model(checkpoint.config);
  model.params().assign(checkpoint.params.values());
  return model;
}

std::vector<double> read_grad_norms(const std::filesystem::path& steps_csv) {
  std::ifstream in(steps_csv);
  if (!in) throw SpecError("cannot open '" + steps_csv.string() + "'");
  std::string line;
  if (!std::getline(in, line)) throw SpecError("'" + steps_csv.string() + "' is empty");
  std::size_t column = std::string::npos;
  {
    std::istringstream header(line);
    std::string cell;
    for (std::size_t i = 0; std::getline(header, cell, ','); ++i)
      if (cell == "grad_norm") column = i;
  }
  if (column == std::string::npos) throw SpecError("steps.csv has no grad_norm column");
  std::vector<double> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string cell;
    for (std::size_t i = 0; i <= column; ++i) std::getline(row, cell, ',');
    try {
      out.push_back(std::stod(cell));
    } catch (const std::exception&) {
      throw SpecError("steps.csv has a malformed grad_norm value '" + cell + "'");
    }
  }
  return out;
}

}  // namespace msam
