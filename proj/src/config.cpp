#include "msam/config.hpp"

#include <fstream>
#include <set>

#include "msam/errors.hpp"

namespace msam {

using nlohmann::json;

namespace {

/// Reads keys from a JSON object and rejects any key left unread.
class Fields {
 public:
  Fields(const json& j, std::string context) : j_(j), context_(std::move(context)) {
    if (!j_.is_object()) throw SpecError(context_ + ": expected a JSON object");
  }

  template <typename T>
  T get(const std::string& key, T fallback) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return fallback;
    return as<T>(*it, key);
  }

  template <typename T>
  T required(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) throw SpecError(context_ + ": missing required key '" + key + "'");
    return as<T>(*it, key);
  }

  const json* child(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw SpecError(context_ + ": unknown key '" + it.key() + "'");
    }
  }

  const std::string& context() const { return context_; }

 private:
  template <typename T>
  T as(const json& v, const std::string& key) const {
    try {
      if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
        const bool ok = v.is_number_unsigned() ||
                        (v.is_number_integer() && v.get<std::int64_t>() >= 0);
        if (!ok) throw SpecError("not a non-negative integer");
      }
      return v.get<T>();
    } catch (const std::exception&) {
      throw SpecError(context_ + ": key '" + key + "' has the wrong type or value (" + v.dump() + ")");
    }
  }

  const json& j_;
  std::string context_;
  std::set<std::string> seen_;
};

Activation parse_activation(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "tanh") return Activation::tanh;
  throw SpecError("activation must be 'relu' or 'tanh', got '" + s + "'");
}

FusionMode parse_fusion(const std::string& s) {
  if (s == "early") return FusionMode::early;
  if (s == "late") return FusionMode::late;
  throw SpecError("fusion must be 'early' or 'late', got '" + s + "'");
}

PeriodUnit parse_unit(const std::string& s) {
  if (s == "steps") return PeriodUnit::steps;
  if (s == "epochs") return PeriodUnit::epochs;
  throw SpecError("decay unit must be 'steps' or 'epochs', got '" + s + "'");
}

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw SpecError("cannot open config file '" + path.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw SpecError("'" + path.string() + "' is not valid JSON: " + e.what());
  }
}

}  // namespace

SyntheticSpec parse_data_spec(const json& j, std::uint64_t default_seed) {
  Fields f(j, "data");
  SyntheticSpec d;
  d.classes = f.get<std::size_t>("classes", d.classes);
  d.n_train = f.get<std::size_t>("n_train", d.n_train);
  d.n_val = f.get<std::size_t>("n_val", d.n_val);
  d.n_test = f.get<std::size_t>("n_test", d.n_test);
  d.seed = f.get<std::uint64_t>("seed", default_seed);
  const json* mods = f.child("modalities");
  if (!mods || !mods->is_array()) throw SpecError("data: 'modalities' must be a list");
  for (const auto& m : *mods) {
    Fields mf(m, "data.modalities[" + std::to_string(d.modalities.size()) + "]");
    ModalitySpec ms;
    ms.dim = mf.required<std::size_t>("dim");
    ms.snr = mf.get<double>("snr", ms.snr);
    mf.finish();
    d.modalities.push_back(ms);
  }
  f.finish();
  d.validate();
  return d;
}

SyntheticSpec load_data_spec(const std::filesystem::path& path) {
  return parse_data_spec(read_json(path));
}

ExperimentConfig parse_config(const json& j) {
  Fields f(j, "config");
  ExperimentConfig c;
  c.name = f.get<std::string>("name", c.name);
  c.seed = f.get<std::uint64_t>("seed", c.seed);
  c.epochs = f.get<std::size_t>("epochs", c.epochs);
  c.batch_size = f.get<std::size_t>("batch_size", c.batch_size);
  c.output_dir = f.get<std::string>("output_dir", c.output_dir.string());
  c.eval_every = f.get<std::size_t>("eval_every", c.eval_every);
  c.early_stop_patience = f.get<std::size_t>("early_stop_patience", c.early_stop_patience);

  const json* data = f.child("data");
  if (!data) throw SpecError("config: missing required key 'data'");
  c.data = parse_data_spec(*data, c.seed);

  // Model: shared encoder settings, optionally overridden per modality.
  json model_json = json::object();
  if (const json* m = f.child("model")) model_json = *m;
  Fields mf(model_json, "model");
  c.model.classes = c.data.classes;
  c.model.fusion.mode = parse_fusion(mf.get<std::string>("fusion", "late"));
  c.model.bias = mf.get<bool>("bias", true);
  c.model.fusion.maxout_pieces = mf.get<std::size_t>("maxout_pieces", c.model.fusion.maxout_pieces);
  c.model.fusion.fused_width = mf.get<std::size_t>("fused_width", c.model.fusion.fused_width);
  c.model.fusion.head_width = mf.get<std::size_t>("head_width", c.model.fusion.head_width);
  const auto hidden = mf.get<std::vector<std::size_t>>("hidden", {16});
  const auto activation = parse_activation(mf.get<std::string>("activation", "relu"));
  const json* overrides = mf.child("encoders");
  mf.finish();
  for (std::size_t m = 0; m < c.data.modalities.size(); ++m) {
    EncoderSpec e{c.data.modalities[m].dim, hidden, activation};
    if (overrides) {
      if (!overrides->is_array() || overrides->size() != c.data.modalities.size()) {
        throw SpecError("model.encoders must list one entry per modality");
      }
      Fields ef((*overrides)[m], "model.encoders[" + std::to_string(m) + "]");
      e.hidden = ef.get<std::vector<std::size_t>>("hidden", e.hidden);
      e.activation = parse_activation(ef.get<std::string>("activation", to_string(e.activation)));
      ef.finish();
    }
    c.model.encoders.push_back(std::move(e));
  }

  auto& o = c.optimizer;
  o.kind = parse_optimizer_kind(f.get<std::string>("optimizer", "sgd"));
  o.lr = f.get<double>("lr", o.lr);
  o.momentum = f.get<double>("momentum", o.momentum);
  o.weight_decay = f.get<double>("weight_decay", o.weight_decay);
  o.rho = f.get<double>("rho", o.rho);
  o.shapley_every = f.get<std::size_t>("shapley_every", o.shapley_every);
  o.shapley_variant = parse_shapley_variant(f.get<std::string>("shapley_variant", "standard"));
  o.shapley_target = parse_shapley_target(f.get<std::string>("shapley_target", "loss"));
  if (const json* s = f.child("schedule")) {
    if (s->is_string()) {
      o.schedule.kind = parse_schedule_kind(s->get<std::string>());
    } else {
      Fields sf(*s, "schedule");
      o.schedule.kind = parse_schedule_kind(sf.get<std::string>("kind", "constant"));
      o.schedule.factor = sf.get<double>("factor", o.schedule.factor);
      o.schedule.period = sf.get<std::size_t>("period", o.schedule.period);
      c.decay_unit = parse_unit(sf.get<std::string>("unit", "steps"));
      sf.finish();
    }
  }

  if (const json* cmp = f.child("compare")) {
    if (!cmp->is_array()) throw SpecError("config: 'compare' must be a list of optimizer names");
    for (const auto& k : *cmp) {
      if (!k.is_string()) throw SpecError("config: 'compare' entries must be strings");
      c.compare.push_back(parse_optimizer_kind(k.get<std::string>()));
    }
  }
  f.finish();
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw SpecError("config file not found: '" + path.string() + "'");
  return parse_config(read_json(path));
}

void ExperimentConfig::validate() const {
  if (epochs == 0) throw SpecError("config: epochs must be at least 1");
  if (batch_size == 0) throw SpecError("config: batch_size must be at least 1");
  if (eval_every == 0) throw SpecError("config: eval_every must be at least 1");
  if (output_dir.empty()) throw SpecError("config: output_dir must not be empty");
  data.validate();
  model.validate();
  if (model.modalities() != data.modalities.size()) {
    throw SpecError("config: model and data disagree on the modality count");
  }
  for (std::size_t m = 0; m < model.modalities(); ++m) {
    if (model.encoders[m].input_dim != data.modalities[m].dim) {
      throw SpecError("config: encoder " + std::to_string(m) + " input dim differs from the data");
    }
  }
  if (model.classes != data.classes) throw SpecError("config: model and data disagree on classes");
  optimizer.validate();
}

std::size_t ExperimentConfig::steps_per_epoch() const {
  return (data.n_train + batch_size - 1) / batch_size;
}

OptimConfig ExperimentConfig::resolved_optimizer() const {
  OptimConfig o = optimizer;
  if (decay_unit == PeriodUnit::epochs) o.schedule.period *= steps_per_epoch();
  return o;
}

ExperimentConfig ExperimentConfig::with_optimizer(OptimizerKind kind) const {
  ExperimentConfig c = *this;
  c.optimizer.kind = kind;
  c.compare.clear();
  return c;
}

json to_json(const ExperimentConfig& c) {
  json data;
  data["classes"] = c.data.classes;
  data["n_train"] = c.data.n_train;
  data["n_val"] = c.data.n_val;
  data["n_test"] = c.data.n_test;
  data["seed"] = c.data.seed;
  data["modalities"] = json::array();
  for (const auto& m : c.data.modalities) data["modalities"].push_back({{"dim", m.dim}, {"snr", m.snr}});

  json model;
  model["fusion"] = to_string(c.model.fusion.mode);
  model["bias"] = c.model.bias;
  model["maxout_pieces"] = c.model.fusion.maxout_pieces;
  model["fused_width"] = c.model.fusion.fused_width;
  model["head_width"] = c.model.fusion.head_width;
  model["encoders"] = json::array();
  for (const auto& e : c.model.encoders) {
    model["encoders"].push_back({{"hidden", e.hidden}, {"activation", to_string(e.activation)}});
  }

  json j;
  j["name"] = c.name;
  j["seed"] = c.seed;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["output_dir"] = c.output_dir.string();
  j["eval_every"] = c.eval_every;
  j["early_stop_patience"] = c.early_stop_patience;
  j["data"] = std::move(data);
  j["model"] = std::move(model);
  j["optimizer"] = to_string(c.optimizer.kind);
  j["lr"] = c.optimizer.lr;
  j["momentum"] = c.optimizer.momentum;
  j["weight_decay"] = c.optimizer.weight_decay;
  j["rho"] = c.optimizer.rho;
  j["shapley_every"] = c.optimizer.shapley_every;
  j["shapley_variant"] = to_string(c.optimizer.shapley_variant);
  j["shapley_target"] = to_string(c.optimizer.shapley_target);
  j["schedule"] = {{"kind", to_string(c.optimizer.schedule.kind)},
                   {"factor", c.optimizer.schedule.factor},
                   {"period", c.optimizer.schedule.period},
                   {"unit", c.decay_unit == PeriodUnit::steps ? "steps" : "epochs"}};
  j["compare"] = json::array();
  for (auto k : c.compare) j["compare"].push_back(to_string(k));
  return j;
}

std::string config_hash(const ExperimentConfig& config) {
  json j = to_json(config);
  j.erase("name");
  j.erase("output_dir");
  j.erase("compare");
  // nlohmann::json objects keep keys sorted, so the dump is canonical.
  const std::string text = j.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = kHex[h & 0xF];
    h >>= 4;
  }
  return out;
}

ExperimentConfig default_config() {
  const json j = {
      {"name", "default"},
      {"seed", 1},
      {"epochs", 5},
      {"batch_size", 32},
      {"output_dir", "runs/default"},
      {"data",
       {{"classes", 3},
        {"n_train", 256},
        {"n_val", 64},
        {"n_test", 256},
        {"modalities", {{{"dim", 6}, {"snr", 3.0}}, {{"dim", 6}, {"snr", 1.0}}}}}},
      {"model", {{"fusion", "late"}, {"hidden", {8}}, {"activation", "tanh"}}},
      {"optimizer", "msam"},
      {"lr", 0.05},
      {"momentum", 0.9},
      {"weight_decay", 1e-4},
      {"rho", 0.05}};
  return parse_config(j);
}

}  // namespace msam
