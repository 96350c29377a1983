#include <gtest/gtest.h>

#include <filesystem>

#include "msam/config.hpp"
#include "msam/errors.hpp"

using namespace msam;
using nlohmann::json;

namespace {

json base() {
  return json::parse(R"({
    "seed": 3,
    "epochs": 2,
    "batch_size": 16,
    "data": {"classes": 3, "n_train": 40, "n_val": 10, "n_test": 40,
             "modalities": [{"dim": 4, "snr": 2.0}, {"dim": 3, "snr": 0.5}]},
    "model": {"fusion": "early", "hidden": [6], "activation": "tanh", "fused_width": 5},
    "optimizer": "msam",
    "lr": 0.1,
    "rho": 0.05,
    "schedule": {"kind": "step_decay", "factor": 0.5, "period": 1, "unit": "epochs"}
  })");
}

}  // namespace

TEST(Config, ParsesAllSections) {
  const auto c = parse_config(base());
  EXPECT_EQ(c.seed, 3u);
  EXPECT_EQ(c.data.seed, 3u);
  EXPECT_EQ(c.data.modalities[1].dim, 3u);
  EXPECT_EQ(c.model.fusion.mode, FusionMode::early);
  EXPECT_EQ(c.model.encoders[0].hidden, (std::vector<std::size_t>{6}));
  EXPECT_EQ(c.model.encoders[1].input_dim, 3u);
  EXPECT_EQ(c.model.classes, 3u);
  EXPECT_EQ(c.optimizer.kind, OptimizerKind::msam);
  EXPECT_EQ(c.decay_unit, PeriodUnit::epochs);
  // 40 samples in batches of 16 give 3 steps per epoch.
  EXPECT_EQ(c.steps_per_epoch(), 3u);
  EXPECT_EQ(c.resolved_optimizer().schedule.period, 3u);
}

TEST(Config, DefaultsAreFilledIn) {
  auto j = base();
  j.erase("model");
  j.erase("optimizer");
  const auto c = parse_config(j);
  EXPECT_EQ(c.optimizer.kind, OptimizerKind::sgd);
  EXPECT_EQ(c.model.fusion.mode, FusionMode::late);
  EXPECT_TRUE(c.model.bias);
  const json full = to_json(c);
  EXPECT_EQ(parse_config(full).model.encoders[0].hidden, c.model.encoders[0].hidden);
  EXPECT_EQ(config_hash(parse_config(full)), config_hash(c));
}

TEST(Config, RejectsUnknownKeys) {
  for (const char* where : {"", "data", "model"}) {
    auto j = base();
    if (*where) j[where]["colour"] = 1;
    else j["colour"] = 1;
    EXPECT_THROW(parse_config(j), SpecError) << where;
  }
  auto j = base();
  j["data"]["modalities"][0]["noise"] = 1.0;
  EXPECT_THROW(parse_config(j), SpecError);
}

TEST(Config, RejectsBadValues) {
  auto check = [](auto mutate) {
    auto j = base();
    mutate(j);
    EXPECT_THROW(parse_config(j), SpecError) << j.dump();
  };
  check([](json& j) { j["epochs"] = 0; });
  check([](json& j) { j["batch_size"] = -4; });
  check([](json& j) { j["lr"] = "fast"; });
  check([](json& j) { j["optimizer"] = "adam"; });
  check([](json& j) { j["model"]["activation"] = "gelu"; });
  check([](json& j) { j["model"]["encoders"] = json::array({json::object()}); });
  check([](json& j) { j["compare"] = json::array({"sgd", "lbfgs"}); });
  check([](json& j) { j.erase("data"); });
  check([](json& j) { j["rho"] = -0.1; });
}

TEST(ConfigHash, IgnoresKeyOrderAndBookkeeping) {
  const auto a = parse_config(base());
  auto reordered = json::parse(R"({
    "schedule": {"unit": "epochs", "period": 1, "factor": 0.5, "kind": "step_decay"},
    "rho": 0.05, "lr": 0.1, "optimizer": "msam",
    "model": {"fused_width": 5, "activation": "tanh", "hidden": [6], "fusion": "early"},
    "data": {"modalities": [{"snr": 2.0, "dim": 4}, {"snr": 0.5, "dim": 3}],
             "n_test": 40, "n_val": 10, "n_train": 40, "classes": 3},
    "batch_size": 16, "epochs": 2, "seed": 3,
    "name": "renamed", "output_dir": "elsewhere", "compare": ["sgd"]
  })");
  EXPECT_EQ(config_hash(parse_config(reordered)), config_hash(a));
  EXPECT_EQ(config_hash(a).size(), 16u);
}

TEST(ConfigHash, ChangesWithSemanticFields) {
  const auto h = config_hash(parse_config(base()));
  auto check = [&](auto mutate) {
    auto j = base();
    mutate(j);
    EXPECT_NE(config_hash(parse_config(j)), h) << j.dump();
  };
  check([](json& j) { j["seed"] = 4; });
  check([](json& j) { j["lr"] = 0.2; });
  check([](json& j) { j["optimizer"] = "sam"; });
  check([](json& j) { j["data"]["modalities"][1]["snr"] = 0.6; });
  check([](json& j) { j["model"]["hidden"] = json::array({7}); });
  check([](json& j) { j["schedule"]["unit"] = "steps"; });
}

TEST(Config, LoadReportsMissingPath) {
  const std::filesystem::path p = "/nonexistent/dir/cfg.json";
  try {
    load_config(p);
    FAIL() << "expected SpecError";
  } catch (const SpecError& e) {
    EXPECT_NE(std::string(e.what()).find(p.string()), std::string::npos);
  }
}

TEST(Config, ShippedPresetsParse) {
  for (const auto& entry : std::filesystem::directory_iterator(MSAM_CONFIG_DIR)) {
    if (entry.path().extension() != ".json") continue;
    EXPECT_NO_THROW(load_config(entry.path())) << entry.path();
  }
}
