#include <fstream>
#include "json.hpp"
#include <sstream>

#include "cdlab/config.hpp"
#include "cdlab/error.hpp"
#include "doctest.h"

using namespace cdlab;
using nlohmann::json;

namespace {

std::string read(const std::string& name) {
  std::ifstream in(std::string(CDLAB_CONFIGS) + "/" + name);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const char* kMinimal = R"({
  "experiment": "compose-and",
  "seed": 4,
  "schedule": {"T": 50},
  "models": [
    {"name": "a", "components": [{"w": 1, "mean": [0, 0], "cov": [[1, 0], [0, 1]]}]},
    {"name": "b", "components": [{"w": 1, "mean": [1, 0], "cov": [[1, 0], [0, 1]]}]}
  ]
})";

std::string with(const std::string& pointer, const json& value) {
  json doc = json::parse(kMinimal);
  doc[json::json_pointer(pointer)] = value;
  return doc.dump();
}

void expect_error(const std::string& text, ExperimentKind kind, const std::string& fragment) {
  try {
    parse_config(text, kind);
    FAIL("accepted: " << text);
  } catch (const ConfigError& e) {
    CHECK_MESSAGE(std::string(e.what()).find(fragment) != std::string::npos, e.what());
  }
}

}  // namespace

TEST_CASE("bundled configs parse") {
  const std::pair<const char*, ExperimentKind> files[] = {{"figure1.json", ExperimentKind::compose_and},
                                                          {"figure2.json", ExperimentKind::compose_or},
                                                          {"disjoint.json", ExperimentKind::compose_or},
                                                          {"align.json", ExperimentKind::align},
                                                          {"kl_check.json", ExperimentKind::kl_check},
                                                          {"oracle.json", ExperimentKind::oracle}};
  for (const auto& [name, kind] : files) {
    CAPTURE(name);
    const ExperimentConfig c = parse_config(read(name), kind);
    CHECK(c.kind == kind);
    CHECK(config_hash(c.canonical).size() == 16);
  }
  const ExperimentConfig f1 = parse_config(read("figure1.json"), ExperimentKind::compose_and);
  CHECK(f1.models.size() == 3);
  CHECK(f1.model_names[2] == "far");
  CHECK(f1.schedule.steps == 100);
  CHECK(f1.plot.enabled);
}

TEST_CASE("defaults and explicit values") {
  const ExperimentConfig c = parse_config(kMinimal, ExperimentKind::compose_and);
  CHECK(c.seed == 4);
  CHECK(c.schedule.alpha == "geometric");
  CHECK(c.schedule.build().steps() == 50);
  CHECK(c.dual_only.dual.max_rounds == 200);
  const ExperimentConfig d = parse_config(with("/dual/eta", 0.2), ExperimentKind::compose_and);
  CHECK(d.dual_only.dual.eta == 0.2);
  const auto lin = parse_config(with("/schedule/alpha", "linear"), ExperimentKind::compose_and).schedule.build();
  CHECK(lin.alpha(25) == doctest::Approx(1 - 0.99 * 0.5));
}

TEST_CASE("unknown keys are rejected with their path") {
  expect_error(with("/bogus", 1), ExperimentKind::compose_and, "bogus");
  expect_error(with("/dual/etaa", 1), ExperimentKind::compose_and, "dual");
  expect_error(with("/models/0/components/0/extra", 1), ExperimentKind::compose_and, "models");
}

TEST_CASE("type and range errors") {
  expect_error(with("/seed", "seven"), ExperimentKind::compose_and, "seed");
  expect_error(with("/schedule/T", 0), ExperimentKind::compose_and, "T");
  expect_error(with("/dual/eta", -1.0), ExperimentKind::compose_and, "eta");
  expect_error(with("/models/0/components/0/cov", json::array({json::array({1, 0.5}), json::array({0, 1})})),
               ExperimentKind::compose_and, "cov");
  expect_error(with("/models/0/components/0/cov", json::array({json::array({1, 2}), json::array({2, 1})})),
               ExperimentKind::compose_and, "cov");
  expect_error("{not json", ExperimentKind::compose_and, "JSON");
  expect_error(with("/models", json::array()), ExperimentKind::compose_and, "models");
}

TEST_CASE("the experiment field must match the subcommand") {
  expect_error(kMinimal, ExperimentKind::compose_or, "experiment");
  CHECK_THROWS_AS(parse_experiment_kind("compose-xor"), ConfigError);
  CHECK(parse_experiment_kind("kl-check") == ExperimentKind::kl_check);
  CHECK(to_string(ExperimentKind::compose_or) == "compose-or");
  CHECK_THROWS_AS(load_config("/nonexistent/x.json", ExperimentKind::oracle), ConfigError);
}

TEST_CASE("alignment needs a pretrained model and rewards") {
  json doc = json::parse(read("align.json"));
  doc.erase("rewards");
  expect_error(doc.dump(), ExperimentKind::align, "rewards");
  json withmodels = json::parse(read("align.json"));
  withmodels["models"] = json::parse(kMinimal)["models"];
  CHECK_THROWS_AS(parse_config(withmodels.dump(), ExperimentKind::align), ConfigError);
}

TEST_CASE("seed override reaches every solver") {
  ExperimentConfig c = parse_config(kMinimal, ExperimentKind::compose_and);
  const auto before = c.dual_only.seed;
  apply_seed(c, 99);
  CHECK(c.seed == 99);
  CHECK(c.dual_only.seed != before);
  CHECK(c.primal_dual.seed != c.dual_only.seed);
  ExperimentConfig c2 = parse_config(kMinimal, ExperimentKind::compose_and);
  apply_seed(c2, 99);
  CHECK(c2.dual_only.seed == c.dual_only.seed);
}

TEST_CASE("config hash is stable under formatting and sensitive to content") {
  const auto a = parse_config(kMinimal, ExperimentKind::compose_and);
  const auto b = parse_config(json::parse(kMinimal).dump(4), ExperimentKind::compose_and);
  const auto c = parse_config(with("/seed", 5), ExperimentKind::compose_and);
  CHECK(config_hash(a.canonical) == config_hash(b.canonical));
  CHECK(config_hash(a.canonical) != config_hash(c.canonical));
  // FNV-1a 64 of the empty string.
  CHECK(config_hash("") == "cbf29ce484222325");
}
