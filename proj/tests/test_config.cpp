#include "flowcorr/config.hpp"
#include "flowcorr/errors.hpp"

#include <doctest.h>

#include <filesystem>
#include <set>
#include <string>

using namespace flowcorr;

namespace {

nlohmann::json echo_without_preset(const ExperimentConfig& c) {
  ExperimentConfig copy = c;
  copy.preset.clear();
  return config_to_json(copy);
}

std::string error_of(std::string_view text) {
  try {
    (void)parse_config_text(text, "t.ini");
  } catch (const ValidationError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("minimal pendulum config fills the published settings") {
  const auto c = parse_config_text("preset = damped-pendulum\n");
  CHECK(c.data.fine_step == 0.1);
  CHECK(c.data.lf_count == 30000);
  CHECK(c.data.hf_count == 250);
  CHECK(c.network.hidden_layers == 3);
  CHECK(c.network.hidden_width == 50);
  CHECK(c.network.input_dim == 2);
  CHECK(c.network.residual);
  CHECK(c.true_system.name == "damped-pendulum");
  CHECK(c.true_system.params.at("alpha") == 0.1);
  CHECK(c.true_system.params.at("beta") == 9.0);
  CHECK(c.prior_system.name == "harmonic-oscillator");
  CHECK(c.data.hf_lags.support == std::vector<int>{1});
  CHECK(c.evaluation.trajectories == 100);
  CHECK(c.scale == 1.0);
}

TEST_CASE("lag times from 1 to 10 by 0.2 map to fine steps 5 through 50") {
  const auto lags = parse_lag_times("1:0.2:10", 0.2);
  REQUIRE(lags.support.size() == 46);
  for (int i = 0; i < 46; ++i) CHECK(lags.support[static_cast<std::size_t>(i)] == 5 + i);
  CHECK(parse_lag_times("0.4, 0.6", 0.2).support == std::vector<int>{2, 3});
  CHECK(parse_lag_times("1", 0.2).support == std::vector<int>{5});
  CHECK_THROWS_AS(parse_lag_times("0.3", 0.2), ValidationError);
  CHECK(parse_lag_steps("5:1:8").support == std::vector<int>{5, 6, 7, 8});
  CHECK_THROWS_AS(parse_lag_steps("1.5"), ValidationError);
  CHECK_THROWS_AS(parse_lag_steps("0"), ValidationError);

  const auto c = parse_config_text("preset = damped-pendulum-coarse\n[data]\nlag_times = 1:0.2:10\n");
  CHECK(c.data.hf_lags.support == make_preset("damped-pendulum-coarse").data.hf_lags.support);
}

TEST_CASE("lags above one demand recurrent transfer learning") {
  const std::string err = error_of("preset = damped-pendulum\n[data]\nlag_steps = 1,2\n");
  CHECK(err.find("tl-recurrent") != std::string::npos);
  CHECK(error_of("preset = damped-pendulum\n[data]\nlag_steps = 1,2\n[correction]\nmethod = tl-recurrent\n") ==
        "");
}

TEST_CASE("unknown keys fail closed with their line") {
  const std::string err = error_of("preset = duffing\n\n[network]\nhidden_layers = 4\nwidht = 3\n");
  CHECK(err.find("t.ini:5") != std::string::npos);
  CHECK(err.find("widht") != std::string::npos);
  CHECK(error_of("preset = duffing\n[nets]\n").find("t.ini:2") != std::string::npos);
  CHECK(error_of("preset = duffing\n[true_system]\ngamma = 1\n").find("gamma") != std::string::npos);
  CHECK(error_of("preset = duffing\nseed = 1\nseed = 2\n").find("t.ini:3") != std::string::npos);
  CHECK(error_of("preset = nope\n").find("unknown preset") != std::string::npos);
}

TEST_CASE("configs without a preset must name every required field") {
  const std::string err = error_of("experiment = x\n[true_system]\nname = duffing\n");
  CHECK(err.find("missing required field") != std::string::npos);
  const auto c = parse_config_text(
      "experiment = mine\n"
      "[true_system]\nname = van-der-pol\nmu = 2\n"
      "[prior_system]\nname = van-der-pol\nmu = 1\n"
      "[data]\ndomain_lower = -2, -2\ndomain_upper = 2, 2\nfine_step = 0.1\nlf_count = 100\nhf_count = 20\n");
  CHECK(c.network.hidden_layers == 3);
  CHECK(c.network.hidden_width == 50);
  CHECK(c.true_system.params.at("mu") == 2.0);
}

TEST_CASE("constraint violations name the field") {
  CHECK(error_of("preset = duffing\nscale = 1.5\n").find("scale") != std::string::npos);
  CHECK(error_of("preset = duffing\nscale = 0\n").find("scale") != std::string::npos);
  CHECK(error_of("preset = duffing\n[data]\ndomain_lower = 0\n").find("data.domain") != std::string::npos);
  CHECK(error_of("preset = duffing\n[evaluation]\nhorizon = 10.05\n").find("evaluation.horizon") !=
        std::string::npos);
  CHECK(error_of("preset = duffing\n[correction]\nsplit_index = 9\n").find("split_index") != std::string::npos);
  CHECK(error_of("preset = duffing\n[correction]\nmethod = tl-lsq\nsplit_index = 1\n").find("split_index") !=
        std::string::npos);
  CHECK(error_of("preset = duffing\n[prior_system]\nname = seir\n").find("prior_system") != std::string::npos);
}

TEST_CASE("depth override keeps the preset's split distance") {
  const auto c = parse_config_text("preset = damped-pendulum-coarse\n[network]\nhidden_layers = 7\n");
  CHECK(c.correction.split_index == 6);
}

TEST_CASE("scaling shrinks sizes with floors and never grows them") {
  ExperimentConfig c = make_preset("damped-pendulum");
  c.scale = 0.2;
  auto e = c.effective();
  CHECK(e.data.lf_count == 6000);
  CHECK(e.data.hf_count == 50);
  CHECK(e.prior_training.epochs == 2000);
  CHECK(e.correction.train.epochs == 1000);
  CHECK(e.scale == 1.0);
  c.scale = 0.001;
  e = c.effective();
  CHECK(e.data.lf_count == 30);
  CHECK(e.data.hf_count == 20);
  CHECK(e.prior_training.epochs == 200);
  CHECK(e.correction.train.epochs == 200);
  c.data.hf_count = 10;
  CHECK(c.effective().data.hf_count == 10);
}

TEST_CASE("scale one reproduces every preset's stated sizes") {
  for (const auto& name : preset_names()) {
    CAPTURE(name);
    const auto c = make_preset(name);
    const auto e = c.effective();
    CHECK(e.data.lf_count == c.data.lf_count);
    CHECK(e.data.hf_count == c.data.hf_count);
    CHECK(e.prior_training.epochs == c.prior_training.epochs);
    CHECK(e.correction.train.epochs == c.correction.train.epochs);
    CHECK(e.network == c.network);
    CHECK_NOTHROW(c.validate());
  }
  CHECK(make_preset("damped-pendulum").data.lf_count == 30000);
  CHECK(make_preset("duffing").data.hf_count == 500);
  CHECK(make_preset("metabolic").network.hidden_width == 80);
  CHECK(make_preset("seir").true_system.params.at("mu") == 0.1792);
  CHECK(make_preset("seir").true_system.params.at("beta") == 0.8669);
  CHECK(make_preset("seir").true_system.params.at("sigma") == 0.3562);
  CHECK(make_preset("seir").true_system.params.at("gamma") == 0.2235);
  CHECK(preset_names().size() == 8);
}

TEST_CASE("config text round-trips through the parser") {
  for (const auto& name : preset_names()) {
    CAPTURE(name);
    ExperimentConfig c = make_preset(name);
    c.seed = 12345678901234ull;
    c.scale = 0.3;
    const auto back = parse_config_text(config_to_text(c));
    CHECK(config_to_json(back) == config_to_json(c));
    CHECK(config_hash(back) == config_hash(c));
  }
}

TEST_CASE("config echo covers seeds and effective sizes") {
  ExperimentConfig c = make_preset("duffing");
  c.scale = 0.5;
  const auto j = config_to_json(c);
  CHECK(j.at("seeds").at("prior_training") == c.prior_seed());
  CHECK(j.at("seeds").at("evaluation") == c.evaluation_seed());
  CHECK(j.at("effective").at("hf_count") == 250);
  CHECK(j.at("evaluation").at("guard_factor") == 10.0);
  std::set<std::uint64_t> seeds{c.lf_seed(), c.hf_seed(), c.prior_seed(), c.correction_seed(), c.evaluation_seed()};
  CHECK(seeds.size() == 5);
  ExperimentConfig other = c;
  other.seed = 2;
  CHECK(config_hash(other) != config_hash(c));
}

TEST_CASE("shipped config files match the presets") {
  const std::filesystem::path dir = FLOWCORR_CONFIG_DIR;
  for (const auto& name : preset_names()) {
    CAPTURE(name);
    const auto path = dir / (name + ".ini");
    REQUIRE(std::filesystem::exists(path));
    CHECK(echo_without_preset(parse_config(path)) == echo_without_preset(make_preset(name)));
  }
  CHECK_THROWS_AS(parse_config(dir / "missing.ini"), ValidationError);
}
