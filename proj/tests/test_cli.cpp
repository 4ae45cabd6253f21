#include <doctest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "stochpersist/cli.hpp"
#include "stochpersist/errors.hpp"

using namespace stochpersist;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Scratch {
  fs::path dir;
  Scratch() {
    static int counter = 0;
    dir = fs::temp_directory_path() / ("stochpersist_cli_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~Scratch() {
    std::error_code ec;
    fs::remove_all(dir, ec);
  }
  std::string config(const json& j, const std::string& name = "config.json") const {
    std::ofstream(dir / name) << j.dump(2);
    return (dir / name).string();
  }
  fs::path out() const { return dir / "out"; }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

int run(const std::string& config, const fs::path& out, std::vector<std::string> overrides = {}, unsigned threads = 1,
        std::optional<std::uint64_t> seed = std::nullopt) {
  cli::RunOptions opt;
  opt.config_path = config;
  opt.out_dir = out.string();
  opt.overrides = std::move(overrides);
  opt.threads = threads;
  opt.seed = seed;
  std::ostringstream err;
  return cli::run(opt, err);
}

json hassell_classify() {
  return {{"task", "classify"},
          {"model", {{"model", "hassell"}, {"lambda", {{"dist", "lognormal"}, {"log_mean", -0.2}, {"log_sd", 0.3}}}, {"b", 1}}},
          {"sim", {{"replicates", 8}, {"horizon", 3000}}},
          {"task_params", {{"draws", 20000}}}};
}

json estimate(const json& results, const std::string& quantity) {
  for (const auto& e : results.at("estimates"))
    if (e.at("quantity") == quantity) return e;
  FAIL("missing estimate " << quantity);
  return {};
}

void collect_numbers(const json& j, std::vector<double>& out) {
  if (j.is_number()) out.push_back(j.get<double>());
  if (j.is_structured())
    for (const auto& v : j) collect_numbers(v, out);
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("gamma task at p = 0") {
    Scratch s;
    const json cfg = {{"task", "gamma"}, {"task_params", {{"p", 0}, {"a", 0.5}}}};
    REQUIRE(run(s.config(cfg), s.out()) == cli::kExitOk);
    const json r = json::parse(slurp(s.out() / "results.json"));
    CHECK(estimate(r, "gamma_closed_form").at("mean").get<double>() == std::log(0.5));
    CHECK(r.at("report").at("branch") == "p=0");
    CHECK(r.at("provenance").at("artifact") == "stochpersist");
    CHECK(r.at("provenance").at("config_hash").get<std::string>().rfind("fnv1a64:", 0) == 0);
    CHECK(slurp(s.out() / "results.csv").find("gamma,gamma_closed_form,,,-0.69314718055994") != std::string::npos);
  }

  TEST_CASE("classify reports extinction") {
    Scratch s;
    REQUIRE(run(s.config(hassell_classify()), s.out()) == cli::kExitOk);
    const json r = json::parse(slurp(s.out() / "results.json"));
    CHECK(r.at("report").at("verdict") == "extinction");
    CHECK(r.at("report").at("simulation_agrees") == true);
    CHECK(r.at("model") == "hassell");
  }

  TEST_CASE("configuration errors leave no files") {
    Scratch s;
    json bad = hassell_classify();
    bad["model"]["lambda"] = {{"dist", "discrete"}, {"values", {0.5, 1.5}}, {"probs", {0.5, 0.4}}};
    CHECK(run(s.config(bad), s.out()) == cli::kExitConfig);
    CHECK_FALSE(fs::exists(s.out() / "results.json"));
    CHECK_FALSE(fs::exists(s.out() / "results.csv"));

    json unknown = hassell_classify();
    unknown["sim"]["horizn"] = 10;
    CHECK(run(s.config(unknown), s.out()) == cli::kExitConfig);
    unknown = hassell_classify();
    unknown["model"]["lamda"] = 1;
    CHECK(run(s.config(unknown), s.out()) == cli::kExitConfig);
    unknown = hassell_classify();
    unknown["task_params"]["drawz"] = 1;
    CHECK(run(s.config(unknown), s.out()) == cli::kExitConfig);
    unknown = hassell_classify();
    unknown["extra"] = 1;
    CHECK(run(s.config(unknown), s.out()) == cli::kExitConfig);
    CHECK(run((s.dir / "missing.json").string(), s.out()) == cli::kExitConfig);
    std::ofstream(s.dir / "broken.json") << "{\"task\": ";
    CHECK(run((s.dir / "broken.json").string(), s.out()) == cli::kExitConfig);

    json no_model = {{"task", "classify"}};
    CHECK_THROWS_AS(cli::parse_experiment(no_model), ConfigError);
    json zero_index = {{"task", "invade"},
                       {"model", {{"model", "lottery"}, {"d", 0.5}, {"fecundity", {1, 1}}}},
                       {"task_params", {{"invader", 0}, {"face", {2}}}}};
    CHECK_THROWS_AS(cli::parse_experiment(zero_index), ConfigError);
    CHECK_FALSE(fs::exists(s.out() / "results.json"));
  }

  TEST_CASE("numeric errors remove partial output") {
    Scratch s;
    const json grow = {{"task", "simulate"},
                       {"model", {{"model", "hassell"}, {"lambda", 2}, {"b", 0}}},
                       {"sim", {{"horizon", 5000}}}};
    const std::string path = s.config(grow);
    REQUIRE(run(path, s.out(), {"sim.horizon=100"}) == cli::kExitOk);
    CHECK(fs::exists(s.out() / "results.json"));
    CHECK(run(path, s.out()) == cli::kExitNumeric);
    for (const char* name : {"results.json", "results.csv", "summary.csv", "results.json.tmp"})
      CHECK_FALSE(fs::exists(s.out() / name));
  }

  TEST_CASE("overrides and seeds") {
    json cfg = {{"model", {{"model", "hassell"}, {"lambda", 1.5}}}, {"task", "simulate"}, {"sim", {{"horizon", 10}}}};
    cli::apply_override(cfg, "sim.horizon=200");
    cli::apply_override(cfg, "model.lambda={\"dist\":\"lognormal\",\"log_mean\":0.1,\"log_sd\":0.2}");
    cli::apply_override(cfg, "sim.eta_grid.0=0.05");
    cli::apply_override(cfg, "output_dir=/tmp/x");
    CHECK(cfg["sim"]["horizon"] == 200);
    CHECK(cfg["model"]["lambda"]["dist"] == "lognormal");
    CHECK(cfg["output_dir"] == "/tmp/x");
    CHECK_THROWS_AS(cli::apply_override(cfg, "novalue"), ConfigError);
    CHECK_THROWS_AS(cli::apply_override(cfg, "task.x=1"), ConfigError);
    cfg["sim"]["eta_grid"] = {0.01};
    CHECK_THROWS_AS(cli::apply_override(cfg, "sim.eta_grid.3=1"), ConfigError);
    const cli::Experiment exp = cli::parse_experiment(cfg);
    CHECK(exp.sim.horizon == 200);
    CHECK(exp.env.dim() == 1);
    CHECK(exp.resolved.at("sim").at("batches") == 20);
    CHECK_FALSE(exp.resolved.contains("output_dir"));

    Scratch s;
    const std::string path = s.config(hassell_classify());
    REQUIRE(run(path, s.dir / "a", {}, 1, 7) == cli::kExitOk);
    REQUIRE(run(path, s.dir / "b", {"sim.seed=7"}) == cli::kExitOk);
    REQUIRE(run(path, s.dir / "c", {}, 1, 8) == cli::kExitOk);
    CHECK(slurp(s.dir / "a" / "results.json") == slurp(s.dir / "b" / "results.json"));
    CHECK(slurp(s.dir / "a" / "results.json") != slurp(s.dir / "c" / "results.json"));
    CHECK(json::parse(slurp(s.dir / "a" / "results.json")).at("provenance").at("seed") == 7);
  }

  TEST_CASE("identical bytes across thread counts") {
    Scratch s;
    const json cfg = {{"task", "simulate"},
                      {"model", {{"model", "ricker_competition"},
                                 {"r", {{{"dist", "normal"}, {"mean", 1.0}, {"sd", 0.2}}, {{"dist", "normal"}, {"mean", 0.8}, {"sd", 0.2}}}},
                                 {"alpha", {0.5, 0.6}}}},
                      {"sim", {{"replicates", 6}, {"horizon", 2000}, {"burn_in", 100}, {"thinning", 50},
                               {"functionals", {{{"type", "coordinate"}, {"species", 1}}}}}},
                      {"task_params", {{"samples", true}}}};
    const std::string path = s.config(cfg);
    REQUIRE(run(path, s.dir / "t1", {}, 1) == cli::kExitOk);
    REQUIRE(run(path, s.dir / "t4", {}, 4) == cli::kExitOk);
    for (const char* name : {"results.json", "results.csv", "summary.csv", "samples.csv"}) {
      CAPTURE(name);
      CHECK(fs::exists(s.dir / "t1" / name));
      CHECK(slurp(s.dir / "t1" / name) == slurp(s.dir / "t4" / name));
    }
  }

  TEST_CASE("every csv number is in the json") {
    Scratch s;
    const json cfg = {{"task", "permanence"},
                      {"model", {{"model", "ricker_competition"},
                                 {"r", {{{"dist", "normal"}, {"mean", 1.0}, {"sd", 0.1}}, {{"dist", "normal"}, {"mean", 0.8}, {"sd", 0.1}}}},
                                 {"alpha", {0.5, 0.6}}}},
                      {"sim", {{"replicates", 2}, {"horizon", 5000}, {"burn_in", 100}}},
                      {"task_params", {{"dirac_draws", 10000}}}};
    REQUIRE(run(s.config(cfg), s.out()) == cli::kExitOk);
    const json r = json::parse(slurp(s.out() / "results.json"));
    CHECK(r.at("report").at("table").at("verdict") == "persistent");
    std::vector<double> numbers;
    collect_numbers(r.at("estimates"), numbers);
    std::istringstream csv(slurp(s.out() / "results.csv"));
    std::string line;
    std::getline(csv, line);
    CHECK(line == "task,quantity,species,face,mean,std_error,n,verdict");
    int rows = 0;
    while (std::getline(csv, line)) {
      ++rows;
      std::vector<std::string> fields;
      std::string field;
      bool quoted = false;
      for (char c : line) {
        if (c == '"') quoted = !quoted;
        else if (c == ',' && !quoted) fields.push_back(std::exchange(field, {}));
        else field += c;
      }
      fields.push_back(field);
      REQUIRE(fields.size() == 8);
      for (int col : {4, 5, 6}) {
        CAPTURE(line);
        const double v = std::stod(fields[static_cast<std::size_t>(col)]);
        CHECK(std::find(numbers.begin(), numbers.end(), v) != numbers.end());
      }
    }
    CHECK(rows == static_cast<int>(r.at("estimates").size()));
  }

  TEST_CASE("list-models") {
    const std::string a = cli::list_models();
    CHECK(a == cli::list_models());
    std::istringstream in(a);
    std::string line, previous;
    std::vector<std::string> names;
    while (std::getline(in, line)) {
      CHECK(std::count(line.begin(), line.end(), '\t') == 3);
      const std::string n = line.substr(0, line.find('\t'));
      CHECK(n > previous);
      previous = n;
      names.push_back(n);
    }
    for (const char* n : {"hassell", "ricker", "beverton_holt", "ricker_competition", "lottery", "rps_lottery", "biennial",
                          "linear_matrix", "affine_scalar"})
      CHECK(std::find(names.begin(), names.end(), n) != names.end());
  }

  TEST_CASE("command line exit codes") {
    Scratch s;
    const std::string tool = STOCHPERSIST_CLI;
    auto status = [](const std::string& cmd) {
      const int raw = std::system((cmd + " >/dev/null 2>&1").c_str());
      return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
    };
    const std::string good = s.config({{"task", "gamma"}, {"task_params", {{"p", 0.5}, {"a", 0.5}, {"theta", 2}}}});
    CHECK(status(tool + " run --config " + good + " --out " + s.out().string()) == 0);
    CHECK(json::parse(slurp(s.out() / "results.json")).at("estimates").at(0).at("mean").get<double>() ==
          doctest::Approx(-0.2604491964644067).epsilon(1e-9));
    CHECK(status(tool + " run --config " + good + " --out " + s.out().string() + " --set task_params.p=2") == 2);
    CHECK_FALSE(fs::exists(s.out() / "results.json"));
    CHECK(status(tool + " list-models") == 0);
    CHECK(status(tool + " run --config " + good + " --threads 0") != 0);
  }
}
