#include <cstdio>
#include <exception>
#include <string>

#include "CLI11.hpp"
#include "cdlab/config.hpp"
#include "cdlab/error.hpp"
#include "cdlab/experiment.hpp"
#include "cdlab/log.hpp"
#include "cdlab/parallel.hpp"

namespace {

struct Args {
  std::string config;
  std::string out = ".";
  std::uint64_t seed = 0;
  bool dual_only = false;
  int threads = 0;
};

void add_common(CLI::App* sub, Args& a, std::uint64_t*& seed_flag) {
  sub->add_option("--config", a.config, "experiment config (JSON)")->required();
  auto* seed = sub->add_option("--seed", a.seed, "override the config seed");
  sub->add_option("--out", a.out, "output directory")->capture_default_str();
  sub->add_flag("--dual-only", a.dual_only, "compose-and: dual-only solver (no score network)");
  sub->add_option("--threads", a.threads, "cap on worker threads (0 = all)")->check(CLI::NonNegativeNumber);
  sub->callback([seed, &seed_flag, &a] { seed_flag = seed->count() ? &a.seed : nullptr; });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Constrained alignment and composition of 2D diffusion models"};
  app.require_subcommand(1);
  Args args;
  std::uint64_t* seed_override = nullptr;
  for (const char* name : {"align", "compose-and", "compose-or", "kl-check", "oracle"}) {
    add_common(app.add_subcommand(name, std::string("run the ") + name + " experiment"), args, seed_override);
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    cdlab::set_log_level(cdlab::log_level_from_env());
    cdlab::set_thread_cap(args.threads);
    const auto kind = cdlab::parse_experiment_kind(app.get_subcommands().front()->get_name());
    auto config = cdlab::load_config(args.config, kind);
    if (seed_override) cdlab::apply_seed(config, *seed_override);
    cdlab::RunOptions opt;
    opt.out_dir = args.out;
    opt.dual_only = args.dual_only;
    cdlab::run_experiment(config, opt);
    cdlab::log_info("wrote " + (opt.out_dir / "summary.json").string());
    return 0;
  } catch (const std::exception& e) {
    const int code = cdlab::exit_code_for(e);
    std::fprintf(stderr, "cdlab: %s\n", e.what());
    return code;
  }
}
