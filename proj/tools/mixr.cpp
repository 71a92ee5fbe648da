#include <mixr/mixr.h>

#include <CLI11.hpp>

#include <cstdio>
#include <string>
#include <vector>

namespace {

struct CommandArgs {
  std::string config;
  std::string out;
  std::uint64_t seed = 0;
  std::size_t workers = 0;
  std::vector<std::string> methods;
  std::string policy;
};

void add_command(CLI::App& app, const std::string& name, const std::string& help, CommandArgs& args,
                 std::string& chosen) {
  auto* sub = app.add_subcommand(name, help);
  sub->add_option("-c,--config", args.config, "JSON run config or a manifest.json to replay")
      ->required()
      ->check(CLI::ExistingFile);
  sub->add_option("-o,--out", args.out, "Output directory")->required();
  sub->add_option("--seed", args.seed, "Master seed (overrides the config)");
  sub->add_option("-w,--workers", args.workers,
                  "Worker threads (overrides the config; default MIXR_WORKERS or all cores)");
  sub->add_option("-m,--method", args.methods, "Method to run; repeat or comma-separate")
      ->delimiter(',');
  sub->add_option("-p,--policy", args.policy, "Policy CSV from a previous search");
  sub->callback([&chosen, name] { chosen = name; });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Per-example kNN mixup policy search for regression"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(mixr_version()));
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "debug, info, warn, error or off");

  CommandArgs args;
  std::string command;
  add_command(app, "search", "Search a per-example mixing policy", args, command);
  add_command(app, "compare", "Train and score every configured method", args, command);
  add_command(app, "augment", "Write the training set augmented with a policy", args, command);
  add_command(app, "analyze", "Distance studies and policy histogram", args, command);
  add_command(app, "gen-synthetic", "Write a synthetic dataset as CSV splits", args, command);
  CLI11_PARSE(app, argc, argv);

  if (mixr_set_log_level(log_level.c_str()) != MIXR_OK) {
    std::fprintf(stderr, "mixr: %s\n", mixr_last_error());
    return MIXR_ERR_CONFIG;
  }

  std::string methods;
  for (const auto& m : args.methods) methods += (methods.empty() ? "" : ",") + m;

  mixr_run_options options;
  mixr_run_options_init(&options);
  options.out_dir = args.out.c_str();
  options.workers = args.workers;
  options.methods = methods.empty() ? nullptr : methods.c_str();
  options.policy_path = args.policy.empty() ? nullptr : args.policy.c_str();
  for (const auto* sub : app.get_subcommands()) {
    if (sub->count("--seed")) {
      options.has_seed = 1;
      options.seed = args.seed;
    }
  }

  const mixr_status status = mixr_run(command.c_str(), args.config.c_str(), &options);
  if (status != MIXR_OK) {
    std::fprintf(stderr, "mixr %s: %s: %s\n", command.c_str(), mixr_status_name(status), mixr_last_error());
  }
  return status;
}
