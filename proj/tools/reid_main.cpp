// Command-line entry point: synth, train, eval, gradcheck, ablate, sweep.

#include <CLI11.hpp>

#include <iostream>
#include <map>
#include <optional>
#include <string>

#include "reid/commands.hpp"

namespace {

struct ConfigArgs {
  std::string config_file;
  std::map<std::string, std::string> overrides;
};

// Every config key becomes a --key option on the subcommand.
void add_config_options(CLI::App* cmd, ConfigArgs& args) {
  cmd->add_option("-c,--config", args.config_file, "key = value config file");
  for (const auto& key : reid::config_keys()) {
    cmd->add_option_function<std::string>(
        "--" + key.name, [&args, name = key.name](const std::string& v) { args.overrides[name] = v; },
        key.help);
  }
}

reid::RunConfig build_config(const ConfigArgs& args) {
  reid::RunConfig cfg;
  if (!args.config_file.empty()) reid::load_config_file(args.config_file, cfg);
  for (const auto& key : reid::config_keys()) {
    auto it = args.overrides.find(key.name);
    if (it != args.overrides.end()) cfg.set(key.name, it->second);
  }
  cfg.finalize();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Joint angular-margin softmax and batch-hard triplet embedding training"};
  app.require_subcommand(1);

  ConfigArgs synth_args, train_args, ablate_args, sweep_args;
  auto* synth = app.add_subcommand("synth", "generate a synthetic re-identification dataset");
  add_config_options(synth, synth_args);

  auto* train = app.add_subcommand("train", "train an embedding on a dataset");
  add_config_options(train, train_args);

  std::string checkpoint, eval_dataset, eval_out = "out";
  auto* eval = app.add_subcommand("eval", "CMC / mAP of a checkpoint on a dataset's test split");
  eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  eval->add_option("--dataset", eval_dataset, "dataset CSV")->required();
  eval->add_option("--out-dir", eval_out, "report directory");

  reid::GradcheckOptions gc;
  std::string gc_out;
  auto* gradcheck = app.add_subcommand("gradcheck", "analytic vs finite-difference gradients");
  gradcheck->add_option("--seed", gc.seed, "random seed");
  gradcheck->add_option("--trials", gc.trials, "random configurations per loss");
  gradcheck->add_option("--tolerance", gc.tolerance, "max relative error");
  gradcheck->add_flag("--corrupt", gc.corrupt, "perturb the analytic gradient (negative control)");
  gradcheck->add_option("--out-dir", gc_out, "directory for gradcheck.csv");

  std::size_t repeats = 5;
  auto* ablate = app.add_subcommand("ablate", "train every loss combination and tabulate");
  add_config_options(ablate, ablate_args);
  ablate->add_option("--repeats", repeats, "runs per variant");

  std::string axis;
  std::vector<double> values;
  auto* sweep = app.add_subcommand("sweep", "one run per value of Q, P, K, gamma or lambda");
  add_config_options(sweep, sweep_args);
  sweep->add_option("--axis", axis, "Q | P | K | gamma | lambda")->required();
  sweep->add_option("--values", values, "comma-separated values")->required()->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (synth->parsed()) {
      reid::cmd_synth(build_config(synth_args), std::cout);
    } else if (train->parsed()) {
      reid::cmd_train(build_config(train_args), std::cout);
    } else if (eval->parsed()) {
      reid::cmd_eval(checkpoint, eval_dataset, eval_out, std::cout);
    } else if (gradcheck->parsed()) {
      return reid::cmd_gradcheck(gc, gc_out, std::cout) ? 0 : 2;
    } else if (ablate->parsed()) {
      reid::cmd_ablate(build_config(ablate_args), repeats, std::cout);
    } else if (sweep->parsed()) {
      reid::cmd_sweep(build_config(sweep_args), axis, values, std::cout);
    }
  } catch (const reid::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return reid::exit_code_for(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
