#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "reid/config.hpp"
#include "reid/errors.hpp"
#include "reid/eval.hpp"
#include "reid/gradcheck.hpp"
#include "reid/trainer.hpp"

namespace reid {

/// 1 for configuration/validation failures, 2 for runtime failures.
int exit_code_for(ErrorKind kind);

/// Generates a dataset from cfg.synth, writes it to cfg.dataset, prints a summary.
Dataset cmd_synth(const RunConfig& cfg, std::ostream& log);

struct TrainArtifacts {
  std::string checkpoint;
  std::string metrics;
  std::string config;
  TrainResult result;
};

/// Trains on cfg.dataset and writes checkpoint.txt, metrics.csv and
/// config.cfg (the effective configuration) into the output directory.
TrainArtifacts cmd_train(const RunConfig& cfg, std::ostream& log);

/// Evaluates a checkpoint on the probe/gallery split of a dataset and writes
/// report.csv and report.md into out_dir.
EvalReport cmd_eval(const std::string& checkpoint, const std::string& dataset,
                    const std::string& out_dir, std::ostream& log);

/// Writes gradcheck.csv into out_dir (when non-empty); true when every loss passes.
bool cmd_gradcheck(const GradcheckOptions& opts, const std::string& out_dir, std::ostream& log);

struct AblationRow {
  LossVariant variant;
  std::vector<EvalReport> runs;
};

/// Trains every ablation variant `repeats` times (seeds seed..seed+R-1) and
/// writes ablation.md, ablation.csv and ablation_runs.csv.
std::vector<AblationRow> cmd_ablate(const RunConfig& cfg, std::size_t repeats, std::ostream& log);

struct SweepPoint {
  double value = 0.0;
  double rank1 = 0.0;
  double map = 0.0;
};

/// One training run per value of `axis` (Q, P, K, gamma or lambda) with the
/// other settings fixed; writes sweep_<axis>.csv and sweep_<axis>.svg.
std::vector<SweepPoint> cmd_sweep(const RunConfig& cfg, const std::string& axis,
                                  const std::vector<double>& values, std::ostream& log);

/// Trains with cfg on ds and evaluates on the same dataset's test split.
EvalReport train_and_evaluate(const RunConfig& cfg, const Dataset& ds);

}  // namespace reid
