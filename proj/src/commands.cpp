#include "reid/commands.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <set>
#include <sstream>

#include "reid/model.hpp"

namespace reid {

namespace fs = std::filesystem;

namespace {

std::string prepare_dir(const std::string& out_dir) {
  const std::string dir = resolve_output_dir(out_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::IoError, "cannot create " + dir + ": " + ec.message());
  return dir;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw Error(ErrorKind::IoError, "cannot write " + path);
  return os;
}

Dataset load_dataset(const RunConfig& cfg) {
  if (cfg.dataset.empty()) throw Error(ErrorKind::ConfigConflict, "no dataset path given");
  return read_dataset(cfg.dataset);
}

double rank_at(const EvalReport& r, std::size_t k) {
  return r.cmc.empty() ? 0.0 : r.cmc[std::min(k, r.cmc.size()) - 1];
}

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};

MeanStd mean_std(const std::vector<double>& xs) {
  MeanStd out;
  if (xs.empty()) return out;
  for (double x : xs) out.mean += x;
  out.mean /= static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - out.mean) * (x - out.mean);
    out.std = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  }
  return out;
}

void write_sweep_svg(std::ostream& os, const std::string& axis, const std::vector<SweepPoint>& pts) {
  const double width = 480, height = 320, pad = 40;
  double lo = pts.front().value, hi = pts.front().value;
  for (const auto& p : pts) {
    lo = std::min(lo, p.value);
    hi = std::max(hi, p.value);
  }
  const double span = hi > lo ? hi - lo : 1.0;
  auto x_of = [&](double v) { return pad + (v - lo) / span * (width - 2 * pad); };
  auto y_of = [&](double v) { return height - pad - v * (height - 2 * pad); };
  auto polyline = [&](auto metric, const char* colour) {
    os << "<polyline fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"2\" points=\"";
    for (const auto& p : pts) os << x_of(p.value) << ',' << y_of(metric(p)) << ' ';
    os << "\"/>\n";
  };
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<line x1=\"" << pad << "\" y1=\"" << height - pad << "\" x2=\"" << width - pad << "\" y2=\""
     << height - pad << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << pad << "\" y1=\"" << pad << "\" x2=\"" << pad << "\" y2=\"" << height - pad
     << "\" stroke=\"black\"/>\n";
  polyline([](const SweepPoint& p) { return p.rank1; }, "steelblue");
  polyline([](const SweepPoint& p) { return p.map; }, "darkorange");
  for (const auto& p : pts) {
    os << "<text x=\"" << x_of(p.value) << "\" y=\"" << height - pad + 16
       << "\" font-size=\"11\" text-anchor=\"middle\">" << p.value << "</text>\n";
  }
  os << "<text x=\"" << width / 2 << "\" y=\"" << height - 6 << "\" font-size=\"12\" text-anchor=\"middle\">"
     << axis << "</text>\n";
  os << "<text x=\"" << width - pad << "\" y=\"" << pad - 20
     << "\" font-size=\"11\" text-anchor=\"end\" fill=\"steelblue\">rank-1</text>\n";
  os << "<text x=\"" << width - pad << "\" y=\"" << pad - 6
     << "\" font-size=\"11\" text-anchor=\"end\" fill=\"darkorange\">mAP</text>\n";
  os << "</svg>\n";
}

}  // namespace

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::IoError:
    case ErrorKind::NonFiniteLoss:
      return 2;
    default:
      return 1;
  }
}

Dataset cmd_synth(const RunConfig& cfg, std::ostream& log) {
  if (cfg.dataset.empty()) throw Error(ErrorKind::ConfigConflict, "no output dataset path given");
  const Dataset ds = generate(cfg.synth);
  const fs::path out(cfg.dataset);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_dataset(cfg.dataset, ds);

  std::size_t counts[3] = {0, 0, 0};
  std::set<long> train_ids, test_ids;
  for (const Sample& s : ds.samples) {
    ++counts[static_cast<int>(s.split)];
    (s.split == Split::Train ? train_ids : test_ids).insert(s.identity);
  }
  const EvalReport raw = evaluate(raw_items(ds, Split::Probe), raw_items(ds, Split::Gallery));
  log << "wrote " << cfg.dataset << ": " << ds.samples.size() << " samples, " << train_ids.size()
      << " train / " << test_ids.size() << " test identities, " << counts[0] << " train / "
      << counts[1] << " probe / " << counts[2] << " gallery, input_dim " << ds.input_dim
      << ", attributes " << ds.attribute_count << '\n';
  log << "raw-feature baseline: rank-1 " << std::fixed << std::setprecision(4) << rank_at(raw, 1)
      << ", mAP " << raw.map << std::defaultfloat << '\n';
  return ds;
}

TrainArtifacts cmd_train(const RunConfig& cfg, std::ostream& log) {
  const Dataset ds = load_dataset(cfg);
  // Fail on variant/dataset conflicts before touching the output directory.
  resolve_model_config(ds, cfg.model, cfg.train.variant);
  const std::string dir = prepare_dir(cfg.out_dir);
  TrainArtifacts art;
  art.checkpoint = (fs::path(dir) / "checkpoint.txt").string();
  art.metrics = (fs::path(dir) / "metrics.csv").string();
  art.config = (fs::path(dir) / "config.cfg").string();
  {
    auto os = open_out(art.config);
    cfg.write(os);
  }
  auto metrics = open_out(art.metrics);
  write_metrics_header(metrics);
  art.result = train(ds, cfg.model, cfg.train, cfg.sampler, cfg.loss,
                     [&](const EpochLog& row, const ModelParams&) {
                       write_metrics_row(metrics, row);
                       metrics.flush();
                       if (row.wrapped_margins > 0) {
                         log << "epoch " << row.epoch << ": " << row.wrapped_margins
                             << " target angles exceeded pi after adding the margin\n";
                       }
                     });
  save_checkpoint(art.checkpoint, art.result.model, art.result.params);
  const auto& last = art.result.log.back();
  log << "trained " << to_string(cfg.train.variant) << " for " << cfg.train.epochs << " epochs ("
      << last.step << " steps), final loss " << last.loss_total << '\n';
  log << "wrote " << art.checkpoint << ", " << art.metrics << ", " << art.config << '\n';
  return art;
}

EvalReport cmd_eval(const std::string& checkpoint, const std::string& dataset,
                    const std::string& out_dir, std::ostream& log) {
  ModelConfig model;
  ModelParams params;
  load_checkpoint(checkpoint, model, params);
  const Dataset ds = read_dataset(dataset);
  if (ds.input_dim != model.input_dim) {
    throw Error(ErrorKind::ConfigConflict, "dataset feature width differs from the checkpoint");
  }
  const EvalReport report = evaluate_model(ds, params, model);
  const std::string dir = prepare_dir(out_dir);
  {
    auto os = open_out((fs::path(dir) / "report.csv").string());
    write_report_csv(os, report);
  }
  {
    auto os = open_out((fs::path(dir) / "report.md").string());
    write_report_markdown(os, {fs::path(checkpoint).parent_path().filename().string()}, {report});
  }
  log << std::fixed << std::setprecision(4) << "rank-1 " << rank_at(report, 1) << "  rank-5 "
      << rank_at(report, 5) << "  rank-10 " << rank_at(report, 10) << "  mAP " << report.map;
  if (model.attributes > 0 && ds.attribute_count == model.attributes) {
    log << "  attribute accuracy " << attribute_accuracy(ds, params, model);
  }
  log << std::defaultfloat << '\n';
  return report;
}

bool cmd_gradcheck(const GradcheckOptions& opts, const std::string& out_dir, std::ostream& log) {
  const auto entries = run_gradcheck(opts);
  write_gradcheck_report(log, entries);
  if (!out_dir.empty()) {
    auto os = open_out((fs::path(prepare_dir(out_dir)) / "gradcheck.csv").string());
    write_gradcheck_report(os, entries);
  }
  bool ok = true;
  for (const auto& e : entries) ok = ok && e.passed;
  log << (ok ? "all losses PASS" : "gradient check FAILED") << '\n';
  return ok;
}

EvalReport train_and_evaluate(const RunConfig& cfg, const Dataset& ds) {
  const TrainResult r = train(ds, cfg.model, cfg.train, cfg.sampler, cfg.loss);
  return evaluate_model(ds, r.params, r.model);
}

std::vector<AblationRow> cmd_ablate(const RunConfig& cfg, std::size_t repeats, std::ostream& log) {
  if (repeats == 0) throw Error(ErrorKind::ConfigConflict, "repeats must be positive");
  const Dataset ds = load_dataset(cfg);
  const std::string dir = prepare_dir(cfg.out_dir);
  std::vector<AblationRow> rows;
  auto runs_csv = open_out((fs::path(dir) / "ablation_runs.csv").string());
  runs_csv << "variant,repeat,rank1,rank5,rank10,map\n" << std::setprecision(17);
  for (LossVariant v : ablation_variants()) {
    AblationRow row{v, {}};
    for (std::size_t r = 0; r < repeats; ++r) {
      RunConfig run = cfg;
      run.train.variant = v;
      run.train.seed = cfg.train.seed + r;
      run.sampler.seed = cfg.sampler.seed + r;
      const EvalReport rep = train_and_evaluate(run, ds);
      runs_csv << to_string(v) << ',' << r << ',' << rank_at(rep, 1) << ',' << rank_at(rep, 5) << ','
               << rank_at(rep, 10) << ',' << rep.map << '\n';
      log << to_string(v) << " repeat " << r << ": rank-1 " << rank_at(rep, 1) << " mAP " << rep.map << '\n';
      row.runs.push_back(rep);
    }
    rows.push_back(std::move(row));
  }

  auto csv = open_out((fs::path(dir) / "ablation.csv").string());
  auto md = open_out((fs::path(dir) / "ablation.md").string());
  csv << "variant,rank1_mean,rank1_std,rank5_mean,rank5_std,rank10_mean,rank10_std,map_mean,map_std\n"
      << std::setprecision(17);
  md << "| Loss | Rank1 | Rank5 | Rank10 | mAP |\n|---|---|---|---|---|\n" << std::fixed;
  for (const auto& row : rows) {
    std::vector<double> metric[4];
    for (const auto& rep : row.runs) {
      metric[0].push_back(rank_at(rep, 1));
      metric[1].push_back(rank_at(rep, 5));
      metric[2].push_back(rank_at(rep, 10));
      metric[3].push_back(rep.map);
    }
    csv << to_string(row.variant);
    md << "| " << to_string(row.variant);
    for (const auto& m : metric) {
      const MeanStd ms = mean_std(m);
      csv << ',' << ms.mean << ',' << ms.std;
      md << " | " << std::setprecision(2) << 100 * ms.mean << " ± " << 100 * ms.std;
    }
    csv << '\n';
    md << " |\n";
  }
  log << "wrote " << dir << "/ablation.md\n";
  return rows;
}

std::vector<SweepPoint> cmd_sweep(const RunConfig& cfg, const std::string& axis,
                                  const std::vector<double>& values, std::ostream& log) {
  const LossVariant v = cfg.train.variant;
  if (axis == "Q" || axis == "lambda") {
    if (!uses_attributes(v)) {
      throw Error(ErrorKind::ConfigConflict, "axis " + axis + " needs the AM0BH_Attr variant");
    }
  } else if (axis == "gamma") {
    if (!uses_metric(v)) throw Error(ErrorKind::ConfigConflict, "axis gamma needs a metric term");
  } else if (axis != "P" && axis != "K") {
    throw Error(ErrorKind::ConfigConflict, "unknown sweep axis '" + axis + "' (Q, P, K, gamma, lambda)");
  }
  if (values.empty()) throw Error(ErrorKind::ConfigConflict, "no sweep values");

  const Dataset ds = load_dataset(cfg);
  std::vector<SweepPoint> points;
  for (double value : values) {
    RunConfig run = cfg;
    auto as_count = [&] {
      if (!(value >= 1) || value != std::floor(value)) {
        throw Error(ErrorKind::ConfigConflict, "axis " + axis + " needs positive integers");
      }
      return static_cast<std::size_t>(value);
    };
    if (axis == "Q") run.model.attribute_width = as_count();
    else if (axis == "P") run.sampler.identities_per_batch = as_count();
    else if (axis == "K") run.sampler.samples_per_identity = as_count();
    else if (axis == "gamma") run.loss.gamma = value;
    else run.loss.lambda = value;
    run.finalize();
    const EvalReport rep = train_and_evaluate(run, ds);
    points.push_back({value, rank_at(rep, 1), rep.map});
    log << axis << " = " << value << ": rank-1 " << rank_at(rep, 1) << " mAP " << rep.map << '\n';
  }

  const std::string dir = prepare_dir(cfg.out_dir);
  auto csv = open_out((fs::path(dir) / ("sweep_" + axis + ".csv")).string());
  csv << axis << ",rank1,map\n" << std::setprecision(17);
  for (const auto& p : points) csv << p.value << ',' << p.rank1 << ',' << p.map << '\n';
  auto svg = open_out((fs::path(dir) / ("sweep_" + axis + ".svg")).string());
  write_sweep_svg(svg, axis, points);
  return points;
}

}  // namespace reid
