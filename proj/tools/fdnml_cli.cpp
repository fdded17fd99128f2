// fdnml command-line driver: one subcommand per stage plus `run` and `report`.
#include "fdnml/common.hpp"
#include "fdnml/complexity.hpp"
#include "fdnml/distance.hpp"
#include "fdnml/fracnet.hpp"
#include "fdnml/ingest.hpp"
#include "fdnml/learn.hpp"
#include "fdnml/multifractal.hpp"
#include "fdnml/pipeline.hpp"
#include "fdnml/synth.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace fdnml;

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::size_t threads{0};
  std::string out;
  bool verbose{false};
};

void log(const Globals& g, const std::string& msg) {
  if (g.verbose) std::cerr << "[fdnml] " << msg << '\n';
}

// The pipeline config (or defaults) with command-line overrides applied.
pipeline::PipelineConfig base_config(const Globals& g) {
  pipeline::PipelineConfig cfg = g.config.empty() ? pipeline::parse_config(json::object()) : pipeline::load_config(g.config);
  if (g.seed) {
    cfg.seed = *g.seed;
    cfg.learn.train.seed = derive_seed(cfg.seed, "learn");
  }
  if (g.threads > 0) cfg.threads = g.threads;
  if (!g.out.empty()) cfg.output_dir = g.out;
  if (cfg.threads > 0) set_thread_count(cfg.threads);
  return cfg;
}

fs::path out_dir(const pipeline::PipelineConfig& cfg) {
  fs::create_directories(cfg.output_dir);
  return cfg.output_dir;
}

void write_json(const fs::path& p, const json& j) {
  std::ofstream out(p);
  if (!out) throw DataError("cannot write " + p.string());
  out << j.dump(2) << '\n';
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw DataError("cannot open " + p.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DataError(p.string() + ": " + e.what());
  }
}

ingest::EegRecording load_one(const std::string& path, const std::string& map, std::optional<int> label) {
  ingest::ColumnMap m;
  if (!map.empty()) m = ingest::load_column_map(map);
  if (label) {
    m.label_column.reset();
    m.label_file.reset();
    m.label_value = *label;
  }
  auto r = ingest::load_recording(path, m).recording;
  if (label) r.fatigue_level = *label;
  return r;
}

// Rebuilds a trial signal from its windows (later windows overwrite the
// overlap, which holds identical samples).
Eigen::MatrixXd stitch(const ingest::WindowedSeries& s) {
  std::size_t len = 0;
  for (std::size_t w = 0; w < s.size(); ++w) {
    len = std::max(len, s.window_starts[w] + static_cast<std::size_t>(s.windows[w].cols()));
  }
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(s.channels.size()), static_cast<Eigen::Index>(len));
  for (std::size_t w = 0; w < s.size(); ++w) {
    x.middleCols(static_cast<Eigen::Index>(s.window_starts[w]), s.windows[w].cols()) = s.windows[w];
  }
  return x;
}

// ---------------------------------------------------------------------------

void cmd_synth(const Globals& g, const std::string& kind, std::size_t trials, std::size_t samples, double hurst,
               double weight, int depth) {
  auto cfg = base_config(g);
  const fs::path out = out_dir(cfg);
  if (kind == "dataset") {
    synth::DatasetSpec spec = cfg.dataset.synthetic;
    if (trials > 0) spec.trials_per_level = trials;
    if (samples > 0) spec.samples_per_trial = samples;
    spec.seed = derive_seed(cfg.seed, "synth");
    fs::create_directories(out / "data");
    json files = json::array();
    for (const auto& r : synth::gen_fatigue_dataset(spec)) {
      const fs::path p = out / "data" / (r.trial_id + ".csv");
      ingest::write_recording_csv(p, r);
      files.push_back({{"path", "data/" + r.trial_id + ".csv"}, {"label", r.fatigue_level}, {"trial_id", r.trial_id}});
      log(g, "wrote " + p.string());
    }
    write_json(out / "dataset.json", {{"source", "files"}, {"files", files}});
    return;
  }
  ingest::EegRecording rec;
  rec.sample_rate_hz = 256.0;
  rec.channels = {"x"};
  if (kind == "fbm") {
    const auto path = synth::gen_fbm({hurst, samples > 0 ? samples : 16384, cfg.seed});
    rec.samples = Eigen::Map<const Eigen::RowVectorXd>(path.path.data(), static_cast<Eigen::Index>(path.path.size()));
    rec.trial_id = "fbm";
  } else if (kind == "cascade") {
    const auto path = synth::gen_cascade({depth, weight, cfg.seed});
    rec.samples = Eigen::Map<const Eigen::RowVectorXd>(path.path.data(), static_cast<Eigen::Index>(path.path.size()));
    rec.trial_id = "cascade";
  } else {
    throw ConfigError("synth kind must be dataset, fbm or cascade");
  }
  ingest::write_recording_csv(out / (rec.trial_id + ".csv"), rec);
}

void cmd_ingest(const Globals& g, const std::vector<std::string>& files, const std::string& map,
                std::optional<int> label) {
  auto cfg = base_config(g);
  std::vector<ingest::WindowedSeries> series;
  std::vector<ingest::EegRecording> recs;
  if (files.empty()) {
    recs = pipeline::load_recordings(cfg);
  } else {
    for (const auto& f : files) recs.push_back(load_one(f, map, label));
  }
  const fs::path out = out_dir(cfg);
  json diag = json::array();
  for (const auto& r : recs) {
    series.push_back(ingest::window(r, cfg.window));
    diag.push_back({{"trial_id", r.trial_id}, {"label", r.fatigue_level}, {"samples", r.n_samples()},
                    {"windows", series.back().size()}});
  }
  ingest::write_windows_csv(out / "windows.csv", series);
  write_json(out / "ingest.json", {{"trials", diag}});
  log(g, "wrote " + (out / "windows.csv").string());
}

void cmd_mfa(const Globals& g, const std::string& file, const std::string& map, std::optional<int> label) {
  auto cfg = base_config(g);
  const auto rec = load_one(file, map, label);
  const auto& mc = cfg.multifractal;
  json chans = json::array();
  std::ofstream dq;
  const fs::path out = out_dir(cfg);
  dq.open(out / "dq.csv");
  dq << "channel,q,dq,ci_low,ci_high\n";
  for (std::size_t c = 0; c < rec.n_channels(); ++c) {
    mf::MfaOptions o;
    o.family = mc.family;
    o.qs = mc.qs;
    o.j1 = mc.trial_j1;
    o.j2 = mc.trial_j2;
    o.weighted = mc.weighted;
    o.convention = mc.convention;
    o.bootstrap_resamples = mc.bootstrap_resamples;
    o.bootstrap_level = mc.bootstrap_level;
    o.seed = derive_seed(derive_seed(cfg.seed, "bootstrap"), static_cast<std::uint64_t>(c));
    const Eigen::VectorXd x = rec.samples.row(static_cast<Eigen::Index>(c)).transpose();
    const auto s = mf::analyze(std::span<const double>(x.data(), static_cast<std::size_t>(x.size())), o);
    chans.push_back(pipeline::summary_json(s, rec.channels[c]));
    for (std::size_t i = 0; i < s.q.size(); ++i) {
      dq << rec.channels[c] << ',' << ingest::format_double(s.q[i]) << ',' << ingest::format_double(s.dq.dq[i]) << ',';
      if (s.bootstrap) {
        dq << ingest::format_double(s.bootstrap->dq[i].low) << ',' << ingest::format_double(s.bootstrap->dq[i].high);
      } else {
        dq << "NA,NA";
      }
      dq << '\n';
    }
  }
  write_json(out / "mfa.json", {{"trial_id", rec.trial_id}, {"label", rec.fatigue_level}, {"q", mc.qs.q}, {"channels", chans}});
}

void cmd_fdn_fit(const Globals& g, const std::string& windows_csv) {
  auto cfg = base_config(g);
  const auto series = ingest::read_windows_csv(windows_csv);
  std::vector<fracnet::CouplingTrajectory> trajs;
  json trials = json::array();
  for (const auto& s : series) {
    const auto est = fracnet::estimate_alphas(stitch(s));
    Eigen::VectorXd alpha(static_cast<Eigen::Index>(est.size()));
    json ja = json::array();
    for (std::size_t c = 0; c < est.size(); ++c) {
      alpha(static_cast<Eigen::Index>(c)) = est[c].alpha;
      ja.push_back({{"channel", s.channels[c]}, {"alpha", est[c].alpha}, {"clamped", est[c].clamped}});
    }
    log(g, "fitting " + s.trial_id);
    trajs.push_back(fracnet::coupling_trajectory(s, alpha, cfg.fracnet.p, cfg.fracnet.em));
    trials.push_back({{"trial_id", s.trial_id}, {"label", s.label}, {"alpha", ja},
                      {"windows", trajs.back().windows()}, {"invalid_windows", trajs.back().invalid_count()}});
  }
  const fs::path out = out_dir(cfg);
  fracnet::write_trajectories_csv(out / "trajectories.csv", trajs);
  write_json(out / "fracnet.json", {{"p", cfg.fracnet.p}, {"trials", trials}});
}

void cmd_lzc(const Globals& g, const std::vector<std::string>& inputs) {
  auto cfg = base_config(g);
  std::vector<complexity::TrajectoryComplexity> rows;
  std::map<int, std::vector<double>> by_level;
  for (const auto& path : inputs) {
    for (const auto& tr : fracnet::read_trajectories_csv(path)) {
      const auto bits = complexity::binarize(tr);
      complexity::TrajectoryComplexity r{tr.trial_id, tr.fatigue_level, complexity::lz76(bits), bits.degenerate};
      by_level[r.fatigue_level].push_back(r.result.ci);
      rows.push_back(r);
    }
  }
  const fs::path out = out_dir(cfg);
  complexity::write_complexity_csv(out / "complexity.csv", rows);
  json groups{{"test", "kruskal-wallis"}};
  try {
    const auto gr = complexity::group_compare(by_level);
    groups["h"] = gr.h;
    groups["p_value"] = gr.p_value;
    groups["dof"] = gr.dof;
    for (const auto& [l, m] : gr.means) groups["means"][std::to_string(l)] = m;
  } catch (const DataError& e) {
    groups["error"] = e.what();
    std::cerr << "warning: " << e.what() << '\n';
  }
  write_json(out / "complexity_groups.json", groups);
}

// Each input is either an `mfa` output (one trial) or a pipeline
// mfa_trials.json (many trials); one sample per trial, the channel-mean D_q.
void cmd_wdist(const Globals& g, const std::vector<std::string>& inputs, const std::string& reduction, double q) {
  auto cfg = base_config(g);
  distance::CurveSamples samples;
  std::vector<double> grid;
  auto take = [&](const json& trial) {
    const auto& chans = trial.at("channels");
    if (chans.empty()) throw DataError("summary without channels");
    std::vector<double> mean;
    for (const auto& c : chans) {
      const auto dq = c.at("dq").get<std::vector<double>>();
      if (mean.empty()) mean.assign(dq.size(), 0.0);
      if (dq.size() != mean.size()) throw DataError("summaries use different q grids");
      for (std::size_t i = 0; i < dq.size(); ++i) mean[i] += dq[i] / static_cast<double>(chans.size());
    }
    samples[trial.at("label").get<int>()].push_back(mean);
  };
  for (const auto& path : inputs) {
    const json j = read_json(path);
    const auto qs = j.at("q").get<std::vector<double>>();
    if (!grid.empty() && qs != grid) throw DataError(path + ": different q grid");
    grid = qs;
    if (j.contains("trials")) {
      for (const auto& t : j["trials"]) take(t);
    } else {
      take(j);
    }
  }
  const auto red = distance::parse_reduction(reduction);
  const auto table = distance::pairwise_level_distances(samples, grid, red, q);
  const fs::path out = out_dir(cfg);
  write_json(out / "wasserstein.json", pipeline::distance_json(table));
  std::ofstream csv(out / "wasserstein.csv");
  csv << "a,b,w1\n";
  for (std::size_t a = 0; a < table.levels.size(); ++a) {
    for (std::size_t b = a + 1; b < table.levels.size(); ++b) {
      csv << table.levels[a] << ',' << table.levels[b] << ','
          << ingest::format_double(table.w(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b))) << '\n';
    }
  }
}

void cmd_train(const Globals& g, const std::string& windows_csv, const std::string& features_csv) {
  auto cfg = base_config(g);
  const auto ds = learn::load_dataset(windows_csv, features_csv);
  log(g, "training on " + std::to_string(ds.size()) + " windows");
  auto trained = learn::train_full(ds, cfg.learn.encoder, cfg.learn.train);
  const fs::path out = out_dir(cfg);
  learn::save_checkpoint(out / "model.fdnml", *trained.model, distance::kFeatureLayoutVersion,
                         {{"config", cfg.to_json()}});
  pipeline::write_curves_csv(out / "loss_curves.csv",
                             {{"full", &trained.pretrain_curves}, {"full", &trained.classifier_curves}});
  write_json(out / "train.json", {{"windows", ds.size()},
                                  {"parameter_count", trained.model->parameter_count()},
                                  {"classifier_best_epoch", trained.classifier_curves.best_epoch},
                                  {"classifier_best_val_loss", trained.classifier_curves.best_val_loss}});
}

void cmd_evaluate(const Globals& g, const std::string& checkpoint, const std::string& windows_csv,
                  const std::string& features_csv, const std::string& unit) {
  auto cfg = base_config(g);
  auto loaded = learn::load_checkpoint(checkpoint);
  if (loaded.feature_layout_version != distance::kFeatureLayoutVersion) {
    throw DataError("checkpoint feature layout version " + std::to_string(loaded.feature_layout_version) +
                    " does not match " + std::to_string(distance::kFeatureLayoutVersion));
  }
  const auto ds = learn::load_dataset(windows_csv, features_csv);
  const auto ev = learn::evaluate(*loaded.model, ds, learn::parse_eval_unit(unit));
  const fs::path out = out_dir(cfg);
  write_json(out / "evaluation.json", {{"unit", unit}, {"metrics", learn::to_json(ev.metrics)}});
  pipeline::write_confusion_csv(out / "confusion.csv", ev.metrics.confusion);
  pipeline::write_metrics_csv(out / "metrics.csv", ev.metrics);
  std::ofstream pred(out / "predictions.csv");
  pred << "unit,label,p0,p1,p2\n";
  for (std::size_t i = 0; i < ev.labels.size(); ++i) {
    pred << ev.unit_names[i] << ',' << ev.labels[i];
    for (Eigen::Index c = 0; c < ev.scores.cols(); ++c) {
      pred << ',' << ingest::format_double(ev.scores(static_cast<Eigen::Index>(i), c));
    }
    pred << '\n';
  }
  std::cout << "accuracy " << ev.metrics.accuracy << '\n';
}

void cmd_run(const Globals& g) {
  if (g.config.empty()) throw ConfigError("run needs --config");
  auto cfg = base_config(g);
  const auto manifest = pipeline::run_pipeline(cfg);
  for (const auto& s : manifest.stages) log(g, "stage " + s.name + " done");
  const auto report = pipeline::write_report(cfg.output_dir / "manifest.json");
  std::cout << report.string() << '\n';
}

void cmd_report(const Globals& g, const std::string& manifest) {
  fs::path m = manifest;
  if (m.empty()) {
    if (g.out.empty()) throw ConfigError("report needs a manifest path or --out");
    m = fs::path(g.out) / "manifest.json";
  }
  std::cout << pipeline::write_report(m).string() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fdnml: multifractal and fractional-network analysis of EEG fatigue"};
  app.set_version_flag("--version", std::string(pipeline::kVersion));
  app.require_subcommand(1);
  Globals g;
  std::uint64_t seed = 0;
  app.add_option("--config", g.config, "pipeline config (JSON)");
  auto* seed_opt = app.add_option("--seed", seed, "master seed");
  app.add_option("--threads", g.threads, "worker threads (default: all cores)");
  app.add_option("--out", g.out, "output directory");
  app.add_flag("--verbose,-v", g.verbose, "progress messages on stderr");
  app.fallthrough();

  std::string kind = "dataset";
  std::size_t trials = 0, samples = 0;
  double hurst = 0.7, weight = 0.7;
  int depth = 14;
  auto* synth = app.add_subcommand("synth", "generate synthetic recordings");
  synth->add_option("--kind", kind, "dataset | fbm | cascade")->check(CLI::IsMember({"dataset", "fbm", "cascade"}));
  synth->add_option("--trials-per-level", trials, "dataset trials per fatigue level");
  synth->add_option("--samples", samples, "samples per trial (dataset) or path length (fbm)");
  synth->add_option("--hurst", hurst, "fbm Hurst exponent");
  synth->add_option("--weight", weight, "cascade weight");
  synth->add_option("--depth", depth, "cascade depth");

  std::vector<std::string> inputs;
  std::string map;
  std::optional<int> label;
  auto* ingest_cmd = app.add_subcommand("ingest", "window recordings into windows.csv");
  ingest_cmd->add_option("files", inputs, "recording files (default: the dataset in --config)");
  ingest_cmd->add_option("--map", map, "column map file");
  ingest_cmd->add_option("--label", label, "fatigue level for every file");

  std::string file;
  auto* mfa = app.add_subcommand("mfa", "multifractal summary of one recording");
  mfa->add_option("file", file, "recording CSV")->required();
  mfa->add_option("--map", map, "column map file");
  mfa->add_option("--label", label, "fatigue level");

  auto* fdn = app.add_subcommand("fdn-fit", "fractional network fit of every window");
  fdn->add_option("windows", file, "windows CSV")->required();

  auto* lzc = app.add_subcommand("lzc", "Lempel-Ziv complexity of coupling trajectories");
  lzc->add_option("trajectories", inputs, "trajectory CSV files")->required();

  std::string reduction = "curve";
  double q = 2.0;
  auto* wdist = app.add_subcommand("wdist", "Wasserstein distances between fatigue levels");
  wdist->add_option("summaries", inputs, "mfa.json or mfa_trials.json files")->required();
  wdist->add_option("--reduction", reduction, "curve | scalar");
  wdist->add_option("--q", q, "moment for the scalar reduction");

  std::string windows_csv, features_csv, checkpoint, unit = "window";
  auto* train = app.add_subcommand("train", "train a classifier on a windows/features pair");
  train->add_option("windows", windows_csv, "windows CSV")->required();
  train->add_option("features", features_csv, "features CSV")->required();

  auto* evaluate = app.add_subcommand("evaluate", "score a checkpoint on a windows/features pair");
  evaluate->add_option("checkpoint", checkpoint, "model checkpoint")->required();
  evaluate->add_option("windows", windows_csv, "windows CSV")->required();
  evaluate->add_option("features", features_csv, "features CSV")->required();
  evaluate->add_option("--unit", unit, "window | trial")->check(CLI::IsMember({"window", "trial"}));

  auto* run = app.add_subcommand("run", "run every stage from --config and write the report");

  std::string manifest;
  auto* report = app.add_subcommand("report", "render report.md from a manifest");
  report->add_option("manifest", manifest, "manifest.json (default: <out>/manifest.json)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }
  if (*seed_opt) g.seed = seed;

  try {
    if (*synth) cmd_synth(g, kind, trials, samples, hurst, weight, depth);
    else if (*ingest_cmd) cmd_ingest(g, inputs, map, label);
    else if (*mfa) cmd_mfa(g, file, map, label);
    else if (*fdn) cmd_fdn_fit(g, file);
    else if (*lzc) cmd_lzc(g, inputs);
    else if (*wdist) cmd_wdist(g, inputs, reduction, q);
    else if (*train) cmd_train(g, windows_csv, features_csv);
    else if (*evaluate) cmd_evaluate(g, checkpoint, windows_csv, features_csv, unit);
    else if (*run) cmd_run(g);
    else if (*report) cmd_report(g, manifest);
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const StageError& e) {
    std::cerr << "stage '" << e.stage() << "' failed: " << e.what() << '\n';
    return 5;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 5;
  }
}
