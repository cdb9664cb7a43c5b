#include "commands.hpp"

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>

#include <CLI11.hpp>

#include "mtsct/plots.hpp"
#include "run_config.hpp"

namespace mtsct::cli {

namespace fs = std::filesystem;

namespace {

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  int jobs = 1;
  bool overwrite = false;
  std::string cohort, checkpoint, single, multi;
};

RunConfig resolve(const Flags& f) {
  RunConfig c = f.config.empty() ? default_run_config() : load_run_config(f.config);
  if (f.seed) c.seed = *f.seed;
  c.train.seed = c.seed;
  if (!f.cohort.empty()) c.paths.cohort = f.cohort;
  if (!f.checkpoint.empty()) c.paths.checkpoint = f.checkpoint;
  if (!f.single.empty()) c.paths.single = f.single;
  if (!f.multi.empty()) c.paths.multi = f.multi;
  c.validate();
  return c;
}

void prepare_out(const Flags& f) {
  if (f.out.empty()) throw ConfigError("--out is required");
  const fs::path out(f.out);
  if (fs::exists(out)) {
    if (!fs::is_directory(out)) throw DataError("output path " + out.string() + " exists and is not a directory");
    if (!fs::is_empty(out) && !f.overwrite) {
      throw ConfigError("output directory " + out.string() + " is not empty; pass --overwrite to reuse it");
    }
  }
  fs::create_directories(out);
}

void echo_config(const RunConfig& c, const fs::path& out) {
  std::ofstream os(out / "resolved_config.json");
  os << to_json(c).dump(2) << '\n';
  if (!os) throw DataError("cannot write " + (out / "resolved_config.json").string());
}

const std::string& require_path(const std::string& p, const char* what) {
  if (p.empty()) throw ConfigError(std::string("no ") + what + " path given (config paths or flag)");
  if (!fs::exists(p)) throw DataError(std::string(what) + " not found: " + p);
  return p;
}

std::vector<PairedCase> select_split(const CohortSplit& c, const std::string& split) {
  if (split == "train") return c.train;
  if (split == "val") return c.val;
  if (split == "test") return c.test;
  std::vector<PairedCase> all = c.train;
  all.insert(all.end(), c.val.begin(), c.val.end());
  all.insert(all.end(), c.test.begin(), c.test.end());
  return all;
}

template <class T>
void write_file(const fs::path& p, const T& emit) {
  std::ofstream os(p);
  if (!os) throw DataError("cannot write " + p.string());
  emit(os);
  if (!os) throw DataError("failed writing " + p.string());
}

void save_training(const TrainResult& r, const fs::path& out) {
  save_checkpoint(r.checkpoint, out / "checkpoint");
  write_file(out / "history.tsv", [&](std::ostream& os) { write_history(os, r.history); });
  write_file(out / "steps.tsv", [&](std::ostream& os) { write_step_log(os, r.history); });
}

void report_training(std::ostream& out, const TrainHistory& h, const fs::path& dir) {
  out << "epochs run " << h.stopped_epoch << ", best epoch " << h.best_epoch << " (val loss " << h.best_val
      << "), " << std::fixed << std::setprecision(1) << h.wall_seconds << " s\n"
      << std::defaultfloat << "checkpoint written to " << (dir / "checkpoint").string() << '\n';
}

// DivergenceError still leaves its history on disk.
template <class F>
TrainResult guarded_training(const fs::path& out, F&& fn) {
  try {
    return fn();
  } catch (const DivergenceError& e) {
    write_file(out / "history.tsv", [&](std::ostream& os) { write_history(os, e.history); });
    write_file(out / "steps.tsv", [&](std::ostream& os) { write_step_log(os, e.history); });
    throw;
  }
}

int cmd_generate(const Flags& f, std::ostream& out) {
  const RunConfig c = resolve(f);
  prepare_out(f);
  CohortSplit cohort = generate_cohort(c.phantom, c.cohort_size, c.seed);
  if (c.shifted) cohort = domain_shift(cohort, derive_seed(c.seed, {0x5417}));
  save_cohort(cohort, f.out);
  echo_config(c, f.out);
  out << "split rule: test = floor(n/10), val = ceil(n/10), train = n - val - test\n"
      << "split sizes (train/val/test): " << cohort.train.size() << '/' << cohort.val.size() << '/'
      << cohort.test.size() << " of n = " << c.cohort_size << '\n'
      << "domain: " << (c.shifted ? "shifted" : "source") << '\n'
      << "cohort written to " << f.out << '\n';
  return kOk;
}

int cmd_train(const Flags& f, std::ostream& out) {
  const RunConfig c = resolve(f);
  const CohortSplit cohort = load_cohort(require_path(c.paths.cohort, "cohort"));
  prepare_out(f);
  echo_config(c, f.out);
  const TrainResult r = guarded_training(f.out, [&] { return train(c.train, cohort); });
  save_training(r, f.out);
  report_training(out, r.history, f.out);
  return kOk;
}

int cmd_finetune(const Flags& f, std::ostream& out) {
  const RunConfig c = resolve(f);
  const Checkpoint ckpt = load_checkpoint(require_path(c.paths.checkpoint, "checkpoint"));
  const CohortSplit cohort = load_cohort(require_path(c.paths.cohort, "cohort"));
  prepare_out(f);
  echo_config(c, f.out);
  const TrainResult r = guarded_training(f.out, [&] { return finetune(ckpt, cohort, c.train); });
  save_training(r, f.out);
  report_training(out, r.history, f.out);
  return kOk;
}

int cmd_synthesize(const Flags& f, std::ostream& out) {
  const RunConfig c = resolve(f);
  const Checkpoint ckpt = load_checkpoint(require_path(c.paths.checkpoint, "checkpoint"));
  const CohortSplit cohort = load_cohort(require_path(c.paths.cohort, "cohort"));
  const auto cases = select_split(cohort, c.inference.split);
  if (cases.empty()) throw DataError("split '" + c.inference.split + "' has no cases");
  prepare_out(f);
  echo_config(c, f.out);
  const auto model = instantiate(ckpt);
  const ModelPredictor predictor(*model);
  SynthesisOptions so;
  so.stride = c.inference.stride;
  so.seg_threshold = c.inference.seg_threshold;
  so.hu_threshold = c.inference.hu_threshold;
  so.template_mask = ckpt.template_mask ? &*ckpt.template_mask : nullptr;
  so.ct_record = ckpt.ct_record;
  const fs::path dir(f.out);
  for (const auto& pc : cases) {
    so.reference_mask = c.inference.use_gt_mask_reference ? &pc.skull_label : nullptr;
    const SynthesisResult s = synthesize_sct(predictor, pc.mri_a, pc.mri_b, so);
    save_volume(s.sct, dir / (pc.subject_id + "_sct.cvf"));
    save_mask(s.skull_mask, dir / (pc.subject_id + "_skull_pred.cvf"));
    if (ckpt.spec.mode == nn::TaskMode::Multitask) save_volume(s.seg_probability, dir / (pc.subject_id + "_seg_prob.cvf"));
  }
  out << "synthesized " << cases.size() << " case(s) from split '" << c.inference.split << "' into " << f.out << '\n';
  return kOk;
}

int cmd_evaluate(const Flags& f, std::ostream& out) {
  const RunConfig c = resolve(f);
  const Checkpoint ckpt = load_checkpoint(require_path(c.paths.checkpoint, "checkpoint"));
  const CohortSplit cohort = load_cohort(require_path(c.paths.cohort, "cohort"));
  const auto cases = select_split(cohort, c.inference.split);
  if (cases.empty()) throw DataError("split '" + c.inference.split + "' has no cases");
  if (f.jobs < 1) throw ConfigError("--jobs must be at least 1");
  prepare_out(f);
  echo_config(c, f.out);
  EvaluateOptions eo;
  eo.stride = c.inference.stride;
  eo.use_gt_mask_reference = c.inference.use_gt_mask_reference;
  eo.jobs = f.jobs;
  const auto records = evaluate(ckpt, cases, eo);
  write_file(fs::path(f.out) / "metrics.tsv", [&](std::ostream& os) { write_metrics_table(os, records); });
  write_metrics_table(out, records);
  return kOk;
}

std::vector<MetricsRecord> read_table(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot read metrics table " + path);
  return read_metrics_table(is);
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double sd_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

int cmd_compare(const Flags& f, std::ostream& out, std::ostream& err) {
  const RunConfig c = resolve(f);
  const auto single = read_table(require_path(c.paths.single, "single-task metrics table"));
  const auto multi = read_table(require_path(c.paths.multi, "multitask metrics table"));
  const auto reports = compare_records(single, multi);
  prepare_out(f);
  echo_config(c, f.out);
  const fs::path dir(f.out);
  for (const auto& r : reports) {
    if (r.test_degenerate) {
      err << "warning: paired t-test is degenerate for " << r.metric << "\n";
    }
  }
  write_file(dir / "comparison.tsv", [&](std::ostream& os) { write_comparison_table(os, reports); });
  write_file(dir / "summary.tsv", [&](std::ostream& os) {
    os << "metric\tsingle_mean\tsingle_sd\tmulti_mean\tmulti_sd\tp_value\n" << std::setprecision(8);
    for (std::size_t k = 0; k < reports.size(); ++k) {
      const auto& name = reports[k].metric;
      std::vector<double> s, m;
      for (std::size_t i = 0; i < single.size(); ++i) {
        const double a = metric_value(single[i], name), b = metric_value(multi[i], name);
        if (!std::isfinite(a) || !std::isfinite(b)) continue;
        s.push_back(a);
        m.push_back(b);
      }
      os << name << '\t' << mean_of(s) << '\t' << sd_of(s) << '\t' << mean_of(m) << '\t' << sd_of(m) << '\t';
      if (reports[k].test_degenerate) {
        os << "degenerate";
      } else {
        os << reports[k].p_value;
      }
      os << '\n';
    }
  });
  for (const auto& name : metric_names()) {
    std::vector<double> s, m;
    for (const auto& r : single) s.push_back(metric_value(r, name));
    for (const auto& r : multi) m.push_back(metric_value(r, name));
    write_boxplot_svg(dir / ("boxplot_" + name + ".svg"), name, {"single-task", "multitask"}, {s, m});
  }
  write_gain_dotplot_svg(dir / "gain_dotplot.svg", reports);
  write_comparison_table(out, reports);
  return kOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multitask cascaded MRI-to-synthetic-CT pipeline on phantom cohorts", "mtsct"};
  app.require_subcommand(1);
  Flags f;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", f.config, "JSON run config");
    sub->add_option("--seed", f.seed, "root seed for every random stream");
    sub->add_option("--out", f.out, "output directory")->required();
    sub->add_option("--jobs", f.jobs, "parallel subjects during evaluation");
    sub->add_flag("--overwrite", f.overwrite, "write into a non-empty output directory");
  };
  auto* gen = app.add_subcommand("generate", "write a phantom cohort and its manifest");
  auto* tr = app.add_subcommand("train", "train a model on a cohort");
  auto* ft = app.add_subcommand("finetune", "continue training a checkpoint on another cohort at the reduced rate");
  auto* syn = app.add_subcommand("synthesize", "write synthetic CT volumes for one split");
  auto* ev = app.add_subcommand("evaluate", "compute the metrics table for one split");
  auto* cmp = app.add_subcommand("compare", "paired statistics, gain tables and plots for two metrics tables");
  for (auto* s : {gen, tr, ft, syn, ev, cmp}) add_common(s);
  for (auto* s : {tr, ft, syn, ev}) s->add_option("--cohort", f.cohort, "cohort directory");
  for (auto* s : {ft, syn, ev}) s->add_option("--checkpoint", f.checkpoint, "checkpoint directory");
  cmp->add_option("--single", f.single, "single-task metrics.tsv");
  cmp->add_option("--multi", f.multi, "multitask metrics.tsv");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kConfig;
  }

  try {
    if (gen->parsed()) return cmd_generate(f, out);
    if (tr->parsed()) return cmd_train(f, out);
    if (ft->parsed()) return cmd_finetune(f, out);
    if (syn->parsed()) return cmd_synthesize(f, out);
    if (ev->parsed()) return cmd_evaluate(f, out);
    return cmd_compare(f, out, err);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kData;
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << '\n';
    return kNumerical;
  } catch (const fs::filesystem_error& e) {
    err << "data error: " << e.what() << '\n';
    return kData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kInternal;
  }
}

}  // namespace mtsct::cli
