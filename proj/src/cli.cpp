#include "gmetro/cli.hpp"

#include "gmetro/checkpoint.hpp"
#include "gmetro/config.hpp"
#include "gmetro/graph_io.hpp"
#include "gmetro/parallel.hpp"
#include "gmetro/plots.hpp"
#include "gmetro/stats.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

namespace fs = std::filesystem;

namespace gmetro {

std::string csv_row(const std::vector<std::string>& fields) {
  std::string out;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) out += ',';
    const std::string& f = fields[i];
    if (f.find_first_of(",\"\n") == std::string::npos) {
      out += f;
      continue;
    }
    out += '"';
    for (char c : f) {
      if (c == '"') out += '"';
      out += c;
    }
    out += '"';
  }
  return out;
}

std::vector<std::string> parse_csv_row(const std::string& line) {
  std::vector<std::string> out(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        out.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        out.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.emplace_back();
    } else if (c != '\r') {
      out.back() += c;
    }
  }
  return out;
}

namespace {

struct Invocation {
  std::string command;
  fs::path config;
  std::optional<std::uint64_t> seed;
  std::optional<fs::path> out;
};

struct Context {
  ExperimentConfig cfg;
  std::vector<std::uint64_t> seeds;
  fs::path out;
  std::ostream& log;
};

void write_text(const fs::path& file, const std::string& text) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::ofstream o(file, std::ios::binary);
  if (!o) throw Error("cannot write " + file.string());
  o << text;
}

std::string read_text(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw NotFoundError("not found: " + file.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string fmt(double x) { return format_double(x); }

std::string fmt_fixed(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", x);
  return buf;
}

fs::path run_dir(const Context& c, Method m, std::uint64_t seed) {
  return c.out / std::string(to_string(m)) / ("seed_" + std::to_string(seed));
}

std::vector<Method> all_methods(const ExperimentConfig& cfg) {
  std::vector<Method> ms = cfg.methods;
  if (std::find(ms.begin(), ms.end(), cfg.baseline) == ms.end()) ms.push_back(cfg.baseline);
  return ms;
}

DatasetSplit load_data(const Context& c) {
  const fs::path& dir = c.cfg.dataset.path;
  DatasetSplit data;
  if (!fs::exists(dir / "meta.json") && c.cfg.dataset.synthetic) {
    c.log << "generating dataset at " << dir.string() << "\n";
    data = write_synthetic(*c.cfg.dataset.synthetic, dir);
  } else {
    data = read_dataset(dir);
  }
  if (data.task != c.cfg.task) throw Error("dataset task kind does not match the config");
  if (c.cfg.eval.metric == Metric::roc_auc && data.num_classes != 2)
    throw Error("roc_auc requires a binary task, dataset has " + std::to_string(data.num_classes) + " classes");
  return data;
}

LoadedCheckpoint load_run(const Context& c, Method m, std::uint64_t seed) {
  const auto index = c.cfg.transforms.index_map();
  LoadedCheckpoint ck = load_checkpoint(run_dir(c, m, seed) / "checkpoint.json", &index);
  if (ck.info.config_hash != c.cfg.hash)
    throw Error("checkpoint " + (run_dir(c, m, seed) / "checkpoint.json").string() +
                " was trained under config hash " + ck.info.config_hash + ", current is " + c.cfg.hash);
  return ck;
}

const MoeModel& as_moe(const LoadedCheckpoint& ck) {
  const auto* moe = dynamic_cast<const MoeModel*>(ck.model.get());
  if (!moe) throw Error("command needs a graphmetro checkpoint");
  return *moe;
}

void write_provenance(const Context& c) {
  nlohmann::json cfg{{"config_hash", c.cfg.hash}, {"config", c.cfg.resolved}};
  write_text(c.out / "config.json", cfg.dump(2) + "\n");
  const auto envs = enumerate_environments(c.cfg.transforms, c.cfg.k);
  nlohmann::json e{{"config_hash", c.cfg.hash},
                   {"transform_index", c.cfg.transforms.index_map()},
                   {"environments", environments_to_json(envs)}};
  write_text(c.out / "environments.json", e.dump(2) + "\n");
}

int cmd_gen_data(Context& c) {
  if (!c.cfg.dataset.synthetic) throw Error("gen-data needs dataset.synthetic in the config");
  DatasetSplit d = write_synthetic(*c.cfg.dataset.synthetic, c.cfg.dataset.path);
  c.log << "wrote " << c.cfg.dataset.path.string() << " (" << to_string(d.task) << " task, " << d.num_classes
        << " classes, train/val/test " << d.size(Split::train) << "/" << d.size(Split::val) << "/"
        << d.size(Split::test) << ")\n";
  return 0;
}

int cmd_train(Context& c) {
  const DatasetSplit data = load_data(c);
  write_provenance(c);
  const ModelConfig mc = c.cfg.model_config(data.feature_dim(), data.num_classes);
  for (std::uint64_t seed : c.seeds) {
    for (Method m : all_methods(c.cfg)) {
      auto model = make_model(m == Method::graphmetro ? "moe" : "gnn", mc, derive_seed(seed, {1}));
      TrainConfig tc = c.cfg.train;
      tc.method = m;
      tc.seed = seed;
      tc.workers = default_workers();
      const TrainResult r = train(*model, data, tc, c.cfg.transforms);
      const fs::path dir = run_dir(c, m, seed);
      save_checkpoint(dir / "checkpoint.json", *model, c.cfg.transforms.index_map(),
                      {std::string(to_string(m)), c.cfg.hash, seed, r.best_epoch, r.best_val_accuracy});
      std::string hist = csv_row({"config_hash", "seed", "method", "epoch", "l1", "l2_task", "l2_align", "total",
                                  "train_accuracy", "val_accuracy"}) + "\n";
      for (const EpochRecord& e : r.history)
        hist += csv_row({c.cfg.hash, std::to_string(seed), std::string(to_string(m)), std::to_string(e.epoch),
                         fmt(e.loss.l1_gating), fmt(e.loss.l2_task), fmt(e.loss.l2_align), fmt(e.loss.total),
                         fmt(e.train_accuracy), fmt(e.val_accuracy)}) + "\n";
      write_text(dir / "history.csv", hist);
      c.log << "trained " << to_string(m) << " seed " << seed << ": best epoch " << r.best_epoch
            << ", val accuracy " << fmt(r.best_val_accuracy) << "\n";
    }
  }
  return 0;
}

int cmd_evaluate(Context& c) {
  const DatasetSplit data = load_data(c);
  const auto envs = enumerate_environments(c.cfg.transforms, c.cfg.k);
  EvalOptions opts{c.cfg.eval.metric, c.cfg.eval.batch_size, default_workers()};
  for (Method m : all_methods(c.cfg)) {
    for (std::uint64_t seed : c.seeds) {
      LoadedCheckpoint ck = load_run(c, m, seed);
      const std::uint64_t s[] = {seed};
      const auto results = evaluate_environments(*ck.model, data, envs, s, opts);
      std::string csv = csv_row({"config_hash", "method", "seed", "env_id", "env_name", "metric", "value",
                                 "num_instances"}) + "\n";
      double shifted = 0;
      for (const EnvResult& r : results) {
        csv += csv_row({c.cfg.hash, std::string(to_string(m)), std::to_string(r.seed), std::to_string(r.env_id),
                        r.env_name, std::string(to_string(r.metric)), fmt(r.value),
                        std::to_string(r.num_instances)}) + "\n";
        if (r.env_id != 0) shifted += r.value;
      }
      write_text(run_dir(c, m, seed) / "env_results.csv", csv);
      c.log << "evaluated " << to_string(m) << " seed " << seed << ": clean " << fmt(results.front().value)
            << ", shifted mean " << fmt(results.size() > 1 ? shifted / (results.size() - 1) : 0.0) << "\n";
    }
  }
  return 0;
}

std::string matrix_csv(const Context& c, std::uint64_t seed, const Matrix& m, const std::vector<std::string>& kinds) {
  std::vector<std::string> head{"config_hash", "seed", "expert"};
  head.insert(head.end(), kinds.begin(), kinds.end());
  std::string out = csv_row(head) + "\n";
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    std::vector<std::string> row{c.cfg.hash, std::to_string(seed), kinds[i]};
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(fmt(m(i, j)));
    out += csv_row(row) + "\n";
  }
  return out;
}

int cmd_invariance(Context& c) {
  const DatasetSplit data = load_data(c);
  InvarianceOptions opts{c.cfg.eval.invariance_trials, c.cfg.eval.invariance_max_instances,
                         c.cfg.eval.invariance_norm, default_workers()};
  for (std::uint64_t seed : c.seeds) {
    LoadedCheckpoint ck = load_run(c, Method::graphmetro, seed);
    const InvarianceMatrix im = invariance_matrix(as_moe(ck), data, c.cfg.transforms, seed, opts);
    const fs::path dir = run_dir(c, Method::graphmetro, seed);
    write_text(dir / "invariance_matrix.csv", matrix_csv(c, seed, im.raw, im.labels));
    write_text(dir / "invariance_matrix_norm.csv", matrix_csv(c, seed, im.normalized, im.labels));
    write_text(dir / "invariance_matrix.svg",
               heatmap_svg("Invariance matrix (" + std::string(to_string(im.norm)) + "), seed " +
                               std::to_string(seed),
                           im.normalized, im.labels, im.labels));
    int dominant = 0;
    for (Eigen::Index i = 0; i < im.raw.rows(); ++i) {
      double off = 0;
      for (Eigen::Index j = 0; j < im.raw.cols(); ++j)
        if (j != i) off += im.raw(i, j);
      if (im.raw.cols() > 1 && im.raw(i, i) < off / static_cast<double>(im.raw.cols() - 1)) ++dominant;
    }
    c.log << "invariance seed " << seed << ": " << dominant << " of " << im.raw.rows()
          << " rows have a diagonal below the off-diagonal mean\n";
  }
  return 0;
}

std::vector<Batch> discover_target(const Context& c, const DatasetSplit& data, std::string* description) {
  const int bs = c.cfg.eval.batch_size;
  if (c.cfg.discover.target_dataset) {
    DatasetSplit target = read_dataset(*c.cfg.discover.target_dataset);
    if (target.task != data.task) throw Error("discover target has a different task kind");
    *description = c.cfg.discover.target_dataset->string();
    if (target.task == TaskKind::node) {
      std::vector<Batch> out;
      out.push_back(make_node_batch(target.graph, Split::none));
      return out;
    }
    std::vector<Batch> out;
    for (Split s : {Split::train, Split::val, Split::test}) {
      auto part = partition_batches(target, s, bs);
      for (auto& b : part) out.push_back(std::move(b));
    }
    return out;
  }
  if (!c.cfg.discover.planted.empty()) {
    std::vector<int> comps;
    std::string names;
    for (TransformKind k : c.cfg.discover.planted) {
      for (int i = 1; i <= c.cfg.transforms.size(); ++i)
        if (c.cfg.transforms.spec(i).kind == k) comps.push_back(i);
      names += (names.empty() ? "" : "+") + std::string(to_string(k));
    }
    std::sort(comps.begin(), comps.end());
    Environment env{1000, "planted", c.cfg.transforms.composite(comps)};
    *description = "test partition with planted " + names;
    return environment_batches(data, env, c.cfg.eval.eval_seed, bs, default_workers());
  }
  *description = "test partition";
  return partition_batches(data, Split::test, bs);
}

int cmd_discover(Context& c) {
  const DatasetSplit data = load_data(c);
  std::string target;
  const std::vector<Batch> batches = discover_target(c, data, &target);
  for (std::uint64_t seed : c.seeds) {
    LoadedCheckpoint ck = load_run(c, Method::graphmetro, seed);
    const MoeModel& model = as_moe(ck);
    ShiftReport rep = discover_shifts(model, batches, c.cfg.transforms.index_map());
    const GatingProbe probe = probe_gating(model, data, c.cfg.transforms, seed, c.cfg.eval.probe_instances);
    rep.gating_bit_accuracy = probe.bit_accuracy;
    rep.gating_argmax_accuracy = probe.argmax_accuracy;
    nlohmann::json j = to_json(rep);
    j["config_hash"] = c.cfg.hash;
    j["seed"] = seed;
    j["target"] = target;
    j["probe_per_component_argmax"] = probe.per_component_argmax;
    j["probe_count"] = probe.num_probes;
    const fs::path dir = run_dir(c, Method::graphmetro, seed);
    write_text(dir / "shift_report.json", j.dump(2) + "\n");
    write_text(dir / "shift_report.svg",
               bar_chart_svg("Mean gate probability, seed " + std::to_string(seed), rep.labels,
                             {{"mean probability", rep.mean_probabilities, {}}}));
    std::size_t top = 1;
    for (std::size_t i = 2; i < rep.mean_probabilities.size(); ++i)
      if (rep.mean_probabilities[i] > rep.mean_probabilities[top]) top = i;
    c.log << "discover seed " << seed << ": strongest shift component " << rep.labels.at(top) << " ("
          << fmt(rep.mean_probabilities.at(top)) << "), probe bit accuracy " << fmt(probe.bit_accuracy) << "\n";
  }
  return 0;
}

std::vector<EnvResult> read_env_results(const Context& c, Method m, std::uint64_t seed) {
  const fs::path file = run_dir(c, m, seed) / "env_results.csv";
  if (!fs::exists(file)) throw NotFoundError("results not found: " + file.string() + " (run evaluate first)");
  std::istringstream in(read_text(file));
  std::string line;
  std::getline(in, line);
  std::vector<EnvResult> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = parse_csv_row(line);
    if (f.size() != 8) throw Error("malformed row in " + file.string());
    if (f[0] != c.cfg.hash)
      throw Error("config hash mismatch in " + file.string() + " (" + f[0] + " vs " + c.cfg.hash +
                  "); refusing to join");
    EnvResult r;
    r.seed = std::stoull(f[2]);
    r.env_id = std::stoi(f[3]);
    r.env_name = f[4];
    r.metric = parse_metric(f[5]);
    r.value = parse_double(f[6]);
    r.num_instances = std::stoi(f[7]);
    out.push_back(std::move(r));
  }
  return out;
}

std::string pm(const MeanStd& m) { return fmt_fixed(100.0 * m.mean) + " ± " + fmt_fixed(100.0 * m.std); }

int cmd_report(Context& c) {
  std::map<Method, std::vector<EnvResult>> results;
  for (Method m : all_methods(c.cfg))
    for (std::uint64_t seed : c.seeds) {
      auto rs = read_env_results(c, m, seed);
      results[m].insert(results[m].end(), rs.begin(), rs.end());
    }

  std::string csv = csv_row({"config_hash", "method", "baseline", "environment", "env_id", "seeds", "method_mean",
                             "method_std", "baseline_mean", "baseline_std", "p_value"}) + "\n";
  std::string md = "# Summary: " + c.cfg.name + "\n\nconfig hash `" + c.cfg.hash + "`, seeds";
  for (auto s : c.seeds) md += " " + std::to_string(s);
  md += ", metric " + std::string(to_string(c.cfg.eval.metric)) + " (mean ± std, in %)\n";

  std::vector<std::string> env_labels;
  std::vector<BarSeries> series;
  const auto& base = results.at(c.cfg.baseline);
  for (Method m : c.cfg.methods) {
    if (m == c.cfg.baseline) continue;
    std::vector<SummaryRow> rows;
    if (c.seeds.size() >= 2) {
      rows = summarize_trials(results.at(m), base);
    } else {
      for (const EnvResult& r : results.at(m)) {
        SummaryRow row;
        row.environment = r.env_name;
        row.env_id = r.env_id;
        row.method = {r.value, 0.0};
        for (const EnvResult& b : base)
          if (b.env_id == r.env_id) row.baseline = {b.value, 0.0};
        row.seeds = 1;
        rows.push_back(row);
      }
    }
    md += "\n## " + std::string(to_string(m)) + " vs " + std::string(to_string(c.cfg.baseline)) + "\n\n";
    md += "| environment | " + std::string(to_string(m)) + " | " + std::string(to_string(c.cfg.baseline)) +
          " | p-value |\n|---|---|---|---|\n";
    BarSeries ms{std::string(to_string(m)), {}, {}}, bs{std::string(to_string(c.cfg.baseline)), {}, {}};
    std::vector<std::string> labels;
    for (const SummaryRow& r : rows) {
      const std::string p = r.seeds >= 2 ? fmt(r.test.p_value) : "NA";
      csv += csv_row({c.cfg.hash, std::string(to_string(m)), std::string(to_string(c.cfg.baseline)), r.environment,
                      std::to_string(r.env_id), std::to_string(r.seeds), fmt(r.method.mean), fmt(r.method.std),
                      fmt(r.baseline.mean), fmt(r.baseline.std), p}) + "\n";
      md += "| " + r.environment + " | " + pm(r.method) + " | " + pm(r.baseline) + " | " + p + " |\n";
      if (r.env_id >= 0) {
        labels.push_back(r.environment);
        ms.values.push_back(r.method.mean);
        ms.errors.push_back(r.method.std);
        bs.values.push_back(r.baseline.mean);
        bs.errors.push_back(r.baseline.std);
      }
    }
    if (series.empty()) {
      env_labels = labels;
      series.push_back(bs);
    }
    series.push_back(ms);
  }

  // Gate and invariance outputs, when present.
  bool gate_header = false;
  for (std::uint64_t seed : c.seeds) {
    const fs::path f = run_dir(c, Method::graphmetro, seed) / "shift_report.json";
    if (!fs::exists(f)) continue;
    const auto j = nlohmann::json::parse(read_text(f));
    if (j.at("config_hash") != c.cfg.hash)
      throw Error("config hash mismatch in " + f.string() + "; refusing to join");
    if (!gate_header) {
      md += "\n## Shift discovery\n\n| seed | target | strongest component | probe bit accuracy | probe argmax accuracy |\n"
            "|---|---|---|---|---|\n";
      gate_header = true;
    }
    const auto probs = j.at("mean_probabilities").get<std::vector<double>>();
    const auto labels = j.at("labels").get<std::vector<std::string>>();
    std::size_t top = 1;
    for (std::size_t i = 2; i < probs.size(); ++i)
      if (probs[i] > probs[top]) top = i;
    md += "| " + std::to_string(seed) + " | " + j.at("target").get<std::string>() + " | " +
          (top < labels.size() ? labels[top] : "?") + " | " + fmt_fixed(j.value("gating_bit_accuracy", 0.0)) +
          " | " + fmt_fixed(j.value("gating_argmax_accuracy", 0.0)) + " |\n";
  }
  bool inv_header = false;
  for (std::uint64_t seed : c.seeds) {
    const fs::path f = run_dir(c, Method::graphmetro, seed) / "invariance_matrix.csv";
    if (!fs::exists(f)) continue;
    std::istringstream in(read_text(f));
    std::string line;
    std::getline(in, line);
    int rows = 0, dominant = 0;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto fields = parse_csv_row(line);
      if (fields.at(0) != c.cfg.hash) throw Error("config hash mismatch in " + f.string() + "; refusing to join");
      std::vector<double> v;
      for (std::size_t k = 3; k < fields.size(); ++k) v.push_back(parse_double(fields[k]));
      double off = 0;
      for (std::size_t k = 0; k < v.size(); ++k)
        if (static_cast<int>(k) != rows) off += v[k];
      if (v.size() > 1 && v.at(rows) < off / static_cast<double>(v.size() - 1)) ++dominant;
      ++rows;
    }
    if (!inv_header) {
      md += "\n## Invariance matrix\n\n| seed | rows with diagonal below off-diagonal mean |\n|---|---|\n";
      inv_header = true;
    }
    md += "| " + std::to_string(seed) + " | " + std::to_string(dominant) + " / " + std::to_string(rows) + " |\n";
  }

  write_text(c.out / "summary.csv", csv);
  write_text(c.out / "summary.md", md);
  if (!series.empty())
    write_text(c.out / "summary_environments.svg",
               bar_chart_svg(c.cfg.name + ": " + std::string(to_string(c.cfg.eval.metric)) + " per environment",
                             env_labels, series));
  c.log << "wrote " << (c.out / "summary.md").string() << "\n";
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"GraphMETRO experiments: mixture-of-experts GNNs under distribution shift", "gmetro"};
  app.require_subcommand(1);
  Invocation inv;
  std::uint64_t seed = 0;
  std::string outdir;
  const std::vector<std::pair<const char*, const char*>> commands{
      {"train", "train every configured method for each seed"},
      {"evaluate", "score checkpoints on every test environment"},
      {"invariance", "estimate the expert invariance matrix"},
      {"discover", "report mean gate probabilities on target data"},
      {"report", "join evaluation outputs into summary tables and plots"},
      {"gen-data", "write the configured synthetic dataset"}};
  std::vector<std::pair<CLI::App*, CLI::Option*>> seed_opts;
  std::vector<CLI::Option*> out_opts;
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", inv.config, "experiment config (JSON)")->required();
    seed_opts.emplace_back(sub, sub->add_option("--seed", seed, "run a single seed instead of the configured list"));
    out_opts.push_back(sub->add_option("--out", outdir, "output directory (overrides output_dir)"));
  }

  std::vector<const char*> argv{"gmetro"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    std::string msg = e.what();
    if (msg.empty()) msg = "invalid arguments";
    err << "gmetro: " << msg << "\n";
    return 1;
  }
  for (std::size_t i = 0; i < seed_opts.size(); ++i) {
    if (!seed_opts[i].first->parsed()) continue;
    inv.command = seed_opts[i].first->get_name();
    if (seed_opts[i].second->count()) inv.seed = seed;
    if (out_opts[i]->count()) inv.out = outdir;
  }

  try {
    Context c{load_config(inv.config), {}, {}, out};
    c.seeds = inv.seed ? std::vector<std::uint64_t>{*inv.seed} : c.cfg.seeds;
    c.out = inv.out ? *inv.out : c.cfg.output_dir;
    if (inv.command == "gen-data") return cmd_gen_data(c);
    if (inv.command == "train") return cmd_train(c);
    if (inv.command == "evaluate") return cmd_evaluate(c);
    if (inv.command == "invariance") return cmd_invariance(c);
    if (inv.command == "discover") return cmd_discover(c);
    if (inv.command == "report") return cmd_report(c);
    err << "gmetro: unknown command " << inv.command << "\n";
    return 1;
  } catch (const NotFoundError& e) {
    err << "gmetro: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    err << "gmetro: " << msg << "\n";
    return 1;
  }
}

}  // namespace gmetro
