#include "distill/runner.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace distill {

namespace fs = std::filesystem;
using nlohmann::json;

fs::path output_root() {
  const char* env = std::getenv(kOutputRootEnv);
  return (env && *env) ? fs::path(env) : fs::path("runs");
}

fs::path resolve_output_dir(const ExperimentConfig& c) {
  fs::path dir = c.output_dir.empty()
                     ? fs::path(std::string(to_string(c.lab)) + "-" + c.method_name() + "-seed" + std::to_string(c.seed()))
                     : fs::path(c.output_dir);
  return dir.is_absolute() ? dir : output_root() / dir;
}

void write_atomic(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write '" + tmp.string() + "'");
    out << content;
    out.flush();
    if (!out) throw std::runtime_error("write failed for '" + tmp.string() + "'");
  }
  fs::rename(tmp, path);
}

std::string samples_csv(const std::vector<SampleSnapshot>& snapshots, std::uint64_t seed) {
  Eigen::Index d = 0;
  for (const auto& s : snapshots)
    for (const PointBatch* b : {&s.p, &s.q, &s.r})
      if (b->cols() > 0) d = b->rows();
  std::ostringstream os;
  os << "# schema=" << kSamplesSchema << " seed=" << seed << "\n";
  os << "step,set,index";
  for (Eigen::Index i = 0; i < d; ++i) os << ",x_" << i;
  os << "\n";
  for (const auto& s : snapshots) {
    const std::pair<const char*, const PointBatch*> sets[] = {{"p", &s.p}, {"q", &s.q}, {"r", &s.r}};
    for (const auto& [name, b] : sets) {
      for (Eigen::Index k = 0; k < b->cols(); ++k) {
        os << s.step << "," << name << "," << k;
        for (Eigen::Index i = 0; i < b->rows(); ++i) os << "," << format_number((*b)(i, k));
        os << "\n";
      }
    }
  }
  return os.str();
}

std::vector<SampleSnapshot> read_samples_csv(std::istream& is) {
  std::string line;
  std::vector<std::string> header;
  std::vector<SampleSnapshot> out;
  std::vector<std::vector<std::vector<double>>> cols;  // per snapshot, per set: flattened columns
  auto split = [](const std::string& l) {
    std::vector<std::string> f;
    std::stringstream ss(l);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    return f;
  };
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    if (header.empty()) {
      header = split(line);
      if (header.size() < 3 || header[0] != "step" || header[1] != "set" || header[2] != "index")
        throw std::runtime_error("samples table must start with step,set,index");
      continue;
    }
    const auto f = split(line);
    if (f.size() != header.size())
      throw std::runtime_error("samples line " + std::to_string(lineno) + " has the wrong number of fields");
    const long step = std::stol(f[0]);
    const int set = f[1] == "p" ? 0 : f[1] == "q" ? 1 : f[1] == "r" ? 2 : -1;
    if (set < 0) throw std::runtime_error("samples line " + std::to_string(lineno) + ": unknown set '" + f[1] + "'");
    if (out.empty() || out.back().step != step) {
      out.push_back({step, {}, {}, {}});
      cols.emplace_back(3);
    }
    auto& flat = cols.back()[static_cast<std::size_t>(set)];
    for (std::size_t i = 3; i < f.size(); ++i) flat.push_back(std::stod(f[i]));
  }
  const auto d = static_cast<Eigen::Index>(header.size() >= 3 ? header.size() - 3 : 0);
  for (std::size_t k = 0; k < out.size(); ++k) {
    PointBatch* sets[] = {&out[k].p, &out[k].q, &out[k].r};
    for (int s = 0; s < 3; ++s) {
      const auto& flat = cols[k][static_cast<std::size_t>(s)];
      const Eigen::Index n = d > 0 ? static_cast<Eigen::Index>(flat.size()) / d : 0;
      *sets[s] = Eigen::Map<const PointBatch>(flat.data(), d, n);
    }
  }
  return out;
}

namespace {

std::string timing_text(const std::vector<double>& secs) {
  std::ostringstream os;
  os << "iterations " << secs.size() << "\n";
  if (!secs.empty()) {
    std::vector<double> sorted = secs;
    std::sort(sorted.begin(), sorted.end());
    const double total = std::accumulate(secs.begin(), secs.end(), 0.0);
    os << "total_seconds " << total << "\n"
       << "mean_seconds_per_iteration " << total / static_cast<double>(secs.size()) << "\n"
       << "median_seconds_per_iteration " << sorted[sorted.size() / 2] << "\n"
       << "max_seconds_per_iteration " << sorted.back() << "\n";
  }
  return os.str();
}

json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

}  // namespace

RunArtifacts run_experiment(const ExperimentConfig& c, const fs::path& dir) {
  c.validate();
  RunArtifacts a;
  a.dir = dir;
  a.resolved_config = dir / "config.resolved.json";
  a.trajectory = dir / "trajectory.csv";
  a.summary = dir / "summary.json";
  a.timing = dir / "timing.txt";
  write_atomic(a.resolved_config, to_json(c).dump(2) + "\n");

  json summary{{"schema", "run-summary/1"}, {"lab", to_string(c.lab)}, {"method", c.method_name()},
               {"seed", c.seed()}};
  std::vector<double> secs;
  if (c.lab == LabKind::gaussian) {
    const GaussianRunResult r = run_gaussian_experiment(c.gaussian);
    write_atomic(a.trajectory, to_csv(r.trajectory, kGaussianTrajectorySchema, c.seed()));
    if (!r.snapshots.empty()) {
      a.samples = dir / "samples.csv";
      write_atomic(*a.samples, samples_csv(r.snapshots, c.seed()));
    }
    a.truncated = r.trajectory.truncated;
    a.truncation_reason = r.trajectory.truncation_reason;
    a.final_divergence = r.final_kl;
    summary["steps_completed"] = r.iteration_seconds.size();
    summary["rows"] = r.trajectory.rows().size();
    summary["final_kl"] = finite_or_null(r.final_kl);
    summary["final_symmetric_kl"] = finite_or_null(r.final_symmetric_kl);
    summary["nan_replacements"] = r.trajectory.nan_replacements;
    secs = r.iteration_seconds;
  } else {
    const NeuralRunResult r = run_neural_experiment(c.neural);
    write_atomic(a.trajectory, to_csv(r.trajectory, kNeuralTrajectorySchema, c.seed()));
    a.norms = dir / "norms.csv";
    write_atomic(*a.norms, to_csv(norm_table(r.norms), kNormSchema, c.seed()));
    if (!r.snapshots.empty()) {
      a.samples = dir / "samples.csv";
      write_atomic(*a.samples, samples_csv(r.snapshots, c.seed()));
    }
    a.truncated = r.trajectory.truncated;
    a.truncation_reason = r.trajectory.truncation_reason;
    a.final_divergence = r.final_divergence;
    summary["steps_completed"] = r.iteration_seconds.size();
    summary["rows"] = r.trajectory.rows().size();
    summary["final_kl"] = finite_or_null(r.final_divergence);
    if (!r.norms.empty()) {
      const NormRecord& n = r.norms.back();
      summary["final_norms"] = {{"norm_eps_phi", n.norm_eps_phi},
                                {"norm_delta_first", n.norm_delta_first},
                                {"norm_delta_high", n.norm_delta_high}};
    }
    summary["nan_replacements"] = r.trajectory.nan_replacements;
    secs = r.iteration_seconds;
  }
  summary["truncated"] = a.truncated;
  summary["truncation_reason"] = a.truncation_reason;
  write_atomic(a.summary, summary.dump(2) + "\n");
  write_atomic(a.timing, timing_text(secs));
  return a;
}

double final_divergence(const ExperimentConfig& c, std::uint64_t seed) {
  ExperimentConfig cs = c;
  cs.set_seed(seed);
  if (cs.lab == LabKind::gaussian) {
    GaussianRunConfig g = cs.gaussian;
    g.vis_samples = 0;
    return run_gaussian_experiment(g).final_kl;
  }
  NeuralRunConfig n = cs.neural;
  n.vis_samples = 0;
  return run_neural_experiment(n).final_divergence;
}

json to_json(const EnsembleSummary& s) {
  json values = json::array();
  for (double v : s.values) values.push_back(finite_or_null(v));
  return json{{"label", s.label},       {"seeds", s.seeds},          {"final_kl", values},
              {"errors", s.errors},     {"median", finite_or_null(s.median)}, {"q1", finite_or_null(s.q1)},
              {"q3", finite_or_null(s.q3)}, {"iqr", finite_or_null(s.iqr())}, {"failures", s.failures()}};
}

EnsembleOutcome run_ensemble_request(const EnsembleRequest& req, const fs::path& dir) {
  if (req.seeds < 1) throw std::invalid_argument("ensemble needs at least one seed");
  if (req.jobs < 1) throw std::invalid_argument("jobs must be at least 1");
  const auto seeds = split_seeds(req.config.seed(), req.seeds);

  auto runner_for = [&](const ExperimentConfig& base, const fs::path& arm_dir) -> SeedRunner {
    return [base, arm_dir, per_seed = req.per_seed_artifacts](std::uint64_t seed) {
      if (!per_seed) return final_divergence(base, seed);
      ExperimentConfig c = base;
      c.set_seed(seed);
      return run_experiment(c, arm_dir / ("seed-" + std::to_string(seed))).final_divergence;
    };
  };

  EnsembleOutcome out;
  json doc{{"schema", "ensemble-summary/1"}, {"seed_rule", "seed_i = base + i"}, {"base_seed", req.config.seed()}};
  const std::string label_a = req.config.method_name();
  if (req.compare.empty()) {
    out.a = run_ensemble(label_a, runner_for(req.config, dir / "arm-a"), seeds, req.jobs);
    doc["a"] = to_json(out.a);
  } else {
    json jb = to_json(req.config);
    apply_overrides(jb, req.compare);
    const ExperimentConfig cb = parse_config(jb);
    std::string label_b = cb.method_name() + "[";
    for (std::size_t i = 0; i < req.compare.size(); ++i) label_b += (i ? "," : "") + req.compare[i];
    label_b += "]";
    if (seeds.size() < 2) {
      out.a = run_ensemble(label_a, runner_for(req.config, dir / "arm-a"), seeds, req.jobs);
      out.b = run_ensemble(label_b, runner_for(cb, dir / "arm-b"), seeds, req.jobs);
    } else {
      out.comparison = ensemble_compare(label_a, runner_for(req.config, dir / "arm-a"), label_b,
                                        runner_for(cb, dir / "arm-b"), seeds, req.jobs);
      out.a = out.comparison->a;
      out.b = out.comparison->b;
      doc["median_difference"] = finite_or_null(out.comparison->median_difference);
      doc["verdict"] = to_string(out.comparison->verdict);
    }
    doc["a"] = to_json(out.a);
    doc["b"] = to_json(*out.b);
  }
  out.summary_path = dir / "ensemble.json";
  write_atomic(out.summary_path, doc.dump(2) + "\n");
  return out;
}

}  // namespace distill
