#include "distill/config.hpp"

#include <fstream>
#include <limits>
#include <set>

namespace distill {

using nlohmann::json;

std::string_view to_string(LabKind k) { return k == LabKind::gaussian ? "gaussian" : "neural"; }

namespace {

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

/// Object reader that remembers which keys were consumed.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_, "expected an object");
  }

  const std::string& path() const { return path_; }
  bool has(const std::string& key) const { return j_.contains(key); }

  const json& raw(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  Section sub(const std::string& key) { return Section(raw(key), join(path_, key)); }

  void read(const std::string& key, double& out) {
    if (!has(key)) return;
    const json& v = raw(key);
    if (!v.is_number()) throw ConfigError(join(path_, key), "expected a number");
    out = v.get<double>();
  }

  void read(const std::string& key, int& out) {
    if (!has(key)) return;
    const json& v = raw(key);
    if (!v.is_number_integer()) throw ConfigError(join(path_, key), "expected an integer");
    const auto x = v.get<std::int64_t>();
    if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max())
      throw ConfigError(join(path_, key), "integer out of range");
    out = static_cast<int>(x);
  }

  void read(const std::string& key, std::uint64_t& out) {
    if (!has(key)) return;
    const json& v = raw(key);
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0))
      throw ConfigError(join(path_, key), "expected a non-negative integer");
    out = v.get<std::uint64_t>();
  }

  void read(const std::string& key, bool& out) {
    if (!has(key)) return;
    const json& v = raw(key);
    if (!v.is_boolean()) throw ConfigError(join(path_, key), "expected true or false");
    out = v.get<bool>();
  }

  void read(const std::string& key, std::string& out) {
    if (!has(key)) return;
    const json& v = raw(key);
    if (!v.is_string()) throw ConfigError(join(path_, key), "expected a string");
    out = v.get<std::string>();
  }

  void read(const std::string& key, std::optional<double>& out) {
    if (!has(key)) return;
    const json& v = raw(key);
    if (v.is_null()) {
      out.reset();
      return;
    }
    if (!v.is_number()) throw ConfigError(join(path_, key), "expected a number or null");
    out = v.get<double>();
  }

  /// Reads a string and converts it with `parse`, reporting failures at this key.
  template <typename Enum, typename Parse>
  void read_enum(const std::string& key, Enum& out, Parse parse) {
    if (!has(key)) return;
    std::string name;
    read(key, name);
    try {
      out = parse(name);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(join(path_, key), e.what());
    }
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError(join(path_, it.key()), "unknown key");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

Point read_point(const json& v, const std::string& path) {
  if (!v.is_array() || v.empty()) throw ConfigError(path, "expected a non-empty array of numbers");
  Point p(static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!v[i].is_number()) throw ConfigError(path + "[" + std::to_string(i) + "]", "expected a number");
    p[static_cast<Eigen::Index>(i)] = v[i].get<double>();
  }
  return p;
}

Eigen::MatrixXd read_matrix(const json& v, const std::string& path) {
  if (!v.is_array() || v.empty()) throw ConfigError(path, "expected an array of rows");
  const auto rows = static_cast<Eigen::Index>(v.size());
  Eigen::MatrixXd m;
  for (Eigen::Index r = 0; r < rows; ++r) {
    const Point row = read_point(v[static_cast<std::size_t>(r)], path + "[" + std::to_string(r) + "]");
    if (r == 0) m.resize(rows, row.size());
    if (row.size() != m.cols()) throw ConfigError(path, "rows have different lengths");
    m.row(r) = row.transpose();
  }
  return m;
}

json point_json(const Point& p) { return json(std::vector<double>(p.data(), p.data() + p.size())); }

json matrix_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) rows.push_back(point_json(m.row(r).transpose()));
  return rows;
}

GaussianTarget read_gaussian(Section& s) {
  GaussianTarget g;
  if (!s.has("mu") || !s.has("factor")) throw ConfigError(s.path(), "gaussian target needs mu and factor");
  g.mu = read_point(s.raw("mu"), join(s.path(), "mu"));
  g.factor = read_matrix(s.raw("factor"), join(s.path(), "factor"));
  if (g.factor.rows() != g.mu.size() || g.factor.cols() != g.mu.size())
    throw ConfigError(join(s.path(), "factor"), "must be a d x d matrix matching mu");
  return g;
}

TargetSpec read_target(Section s) {
  TargetSpec spec;
  std::string kind = "random_gaussian";
  s.read("kind", kind);
  if (kind == "random_gaussian") {
    spec.kind = TargetSpec::Kind::random_gaussian;
  } else if (kind == "gaussian") {
    spec.kind = TargetSpec::Kind::gaussian;
    spec.gaussian = read_gaussian(s);
  } else if (kind == "mixture") {
    spec.kind = TargetSpec::Kind::mixture;
    if (!s.has("components")) throw ConfigError(s.path(), "mixture target needs components");
    const json& comps = s.raw("components");
    const std::string cpath = join(s.path(), "components");
    if (!comps.is_array() || comps.empty()) throw ConfigError(cpath, "expected a non-empty array");
    for (std::size_t i = 0; i < comps.size(); ++i) {
      Section c(comps[i], cpath + "[" + std::to_string(i) + "]");
      MixtureComponent mc;
      if (!c.has("weight")) throw ConfigError(c.path(), "component needs a weight");
      c.read("weight", mc.weight);
      mc.gaussian = read_gaussian(c);
      c.finish();
      spec.mixture.components.push_back(std::move(mc));
    }
    try {
      validate(spec.mixture);
    } catch (const std::exception& e) {
      throw ConfigError(cpath, e.what());
    }
  } else if (kind == "two_mode") {
    spec.kind = TargetSpec::Kind::two_mode;
    s.read("separation", spec.separation);
  } else {
    throw ConfigError(join(s.path(), "kind"),
                      "unknown target kind '" + kind + "' (expected random_gaussian, gaussian, mixture or two_mode)");
  }
  s.finish();
  return spec;
}

json target_json(const TargetSpec& t) {
  switch (t.kind) {
    case TargetSpec::Kind::random_gaussian: return json{{"kind", "random_gaussian"}};
    case TargetSpec::Kind::gaussian:
      return json{{"kind", "gaussian"}, {"mu", point_json(t.gaussian.mu)}, {"factor", matrix_json(t.gaussian.factor)}};
    case TargetSpec::Kind::mixture: {
      json comps = json::array();
      for (const auto& c : t.mixture.components)
        comps.push_back(
            {{"weight", c.weight}, {"mu", point_json(c.gaussian.mu)}, {"factor", matrix_json(c.gaussian.factor)}});
      return json{{"kind", "mixture"}, {"components", comps}};
    }
    case TargetSpec::Kind::two_mode: return json{{"kind", "two_mode"}, {"separation", t.separation}};
  }
  return json{};
}

void check_target_dim(const TargetSpec& t, int dim, const std::string& path) {
  auto bad = [&] { throw ConfigError(path, "target dimension does not match run.dim"); };
  if (t.kind == TargetSpec::Kind::gaussian && t.gaussian.dim() != dim) bad();
  if (t.kind == TargetSpec::Kind::mixture)
    for (const auto& c : t.mixture.components)
      if (c.gaussian.dim() != dim) bad();
}

void read_schedule(Section s, ScheduleConfig& sc, NoiseMode* noise_mode) {
  s.read("beta_start", sc.beta_start);
  s.read("beta_end", sc.beta_end);
  s.read("steps", sc.steps);
  s.read("t_min", sc.t_min);
  s.read("t_max", sc.t_max);
  if (noise_mode) s.read_enum("noise_mode", *noise_mode, parse_noise_mode);
  s.finish();
}

json schedule_json(const ScheduleConfig& sc) {
  return json{{"beta_start", sc.beta_start}, {"beta_end", sc.beta_end}, {"steps", sc.steps},
              {"t_min", sc.t_min},           {"t_max", sc.t_max}};
}

void read_gaussian_lab(Section& root, GaussianRunConfig& g) {
  if (root.has("method")) {
    Section m = root.sub("method");
    m.read_enum("name", g.method, parse_gaussian_method);
    m.finish();
  }
  if (root.has("run")) {
    Section r = root.sub("run");
    r.read("dim", g.dim);
    r.read("steps", g.total_steps);
    r.read("n_render", g.n_render);
    r.read("lr", g.lr);
    r.read("estimator_lr", g.estimator_lr);
    r.read("lora_steps", g.lora_steps);
    r.read("dist_0", g.dist_0);
    r.read("warmup_steps", g.warmup_steps);
    r.read("decay_steps", g.decay_steps);
    r.read("min_lr_factor", g.min_lr_factor);
    r.read("weight_decay", g.weight_decay);
    r.read("logging_interval", g.logging_interval);
    r.read("vis_samples", g.vis_samples);
    r.read("kl_mc_samples", g.kl_mc_samples);
    r.finish();
  }
  if (root.has("schedule")) read_schedule(root.sub("schedule"), g.schedule, &g.noise_mode);
  if (root.has("target")) g.target = read_target(root.sub("target"));
  check_target_dim(g.target, g.dim, "target");
}

void read_neural_lab(Section& root, NeuralRunConfig& n) {
  if (root.has("method")) {
    Section m = root.sub("method");
    DistillMethod& dm = n.method;
    m.read_enum("name", dm.tag, parse_neural_method);
    m.read("gamma", dm.gamma);
    m.read("eta", dm.eta);
    m.read("last_layer_only", dm.last_layer_only);
    m.read("esd_lambda", dm.esd_lambda);
    m.read("cfg_scale", dm.cfg_scale);
    m.read_enum("delta_mode", n.delta_mode, parse_delta_mode);
    m.finish();
  }
  if (root.has("run")) {
    Section r = root.sub("run");
    r.read("dim", n.dim);
    r.read("steps", n.total_steps);
    r.read_enum("theta", n.theta, parse_theta_kind);
    r.read("particles", n.particles);
    r.read("dist_0", n.dist_0);
    r.read("init_spread", n.init_spread);
    r.read("theta_lr", n.theta_lr);
    r.read_enum("theta_optimizer", n.theta_optimizer, parse_optimizer_kind);
    r.read("lora_lr", n.lora_lr);
    r.read_enum("lora_optimizer", n.lora_optimizer, parse_optimizer_kind);
    r.read("lora_uncond_prob", n.lora_uncond_prob);
    r.read("logging_interval", n.logging_interval);
    r.read("kl_mc_samples", n.kl_mc_samples);
    r.read("vis_samples", n.vis_samples);
    r.finish();
  }
  if (root.has("network")) {
    Section w = root.sub("network");
    if (w.has("hidden")) {
      const json& h = w.raw("hidden");
      const std::string path = join(w.path(), "hidden");
      if (!h.is_array()) throw ConfigError(path, "expected an array of layer widths");
      n.hidden.clear();
      for (std::size_t i = 0; i < h.size(); ++i) {
        if (!h[i].is_number_integer()) throw ConfigError(path + "[" + std::to_string(i) + "]", "expected an integer");
        n.hidden.push_back(h[i].get<int>());
      }
    }
    w.read("condition_width", n.condition_width);
    w.finish();
  }
  if (root.has("schedule")) read_schedule(root.sub("schedule"), n.schedule, nullptr);
  if (root.has("target")) n.target = read_target(root.sub("target"));
  if (root.has("uncond_target")) n.uncond_target = read_target(root.sub("uncond_target"));
  check_target_dim(n.target, n.dim, "target");
  if (n.uncond_target) check_target_dim(*n.uncond_target, n.dim, "uncond_target");
}

}  // namespace

void ExperimentConfig::set_seed(std::uint64_t seed) {
  gaussian.seed = seed;
  neural.seed = seed;
}

std::string ExperimentConfig::method_name() const {
  return std::string(lab == LabKind::gaussian ? to_string(gaussian.method) : to_string(neural.method.tag));
}

void ExperimentConfig::validate() const {
  try {
    if (lab == LabKind::gaussian) {
      gaussian.validate();
    } else {
      neural.validate();
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError("", e.what());
  }
}

ExperimentConfig parse_config(const json& j) {
  Section root(j, "");
  ExperimentConfig c;
  std::string lab = "gaussian";
  root.read("lab", lab);
  if (lab == "gaussian") {
    c.lab = LabKind::gaussian;
  } else if (lab == "neural") {
    c.lab = LabKind::neural;
  } else {
    throw ConfigError("lab", "unknown lab '" + lab + "' (expected gaussian or neural)");
  }
  std::uint64_t seed = 0;
  root.read("seed", seed);
  c.set_seed(seed);
  root.read("output_dir", c.output_dir);
  if (c.lab == LabKind::gaussian) {
    read_gaussian_lab(root, c.gaussian);
    c.gaussian = c.gaussian.resolved();
  } else {
    read_neural_lab(root, c.neural);
  }
  root.finish();
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("", "cannot read config file '" + path.string() + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("", "malformed config '" + path.string() + "': " + e.what());
  }
  return parse_config(j);
}

json to_json(const ExperimentConfig& c) {
  json j{{"lab", to_string(c.lab)}, {"seed", c.seed()}, {"output_dir", c.output_dir}};
  if (c.lab == LabKind::gaussian) {
    const GaussianRunConfig& g = c.gaussian;
    j["method"] = {{"name", to_string(g.method)}};
    j["run"] = {{"dim", g.dim},
                {"steps", g.total_steps},
                {"n_render", g.n_render},
                {"lr", g.lr},
                {"estimator_lr", g.estimator_lr},
                {"lora_steps", g.lora_steps},
                {"dist_0", g.dist_0},
                {"warmup_steps", g.warmup_steps},
                {"decay_steps", g.decay_steps},
                {"min_lr_factor", g.min_lr_factor},
                {"weight_decay", g.weight_decay},
                {"logging_interval", g.logging_interval},
                {"vis_samples", g.vis_samples},
                {"kl_mc_samples", g.kl_mc_samples}};
    j["schedule"] = schedule_json(g.schedule);
    j["schedule"]["noise_mode"] = to_string(g.noise_mode);
    j["target"] = target_json(g.target);
  } else {
    const NeuralRunConfig& n = c.neural;
    const DistillMethod& m = n.method;
    j["method"] = {{"name", to_string(m.tag)},
                   {"gamma", m.gamma},
                   {"eta", m.eta},
                   {"last_layer_only", m.last_layer_only},
                   {"esd_lambda", m.esd_lambda ? json(*m.esd_lambda) : json(nullptr)},
                   {"cfg_scale", m.cfg_scale ? json(*m.cfg_scale) : json(nullptr)},
                   {"delta_mode", to_string(n.delta_mode)}};
    j["run"] = {{"dim", n.dim},
                {"steps", n.total_steps},
                {"theta", to_string(n.theta)},
                {"particles", n.particles},
                {"dist_0", n.dist_0},
                {"init_spread", n.init_spread},
                {"theta_lr", n.theta_lr},
                {"theta_optimizer", to_string(n.theta_optimizer)},
                {"lora_lr", n.lora_lr},
                {"lora_optimizer", to_string(n.lora_optimizer)},
                {"lora_uncond_prob", n.lora_uncond_prob},
                {"logging_interval", n.logging_interval},
                {"kl_mc_samples", n.kl_mc_samples},
                {"vis_samples", n.vis_samples}};
    j["network"] = {{"hidden", n.hidden}, {"condition_width", n.condition_width}};
    j["schedule"] = schedule_json(n.schedule);
    j["target"] = target_json(n.target);
    if (n.uncond_target) j["uncond_target"] = target_json(*n.uncond_target);
  }
  return j;
}

void apply_override(json& j, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0)
    throw ConfigError("", "override '" + std::string(assignment) + "' must look like key.path=value");
  const std::string path(assignment.substr(0, eq));
  const std::string text(assignment.substr(eq + 1));
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;

  json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw ConfigError(path, "empty component in override key");
    if (!node->is_object()) throw ConfigError(path.substr(0, start ? start - 1 : 0), "cannot override inside a non-object");
    if (dot == std::string::npos) {
      (*node)[key] = std::move(value);
      return;
    }
    node = &(*node)[key];
    if (node->is_null()) *node = json::object();
    start = dot + 1;
  }
}

void apply_overrides(json& j, const std::vector<std::string>& assignments) {
  for (const auto& a : assignments) apply_override(j, a);
}

}  // namespace distill
