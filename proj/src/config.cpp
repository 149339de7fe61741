// SPDX-License-Identifier: Apache-2.0

#include "prl/config.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <type_traits>

#include <fmt/format.h>

namespace prl {

using json = nlohmann::ordered_json;

namespace {

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

// Reads one JSON object, remembering which keys were consumed so leftovers
// can be reported as unknown.
class Obj {
 public:
  Obj(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(fmt::format("{}: expected an object", path_.empty() ? "<root>" : path_));
  }

  const json* find(const std::string& key) {
    seen_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  std::string at(const std::string& key) const { return join(path_, key); }

  void ignore(const std::string& key) { seen_.insert(key); }

  void finish() const {
    for (const auto& [key, _] : j_.items())
      if (!seen_.count(key)) throw ConfigError(fmt::format("{}: unknown key", join(path_, key)));
  }

  void get(const std::string& key, double& out) {
    if (const json* v = find(key)) out = number(*v, at(key));
  }
  void get(const std::string& key, int& out) {
    if (const json* v = find(key)) out = static_cast<int>(integer(*v, at(key)));
  }
  template <class U>
    requires(std::is_unsigned_v<U> && !std::is_same_v<U, bool>)
  void get(const std::string& key, U& out) {
    if (const json* v = find(key)) out = static_cast<U>(unsigned_integer(*v, at(key)));
  }
  void get(const std::string& key, bool& out) {
    if (const json* v = find(key)) {
      if (!v->is_boolean()) throw ConfigError(fmt::format("{}: expected true or false", at(key)));
      out = v->get<bool>();
    }
  }
  void get(const std::string& key, std::string& out) {
    if (const json* v = find(key)) out = string(*v, at(key));
  }
  void get(const std::string& key, std::optional<double>& out) {
    if (const json* v = find(key)) out = v->is_null() ? std::nullopt : std::optional<double>(number(*v, at(key)));
  }
  void get(const std::string& key, std::optional<std::size_t>& out) {
    if (const json* v = find(key))
      out = v->is_null() ? std::nullopt : std::optional<std::size_t>(unsigned_integer(*v, at(key)));
  }
  void get(const std::string& key, std::vector<double>& out) {
    if (const json* v = find(key)) {
      out.clear();
      for (std::size_t i = 0; i < array(*v, at(key)).size(); ++i)
        out.push_back(number((*v)[i], fmt::format("{}[{}]", at(key), i)));
    }
  }
  void get(const std::string& key, std::vector<std::size_t>& out) {
    if (const json* v = find(key)) {
      out.clear();
      for (std::size_t i = 0; i < array(*v, at(key)).size(); ++i)
        out.push_back(static_cast<std::size_t>(unsigned_integer((*v)[i], fmt::format("{}[{}]", at(key), i))));
    }
  }

  static double number(const json& v, const std::string& where) {
    if (!v.is_number()) throw ConfigError(fmt::format("{}: expected a number", where));
    return v.get<double>();
  }
  static std::int64_t integer(const json& v, const std::string& where) {
    if (!v.is_number_integer()) throw ConfigError(fmt::format("{}: expected an integer", where));
    return v.get<std::int64_t>();
  }
  static std::uint64_t unsigned_integer(const json& v, const std::string& where) {
    if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0))
      throw ConfigError(fmt::format("{}: expected a non-negative integer", where));
    return v.get<std::uint64_t>();
  }
  static std::string string(const json& v, const std::string& where) {
    if (!v.is_string()) throw ConfigError(fmt::format("{}: expected a string", where));
    return v.get<std::string>();
  }
  static const json& array(const json& v, const std::string& where) {
    if (!v.is_array()) throw ConfigError(fmt::format("{}: expected an array", where));
    return v;
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

// Runs a validate() and rewraps its message as a config error at `path`.
template <class F>
void checked(const std::string& path, F&& fn) {
  try {
    fn();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(fmt::format("{}: {}", path, e.what()));
  }
}

// ---------------------------------------------------------------------------
// Parsing

EncoderConfig parse_encoder(const json& j, const std::string& path) {
  EncoderConfig c;
  Obj o(j, path);
  o.get("input_dim", c.input_dim);
  o.get("hidden_dims", c.hidden_dims);
  o.get("bottleneck_dim", c.bottleneck_dim);
  o.get("init_seed", c.init_seed);
  o.finish();
  checked(path, [&] { c.validate(); });
  return c;
}

ShiftSpec parse_shift(const json& j, const std::string& path) {
  ShiftSpec s;
  Obj o(j, path);
  o.get("rotation_deg", s.rotation_deg);
  o.get("translation", s.translation);
  o.get("scale", s.scale);
  o.get("noise_sigma", s.noise_sigma);
  o.get("seed", s.seed);
  o.finish();
  if (!(s.scale > 0.0)) throw ConfigError(fmt::format("{}: must be positive", o.at("scale")));
  if (s.noise_sigma < 0.0) throw ConfigError(fmt::format("{}: must be non-negative", o.at("noise_sigma")));
  return s;
}

DatasetSpec parse_dataset(const json& j, const std::string& path) {
  Obj o(j, path);
  std::string kind = "two_moons";
  o.get("kind", kind);
  if (kind == "two_moons") {
    TwoMoonsSpec s;
    o.get("n", s.n);
    o.get("noise_sigma", s.noise_sigma);
    if (const json* v = o.find("shift")) s.shift = parse_shift(*v, o.at("shift"));
    o.finish();
    if (s.n < 2 || s.n % 2) throw ConfigError(fmt::format("{}: must be even and at least 2", o.at("n")));
    return s;
  }
  if (kind == "blobs") {
    BlobsSpec s;
    o.get("n", s.n);
    o.get("num_classes", s.num_classes);
    o.get("dim", s.dim);
    o.get("centers_seed", s.centers_seed);
    if (const json* v = o.find("shift")) s.shift = parse_shift(*v, o.at("shift"));
    o.finish();
    return s;
  }
  if (kind == "csv") {
    CsvSpec s;
    std::string p;
    o.get("path", p);
    if (p.empty()) throw ConfigError(fmt::format("{}: required for csv datasets", o.at("path")));
    s.path = p;
    o.get("has_labels", s.options.has_labels);
    o.get("header", s.options.header);
    o.finish();
    return s;
  }
  throw ConfigError(fmt::format("{}: unknown dataset kind '{}' (two_moons, blobs, csv)", o.at("kind"), kind));
}

PretrainConfig parse_pretrain(const json& j, const std::string& path) {
  PretrainConfig c;
  Obj o(j, path);
  o.get("epochs", c.epochs);
  o.get("lr", c.lr);
  o.get("weight_decay", c.weight_decay);
  o.get("batch_size", c.batch_size);
  o.get("seed", c.seed);
  o.get("holdout_fraction", c.holdout_fraction);
  o.finish();
  checked(path, [&] { c.validate(); });
  return c;
}

ScheduleKind parse_schedule(const json& j, const std::string& path) {
  if (j.is_string()) {
    json wrapped = {{"kind", j}};
    return parse_schedule(wrapped, path);
  }
  Obj o(j, path);
  std::string kind;
  o.get("kind", kind);
  ScheduleKind out;
  if (kind == "naive") {
    out = schedule::Naive{};
  } else if (kind == "simultaneous") {
    out = schedule::Simultaneous{};
  } else if (kind == "warmup") {
    schedule::Warmup w;
    o.get("patience", w.patience);
    o.get("min_rel_improve", w.min_rel_improve);
    o.get("eps_small", w.eps_small);
    o.get("eps_small_fraction", w.eps_small_fraction);
    out = w;
  } else if (kind == "inturn") {
    const json* k = o.find("k");
    if (!k) throw ConfigError(fmt::format("{}: required when kind is inturn", o.at("k")));
    schedule::InTurn t;
    t.k = static_cast<int>(Obj::integer(*k, o.at("k")));
    out = t;
  } else if (kind.empty()) {
    throw ConfigError(fmt::format("{}: required (naive, simultaneous, warmup, inturn)", o.at("kind")));
  } else {
    throw ConfigError(fmt::format("{}: unknown schedule '{}' (naive, simultaneous, warmup, inturn)", o.at("kind"), kind));
  }
  o.finish();
  checked(path, [&] { validate(out); });
  return out;
}

ArchitectureKind parse_arch(const json& j, const std::string& path) {
  const std::string text = Obj::string(j, path);
  try {
    return parse_architecture(text);
  } catch (const Error& e) {
    throw ConfigError(fmt::format("{}: {}", path, e.what()));
  }
}

// Reads weights, defaulting lambda to 0 for the double encoder.
LossWeights parse_weights(const json* j, const std::string& path, ArchitectureKind arch) {
  LossWeights w;
  if (arch == ArchitectureKind::double_encoder) w.reference_weight = 0.0;
  if (j) {
    Obj o(*j, path);
    o.get("reference_weight", w.reference_weight);
    std::string norm = w.norm == NormKind::l1 ? "l1" : "l2";
    o.get("norm_kind", norm);
    if (norm == "l1") {
      w.norm = NormKind::l1;
    } else if (norm == "l2") {
      w.norm = NormKind::l2;
    } else {
      throw ConfigError(fmt::format("{}: expected l1 or l2, got '{}'", o.at("norm_kind"), norm));
    }
    o.finish();
  }
  checked(path, [&] { w.validate(); });
  if (arch == ArchitectureKind::double_encoder && w.reference_weight != 0.0)
    throw ConfigError(fmt::format("{}.reference_weight: must be 0 for double_encoder", path));
  return w;
}

MMDConfig parse_mmd(const json& j, const std::string& path) {
  MMDConfig m;
  Obj o(j, path);
  std::string kernel = m.kernel == KernelKind::gaussian ? "gaussian" : "linear";
  o.get("kernel", kernel);
  if (kernel == "gaussian") {
    m.kernel = KernelKind::gaussian;
  } else if (kernel == "linear") {
    m.kernel = KernelKind::linear;
  } else {
    throw ConfigError(fmt::format("{}: expected gaussian or linear, got '{}'", o.at("kernel"), kernel));
  }
  o.get("width", m.width);
  o.finish();
  checked(path, [&] { m.validate(); });
  return m;
}

AdaptConfig parse_adapt(const json& j, const std::string& path) {
  AdaptConfig c;
  Obj o(j, path);
  if (const json* v = o.find("architecture")) c.architecture = parse_arch(*v, o.at("architecture"));
  if (const json* v = o.find("schedule")) c.schedule = parse_schedule(*v, o.at("schedule"));
  c.weights = parse_weights(o.find("weights"), o.at("weights"), c.architecture);
  if (const json* v = o.find("mmd")) c.mmd = parse_mmd(*v, o.at("mmd"));
  o.get("epochs", c.epochs);
  o.get("lr", c.lr);
  o.get("weight_decay", c.weight_decay);
  o.get("batch_size", c.batch_size);
  o.get("seed", c.seed);
  std::string step = to_string(c.reference_step);
  o.get("reference_step", step);
  checked(o.at("reference_step"), [&] { c.reference_step = parse_reference_step(step); });
  o.finish();
  checked(path, [&] { c.validate(); });
  return c;
}

EvalConfig parse_eval(const json& j, const std::string& path) {
  EvalConfig e;
  Obj o(j, path);
  o.get("window", e.window);
  o.get("mmd_threshold", e.mmd_threshold);
  o.finish();
  if (e.window < 1) throw ConfigError(fmt::format("{}: must be at least 1", o.at("window")));
  if (e.mmd_threshold && !(*e.mmd_threshold >= 0.0))
    throw ConfigError(fmt::format("{}: must be non-negative", o.at("mmd_threshold")));
  return e;
}

WidthSelectionConfig parse_width_selection(const json& j, const std::string& path) {
  WidthSelectionConfig w;
  Obj o(j, path);
  o.get("candidates", w.candidates);
  o.get("epochs", w.epochs);
  o.finish();
  if (w.candidates.empty()) throw ConfigError(fmt::format("{}: must not be empty", o.at("candidates")));
  for (double c : w.candidates)
    if (!(c > 0.0)) throw ConfigError(fmt::format("{}: widths must be positive", o.at("candidates")));
  if (w.epochs < 1) throw ConfigError(fmt::format("{}: must be at least 1", o.at("epochs")));
  return w;
}

MethodSpec parse_method(const json& j, const std::string& path) {
  MethodSpec m;
  Obj o(j, path);
  o.get("name", m.name);
  if (m.name.empty()) throw ConfigError(fmt::format("{}: required", o.at("name")));
  if (const json* v = o.find("architecture")) m.architecture = parse_arch(*v, o.at("architecture"));
  if (const json* v = o.find("schedule")) m.schedule = parse_schedule(*v, o.at("schedule"));
  m.weights = parse_weights(o.find("weights"), o.at("weights"), m.architecture);
  o.finish();
  return m;
}

TaskSpec parse_task(const json& j, const std::string& path) {
  TaskSpec t;
  Obj o(j, path);
  o.get("name", t.name);
  if (t.name.empty()) throw ConfigError(fmt::format("{}: required", o.at("name")));
  if (const json* v = o.find("source")) t.source = parse_dataset(*v, o.at("source"));
  if (const json* v = o.find("target")) t.target = parse_dataset(*v, o.at("target"));
  o.finish();
  return t;
}

// ---------------------------------------------------------------------------
// Serialization

json shift_json(const ShiftSpec& s) {
  return {{"rotation_deg", s.rotation_deg},
          {"translation", s.translation},
          {"scale", s.scale},
          {"noise_sigma", s.noise_sigma},
          {"seed", s.seed}};
}

json dataset_json(const DatasetSpec& spec) {
  return std::visit(
      [](const auto& s) -> json {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, TwoMoonsSpec>) {
          return {{"kind", "two_moons"}, {"n", s.n}, {"noise_sigma", s.noise_sigma}, {"shift", shift_json(s.shift)}};
        } else if constexpr (std::is_same_v<T, BlobsSpec>) {
          return {{"kind", "blobs"},     {"n", s.n},
                  {"num_classes", s.num_classes}, {"dim", s.dim},
                  {"centers_seed", s.centers_seed}, {"shift", shift_json(s.shift)}};
        } else {
          return {{"kind", "csv"},
                  {"path", s.path.generic_string()},
                  {"has_labels", s.options.has_labels},
                  {"header", s.options.header}};
        }
      },
      spec);
}

json encoder_json(const EncoderConfig& c) {
  return {{"input_dim", c.input_dim},
          {"hidden_dims", c.hidden_dims},
          {"bottleneck_dim", c.bottleneck_dim ? json(*c.bottleneck_dim) : json(nullptr)},
          {"init_seed", c.init_seed}};
}

json pretrain_json(const PretrainConfig& c) {
  return {{"epochs", c.epochs},         {"lr", c.lr},     {"weight_decay", c.weight_decay},
          {"batch_size", c.batch_size}, {"seed", c.seed}, {"holdout_fraction", c.holdout_fraction}};
}

json schedule_json(const ScheduleKind& kind) {
  return std::visit(
      [](const auto& s) -> json {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, schedule::Naive>) {
          return {{"kind", "naive"}};
        } else if constexpr (std::is_same_v<T, schedule::Simultaneous>) {
          return {{"kind", "simultaneous"}};
        } else if constexpr (std::is_same_v<T, schedule::Warmup>) {
          return {{"kind", "warmup"},
                  {"patience", s.patience},
                  {"min_rel_improve", s.min_rel_improve},
                  {"eps_small", s.eps_small ? json(*s.eps_small) : json(nullptr)},
                  {"eps_small_fraction", s.eps_small_fraction}};
        } else {
          return {{"kind", "inturn"}, {"k", s.k}};
        }
      },
      kind);
}

json weights_json(const LossWeights& w) {
  return {{"reference_weight", w.reference_weight}, {"norm_kind", w.norm == NormKind::l1 ? "l1" : "l2"}};
}

json mmd_json(const MMDConfig& m) {
  return {{"kernel", m.kernel == KernelKind::gaussian ? "gaussian" : "linear"}, {"width", m.width}};
}

json adapt_json(const AdaptConfig& c) {
  return {{"architecture", to_string(c.architecture)},
          {"schedule", schedule_json(c.schedule)},
          {"weights", weights_json(c.weights)},
          {"mmd", mmd_json(c.mmd)},
          {"epochs", c.epochs},
          {"lr", c.lr},
          {"weight_decay", c.weight_decay},
          {"batch_size", c.batch_size},
          {"seed", c.seed},
          {"reference_step", to_string(c.reference_step)}};
}

json eval_json(const EvalConfig& e) {
  return {{"window", e.window}, {"mmd_threshold", e.mmd_threshold ? json(*e.mmd_threshold) : json(nullptr)}};
}

}  // namespace

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError(fmt::format("override '{}': expected key.path=value", assignment));
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);

  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;

  json* node = &doc;
  std::string walked;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw ConfigError(fmt::format("override '{}': empty key segment", assignment));
    if (!node->is_object()) {
      if (!node->is_null()) throw ConfigError(fmt::format("override '{}': {} is not an object", assignment, walked));
      *node = json::object();
    }
    walked = join(walked, key);
    if (dot == std::string::npos) {
      (*node)[key] = std::move(value);
      return;
    }
    node = &(*node)[key];
    start = dot + 1;
  }
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot open config '{}'", path.string()));
  std::stringstream buf;
  buf << in.rdbuf();
  try {
    return json::parse(buf.str());
  } catch (const json::parse_error& e) {
    throw ConfigError(fmt::format("{}: invalid JSON: {}", path.string(), e.what()));
  }
}

RunConfig parse_run_config(const json& doc) {
  RunConfig c;
  Obj o(doc, "");
  o.ignore("manifest");
  o.get("out_dir", c.out_dir);
  o.get("seed", c.seed);
  if (const json* v = o.find("encoder")) c.encoder = parse_encoder(*v, "encoder");
  if (const json* v = o.find("source")) c.source = parse_dataset(*v, "source");
  if (const json* v = o.find("target")) c.target = parse_dataset(*v, "target");
  if (const json* v = o.find("pretrain")) c.pretrain = parse_pretrain(*v, "pretrain");
  if (const json* v = o.find("adapt")) c.adapt = parse_adapt(*v, "adapt");
  if (const json* v = o.find("eval")) c.eval = parse_eval(*v, "eval");
  if (const json* v = o.find("width_selection")) c.width_selection = parse_width_selection(*v, "width_selection");
  o.finish();
  if (c.out_dir.empty()) throw ConfigError("out_dir: must not be empty");
  return c;
}

GridConfig parse_grid_config(const json& doc) {
  GridConfig c;
  GridSpec& g = c.grid;
  Obj o(doc, "");
  o.ignore("manifest");
  o.get("out_dir", c.out_dir);
  if (const json* v = o.find("encoder")) g.encoder = parse_encoder(*v, "encoder");
  if (const json* v = o.find("pretrain")) g.pretrain = parse_pretrain(*v, "pretrain");
  if (const json* v = o.find("adapt")) g.adapt = parse_adapt(*v, "adapt");
  if (const json* v = o.find("eval")) {
    const EvalConfig e = parse_eval(*v, "eval");
    g.stability_window = e.window;
    g.mmd_threshold = e.mmd_threshold;
  }
  if (const json* v = o.find("seeds")) {
    for (std::size_t i = 0; i < Obj::array(*v, "seeds").size(); ++i)
      g.seeds.push_back(Obj::unsigned_integer((*v)[i], fmt::format("seeds[{}]", i)));
  } else {
    g.seeds = {0};
  }
  const json* tasks = o.find("tasks");
  if (!tasks) throw ConfigError("tasks: required for a grid");
  for (std::size_t i = 0; i < Obj::array(*tasks, "tasks").size(); ++i)
    g.tasks.push_back(parse_task((*tasks)[i], fmt::format("tasks[{}]", i)));
  const json* methods = o.find("methods");
  if (!methods) throw ConfigError("methods: required for a grid");
  for (std::size_t i = 0; i < Obj::array(*methods, "methods").size(); ++i)
    g.methods.push_back(parse_method((*methods)[i], fmt::format("methods[{}]", i)));
  o.finish();

  if (g.tasks.empty()) throw ConfigError("tasks: must not be empty");
  if (g.methods.empty()) throw ConfigError("methods: must not be empty");
  if (g.seeds.empty()) throw ConfigError("seeds: must not be empty");
  std::set<std::string> names;
  for (std::size_t i = 0; i < g.tasks.size(); ++i)
    if (!names.insert(g.tasks[i].name).second)
      throw ConfigError(fmt::format("tasks[{}].name: duplicate '{}'", i, g.tasks[i].name));
  names.clear();
  for (std::size_t i = 0; i < g.methods.size(); ++i)
    if (!names.insert(g.methods[i].name).second)
      throw ConfigError(fmt::format("methods[{}].name: duplicate '{}'", i, g.methods[i].name));
  if (c.out_dir.empty()) throw ConfigError("out_dir: must not be empty");
  return c;
}

json to_json(const RunConfig& c) {
  return {{"out_dir", c.out_dir},
          {"seed", c.seed},
          {"encoder", encoder_json(c.encoder)},
          {"source", dataset_json(c.source)},
          {"target", dataset_json(c.target)},
          {"pretrain", pretrain_json(c.pretrain)},
          {"adapt", adapt_json(c.adapt)},
          {"eval", eval_json(c.eval)},
          {"width_selection", {{"candidates", c.width_selection.candidates}, {"epochs", c.width_selection.epochs}}}};
}

json to_json(const GridConfig& c) {
  const GridSpec& g = c.grid;
  json tasks = json::array();
  for (const auto& t : g.tasks)
    tasks.push_back({{"name", t.name}, {"source", dataset_json(t.source)}, {"target", dataset_json(t.target)}});
  json methods = json::array();
  for (const auto& m : g.methods)
    methods.push_back({{"name", m.name},
                       {"architecture", to_string(m.architecture)},
                       {"schedule", schedule_json(m.schedule)},
                       {"weights", weights_json(m.weights)}});
  return {{"out_dir", c.out_dir},
          {"seeds", g.seeds},
          {"encoder", encoder_json(g.encoder)},
          {"pretrain", pretrain_json(g.pretrain)},
          {"adapt", adapt_json(g.adapt)},
          {"eval", eval_json(EvalConfig{g.stability_window, g.mmd_threshold})},
          {"tasks", tasks},
          {"methods", methods}};
}

GridSpec single_cell_grid(const RunConfig& c) {
  GridSpec g;
  g.tasks.push_back({"run", c.source, c.target});
  g.methods.push_back({to_string(c.adapt.architecture), c.adapt.architecture, c.adapt.schedule, c.adapt.weights});
  g.seeds = {c.seed};
  g.encoder = c.encoder;
  g.pretrain = c.pretrain;
  g.adapt = c.adapt;
  g.stability_window = c.eval.window;
  g.mmd_threshold = c.eval.mmd_threshold;
  return g;
}

}  // namespace prl
