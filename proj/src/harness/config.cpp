#include "spatialrl/harness/config.hpp"

#include <yaml-cpp/yaml.h>

#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <numbers>
#include <set>
#include <sstream>

namespace spatialrl::harness {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

// Raised by field readers; the caller prefixes location and field path.
struct FieldError {
  std::string message;
};

struct Field {
  std::string key;  // "section.name" or a top-level name
  std::function<void(const YAML::Node&)> read;
  std::function<void(YAML::Emitter&)> write;
};

const YAML::Node& scalar(const YAML::Node& n) {
  if (!n.IsScalar()) throw FieldError{"expected a scalar value"};
  return n;
}

double read_double(const YAML::Node& n) {
  const auto& s = scalar(n);
  try {
    return s.as<double>();
  } catch (const YAML::Exception&) {
    throw FieldError{"expected a number, got '" + s.Scalar() + "'"};
  }
}

long long read_integer(const YAML::Node& n, long long lo, long long hi) {
  const auto& s = scalar(n);
  long long v = 0;
  try {
    v = s.as<long long>();
  } catch (const YAML::Exception&) {
    throw FieldError{"expected an integer, got '" + s.Scalar() + "'"};
  }
  if (v < lo || v > hi) {
    throw FieldError{"integer " + std::to_string(v) + " outside [" + std::to_string(lo) + ", " + std::to_string(hi) + "]"};
  }
  return v;
}

bool read_bool(const YAML::Node& n) {
  const auto& s = scalar(n);
  try {
    return s.as<bool>();
  } catch (const YAML::Exception&) {
    throw FieldError{"expected true or false, got '" + s.Scalar() + "'"};
  }
}

env::Vec2 read_vec2(const YAML::Node& n) {
  if (!n.IsSequence() || n.size() != 2) throw FieldError{"expected a two-element list [x, y]"};
  return {read_double(n[0]), read_double(n[1])};
}

void emit_vec2(YAML::Emitter& e, env::Vec2 v) { e << YAML::Flow << YAML::BeginSeq << v.x << v.y << YAML::EndSeq; }

Field number(std::string key, double& ref) {
  return {std::move(key), [&ref](const YAML::Node& n) { ref = read_double(n); }, [&ref](YAML::Emitter& e) { e << ref; }};
}

Field degrees(std::string key, double& radians) {
  return {std::move(key), [&radians](const YAML::Node& n) { radians = read_double(n) * kDeg; },
          [&radians](YAML::Emitter& e) { e << radians / kDeg; }};
}

Field integer(std::string key, int& ref) {
  return {std::move(key),
          [&ref](const YAML::Node& n) {
            ref = static_cast<int>(read_integer(n, std::numeric_limits<int>::min(), std::numeric_limits<int>::max()));
          },
          [&ref](YAML::Emitter& e) { e << ref; }};
}

Field count(std::string key, std::size_t& ref) {
  return {std::move(key),
          [&ref](const YAML::Node& n) {
            ref = static_cast<std::size_t>(read_integer(n, 0, std::numeric_limits<int>::max()));
          },
          [&ref](YAML::Emitter& e) { e << ref; }};
}

Field boolean(std::string key, bool& ref) {
  return {std::move(key), [&ref](const YAML::Node& n) { ref = read_bool(n); },
          [&ref](YAML::Emitter& e) { e << ref; }};
}

Field regime(std::string key, noise::Regime& ref) {
  return {std::move(key),
          [&ref](const YAML::Node& n) {
            const auto& s = scalar(n).Scalar();
            const auto r = noise::parse_regime(s);
            if (!r) throw FieldError{"expected one of sde, flow, scan, got '" + s + "'"};
            ref = *r;
          },
          [&ref](YAML::Emitter& e) { e << std::string(noise::regime_name(ref)); }};
}

Field reward_mode(std::string key, phases::RewardMode& ref) {
  return {std::move(key),
          [&ref](const YAML::Node& n) {
            const auto& s = scalar(n).Scalar();
            if (s == "dense") {
              ref = phases::RewardMode::Dense;
            } else if (s == "sparse") {
              ref = phases::RewardMode::Sparse;
            } else {
              throw FieldError{"expected dense or sparse, got '" + s + "'"};
            }
          },
          [&ref](YAML::Emitter& e) { e << (ref == phases::RewardMode::Dense ? "dense" : "sparse"); }};
}

EvalBucket read_bucket(const YAML::Node& n) {
  if (!n.IsMap()) throw FieldError{"each bucket must be a mapping"};
  EvalBucket b;
  bool named = false;
  for (const auto& kv : n) {
    const auto key = kv.first.as<std::string>();
    const auto& v = kv.second;
    if (key == "name") {
      b.name = scalar(v).Scalar();
      named = true;
    } else if (key == "rotation_deg") {
      b.pert.view_rotation = read_double(v) * kDeg;
    } else if (key == "translation") {
      b.pert.view_translation = read_vec2(v);
    } else if (key == "shift") {
      b.pert.init_shift = read_vec2(v);
    } else if (key == "clutter") {
      b.pert.clutter_count = static_cast<int>(read_integer(v, 0, 1000));
    } else {
      throw FieldError{"unknown bucket field '" + key + "' (line " + std::to_string(kv.first.Mark().line + 1) + ")"};
    }
  }
  if (!named || b.name.empty()) throw FieldError{"bucket without a name"};
  return b;
}

Field buckets(std::string key, std::vector<EvalBucket>& ref) {
  return {std::move(key),
          [&ref](const YAML::Node& n) {
            if (!n.IsSequence()) throw FieldError{"expected a list of buckets"};
            std::vector<EvalBucket> out;
            for (const auto& b : n) out.push_back(read_bucket(b));
            ref = std::move(out);
          },
          [&ref](YAML::Emitter& e) {
            e << YAML::BeginSeq;
            for (const auto& b : ref) {
              e << YAML::Flow << YAML::BeginMap;
              e << YAML::Key << "name" << YAML::Value << b.name;
              e << YAML::Key << "rotation_deg" << YAML::Value << b.pert.view_rotation / kDeg;
              e << YAML::Key << "translation" << YAML::Value;
              emit_vec2(e, b.pert.view_translation);
              e << YAML::Key << "shift" << YAML::Value;
              emit_vec2(e, b.pert.init_shift);
              e << YAML::Key << "clutter" << YAML::Value << b.pert.clutter_count;
              e << YAML::EndMap;
            }
            e << YAML::EndSeq;
          }};
}

Field seed_list(std::string key, std::vector<std::uint64_t>& ref) {
  return {std::move(key),
          [&ref](const YAML::Node& n) {
            std::vector<std::uint64_t> out;
            if (n.IsScalar()) {
              out.push_back(static_cast<std::uint64_t>(read_integer(n, 0, std::numeric_limits<long long>::max())));
            } else if (n.IsSequence()) {
              for (const auto& s : n) {
                out.push_back(static_cast<std::uint64_t>(read_integer(s, 0, std::numeric_limits<long long>::max())));
              }
            } else {
              throw FieldError{"expected a list of non-negative integers"};
            }
            ref = std::move(out);
          },
          [&ref](YAML::Emitter& e) {
            e << YAML::Flow << YAML::BeginSeq;
            for (auto s : ref) e << s;
            e << YAML::EndSeq;
          }};
}

Field path(std::string key, std::filesystem::path& ref) {
  return {std::move(key), [&ref](const YAML::Node& n) { ref = scalar(n).Scalar(); },
          [&ref](YAML::Emitter& e) { e << ref.string(); }};
}

std::vector<Field> schema(ExperimentConfig& c) {
  auto& g = c.geometry;
  auto& fd = c.agent.fusion;
  auto& pd = c.agent.policy;
  auto& ns = c.agent.noise;
  auto& rw = c.train.reward;
  auto& tr = c.train;
  auto& split = c.train.train_range;
  return {
      seed_list("seeds", c.seeds),
      path("out_dir", c.out_dir),
      number("success_threshold", c.success_threshold),

      number("env.workspace", g.workspace),
      number("env.a_max", g.a_max),
      number("env.grasp_radius", g.grasp_radius),
      number("env.dest_radius", g.dest_radius),
      number("env.leave_radius", g.leave_radius),
      count("env.max_distractors", g.max_distractors),

      boolean("fusion.enabled", c.agent.fusion_enabled),
      count("fusion.view_id", c.agent.view_id),
      count("fusion.visual_tokens", fd.visual_tokens),
      count("fusion.grid_tokens", fd.grid_tokens),
      count("fusion.global_tokens", fd.global_tokens),
      count("fusion.channels", fd.channels),
      count("fusion.views", fd.views),
      count("fusion.encoder_hidden", fd.encoder_hidden),
      count("fusion.mlp_hidden", fd.mlp_hidden),
      number("fusion.ln_eps", fd.ln_eps),

      count("policy.cond_width", pd.cond_width),
      count("policy.hidden", pd.hidden),
      integer("policy.flow_steps", pd.flow_steps),
      number("policy.sigma_init", pd.sigma_init),

      regime("noise.regime", ns.regime),
      number("noise.alpha0", ns.alpha0),
      number("noise.alpha1", ns.alpha1),
      integer("noise.horizon", ns.horizon),
      number("noise.sde_sigma0", ns.sde_sigma0),
      number("noise.sigma_cap", ns.sigma_cap),

      reward_mode("reward.mode", rw.mode),
      number("reward.lambda_dense", rw.lambda_dense),
      number("reward.reward_clip", rw.reward_clip),
      integer("reward.stability_horizon", rw.stability_horizon),
      integer("reward.place_entry_attach_steps", rw.place_entry_attach_steps),
      integer("reward.leave_entry_settle_steps", rw.leave_entry_settle_steps),

      number("train.lr_policy", tr.lr_policy),
      number("train.lr_value", tr.lr_value),
      number("train.clip_ratio", tr.clip_ratio),
      number("train.gamma", tr.gamma),
      number("train.gae_lambda", tr.gae_lambda),
      number("train.grad_clip", tr.grad_clip),
      count("train.batch_size", tr.batch_size),
      count("train.n_envs", tr.n_envs),
      integer("train.rollout_epochs", tr.rollout_epochs),
      integer("train.max_episode_len", tr.max_episode_len),
      integer("train.total_steps", tr.total_steps),
      integer("train.checkpoint_every", tr.checkpoint_every),
      integer("train.eval_every", tr.eval_every),
      integer("train.eval_episodes", tr.eval_episodes),

      integer("pretrain.episodes", tr.bc_episodes),
      integer("pretrain.demos_per_pair", tr.bc_demos_per_pair),
      integer("pretrain.epochs", tr.bc_epochs),
      count("pretrain.batch", tr.bc_batch),
      number("pretrain.lr", tr.bc_lr),
      number("pretrain.target_reach", tr.bc_target_reach),

      degrees("train_split.rotation_deg", split.rotation_max),
      number("train_split.translation", split.translation_max),
      number("train_split.shift", split.shift_max),
      integer("train_split.clutter_min", split.clutter_min),
      integer("train_split.clutter_max", split.clutter_max),

      integer("eval.episodes", c.eval.episodes),
      integer("eval.sampling_epochs", c.eval.sampling_epochs),
      buckets("eval.buckets", c.eval.buckets),
  };
}

Field* find(std::vector<Field>& fields, const std::string& key) {
  for (auto& f : fields) {
    if (f.key == key) return &f;
  }
  return nullptr;
}

bool is_section(const std::vector<Field>& fields, const std::string& name) {
  for (const auto& f : fields) {
    if (f.key.starts_with(name + ".")) return true;
  }
  return false;
}

std::string where(const std::string& source, const YAML::Mark& m) {
  if (m.is_null()) return source;
  return source + ":" + std::to_string(m.line + 1) + ":" + std::to_string(m.column + 1);
}

void read_field(Field& f, const YAML::Node& value, const std::string& location) {
  try {
    f.read(value);
  } catch (const FieldError& e) {
    throw ConfigError(location + ": field '" + f.key + "': " + e.message);
  }
}

void finalize(ExperimentConfig& c) { c.agent.policy.a_max = c.geometry.a_max; }

}  // namespace

std::vector<EvalBucket> default_eval_buckets() {
  const env::Vec2 translation{0.15, -0.15};
  const env::Vec2 shift{0.15, 0.10};
  auto rot = [](double deg) {
    env::Perturbation p;
    p.view_rotation = deg * kDeg;
    return p;
  };
  env::Perturbation trans;
  trans.view_translation = translation;
  env::Perturbation init;
  init.init_shift = shift;
  env::Perturbation clutter;
  clutter.clutter_count = 4;
  env::Perturbation combined{30.0 * kDeg, translation, shift, 4};
  return {{"view_rot+15", rot(15.0)},     {"view_rot-15", rot(-15.0)}, {"view_rot+30", rot(30.0)},
          {"view_rot-30", rot(-30.0)},    {"view_translate", trans},   {"init_shift", init},
          {"clutter_4", clutter},         {"combined", combined}};
}

void ExperimentConfig::validate() const {
  auto wrap = [](const char* section, const auto& fn) {
    try {
      fn();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("section '") + section + "': " + e.what());
    }
  };
  wrap("fusion", [&] { agent.fusion.validate(); });
  wrap("policy", [&] { agent.policy.validate(); });
  wrap("noise", [&] { agent.noise.validate(); });
  wrap("train", [&] { train.validate(); });
  if (!(geometry.workspace > 0.0 && geometry.a_max > 0.0 && geometry.grasp_radius > 0.0 &&
        geometry.dest_radius > 0.0 && geometry.leave_radius > 0.0)) {
    throw ConfigError("section 'env': lengths must be positive");
  }
  if (agent.view_id >= agent.fusion.views) throw ConfigError("field 'fusion.view_id': must be < fusion.views");
  if (seeds.empty()) throw ConfigError("field 'seeds': at least one seed is required");
  if (!(success_threshold > 0.0 && success_threshold <= 1.0)) {
    throw ConfigError("field 'success_threshold': must be in (0, 1]");
  }
  if (train.train_range.clutter_max > static_cast<int>(geometry.max_distractors)) {
    throw ConfigError("field 'train_split.clutter_max': exceeds env.max_distractors");
  }
  if (eval.episodes < 1) throw ConfigError("field 'eval.episodes': must be >= 1");
  if (eval.sampling_epochs < 1 || eval.sampling_epochs > eval.episodes) {
    throw ConfigError("field 'eval.sampling_epochs': must be in [1, eval.episodes]");
  }
  if (eval.buckets.empty()) throw ConfigError("field 'eval.buckets': at least one bucket is required");
  std::set<std::string> names;
  for (const auto& b : eval.buckets) {
    if (!names.insert(b.name).second) throw ConfigError("field 'eval.buckets': duplicate name '" + b.name + "'");
    if (b.pert.clutter_count > static_cast<int>(geometry.max_distractors)) {
      throw ConfigError("field 'eval.buckets': '" + b.name + "' clutter exceeds env.max_distractors");
    }
    if (train.train_range.contains(b.pert)) {
      throw ConfigError("field 'eval.buckets': '" + b.name + "' lies inside the training perturbation range");
    }
  }
}

ExperimentConfig parse_config(const std::string& yaml_text, const std::string& source) {
  YAML::Node root;
  try {
    root = YAML::Load(yaml_text);
  } catch (const YAML::Exception& e) {
    throw ConfigError(where(source, e.mark) + ": malformed YAML: " + e.msg);
  }
  ExperimentConfig cfg;
  auto fields = schema(cfg);
  if (root.IsNull()) {
    finalize(cfg);
    cfg.validate();
    return cfg;
  }
  if (!root.IsMap()) throw ConfigError(where(source, root.Mark()) + ": top level must be a mapping");
  std::set<std::string> seen;
  for (const auto& kv : root) {
    const auto name = kv.first.as<std::string>();
    const auto loc = where(source, kv.first.Mark());
    if (Field* f = find(fields, name)) {
      read_field(*f, kv.second, loc);
      continue;
    }
    if (!is_section(fields, name)) throw ConfigError(loc + ": unknown field '" + name + "'");
    if (!kv.second.IsMap()) throw ConfigError(loc + ": section '" + name + "' must be a mapping");
    for (const auto& inner : kv.second) {
      const auto key = name + "." + inner.first.as<std::string>();
      const auto inner_loc = where(source, inner.first.Mark());
      Field* f = find(fields, key);
      if (f == nullptr) throw ConfigError(inner_loc + ": unknown field '" + key + "'");
      if (!seen.insert(key).second) throw ConfigError(inner_loc + ": duplicate field '" + key + "'");
      read_field(*f, inner.second, inner_loc);
    }
  }
  finalize(cfg);
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(source + ": " + e.what());
  }
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path.string() + ": cannot open config file");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.string());
}

void apply_overrides(ExperimentConfig& cfg, std::span<const std::string> overrides) {
  auto fields = schema(cfg);
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + o + "': expected key=value");
    const std::string key = o.substr(0, eq);
    Field* f = find(fields, key);
    if (f == nullptr) throw ConfigError("override '" + o + "': unknown field '" + key + "'");
    YAML::Node value;
    try {
      value = YAML::Load(o.substr(eq + 1));
    } catch (const YAML::Exception& e) {
      throw ConfigError("override '" + o + "': malformed value: " + e.msg);
    }
    read_field(*f, value, "override '" + o + "'");
  }
  finalize(cfg);
  cfg.validate();
}

void apply_ablation(ExperimentConfig& cfg, const std::string& name) {
  if (name == "fusion") {
    cfg.agent.fusion_enabled = false;
  } else if (name == "dr") {
    cfg.train.reward.mode = phases::RewardMode::Sparse;
  } else if (name == "scan") {
    cfg.agent.noise.regime = noise::Regime::FlowNoise;
  } else {
    throw ConfigError("ablation '" + name + "': expected one of fusion, dr, scan");
  }
}

std::string to_yaml(const ExperimentConfig& cfg) {
  ExperimentConfig copy = cfg;
  auto fields = schema(copy);
  YAML::Emitter e;
  e.SetDoublePrecision(17);
  e << YAML::BeginMap;
  std::string open_section;
  for (auto& f : fields) {
    const auto dot = f.key.find('.');
    const std::string section = dot == std::string::npos ? std::string() : f.key.substr(0, dot);
    const std::string name = dot == std::string::npos ? f.key : f.key.substr(dot + 1);
    if (section != open_section) {
      if (!open_section.empty()) e << YAML::EndMap;
      if (!section.empty()) e << YAML::Key << section << YAML::Value << YAML::BeginMap;
      open_section = section;
    }
    e << YAML::Key << name << YAML::Value;
    f.write(e);
  }
  if (!open_section.empty()) e << YAML::EndMap;
  e << YAML::EndMap;
  return std::string(e.c_str()) + "\n";
}

std::vector<std::string> schema_keys() {
  ExperimentConfig c;
  std::vector<std::string> keys;
  for (const auto& f : schema(c)) keys.push_back(f.key);
  return keys;
}

}  // namespace spatialrl::harness
