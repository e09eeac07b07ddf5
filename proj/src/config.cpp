#include "ftlab/config.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "ftlab/error.hpp"
#include "ftlab/random.hpp"

namespace ftlab {

namespace {

constexpr std::uint64_t kAttackStream = 0x61747461636b;

std::uint64_t natural(const Json& v, const std::string& field) {
  if (v.is_number_unsigned()) return v.get<std::uint64_t>();
  if (v.is_number_integer() && v.get<std::int64_t>() >= 0) return static_cast<std::uint64_t>(v.get<std::int64_t>());
  throw ConfigError(field, "expected a non-negative integer");
}

bool is_natural(const Json& v) { return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0); }

// Typed, strict access to one JSON object. finish() rejects keys that no
// getter consumed.
class Section {
 public:
  Section(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_.empty() ? "config" : path_, "expected an object");
  }

  std::string key(const std::string& k) const { return path_.empty() ? k : path_ + "." + k; }
  bool has(const std::string& k) const { return j_.contains(k); }

  const Json* find(const std::string& k) {
    seen_.insert(k);
    auto it = j_.find(k);
    return it == j_.end() ? nullptr : &*it;
  }

  void size(const std::string& k, std::size_t& out) {
    if (const Json* v = find(k)) out = natural(*v, key(k));
  }
  void u64(const std::string& k, std::uint64_t& out) {
    if (const Json* v = find(k)) out = natural(*v, key(k));
  }
  void real(const std::string& k, double& out) {
    if (const Json* v = find(k)) {
      if (!v->is_number()) throw ConfigError(key(k), "expected a number");
      out = v->get<double>();
    }
  }
  void boolean(const std::string& k, bool& out) {
    if (const Json* v = find(k)) {
      if (!v->is_boolean()) throw ConfigError(key(k), "expected true or false");
      out = v->get<bool>();
    }
  }
  void string(const std::string& k, std::string& out) {
    if (const Json* v = find(k)) {
      if (!v->is_string()) throw ConfigError(key(k), "expected a string");
      out = v->get<std::string>();
    }
  }
  const Json* array(const std::string& k) {
    const Json* v = find(k);
    if (v && !v->is_array()) throw ConfigError(key(k), "expected an array");
    return v;
  }
  const Json* object(const std::string& k) {
    const Json* v = find(k);
    if (v && !v->is_object()) throw ConfigError(key(k), "expected an object");
    return v;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError(key(it.key()), "unknown key");
  }

 private:
  const Json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

std::string init_name(Init i) { return i == Init::Identity ? "identity" : "random"; }

Init parse_init(const std::string& s, const std::string& field) {
  if (s == "identity") return Init::Identity;
  if (s == "random") return Init::Random;
  throw ConfigError(field, "unknown init '" + s + "' (expected identity or random)");
}

void read_model(Section& s, ModelConfig& m) {
  s.size("depth", m.depth);
  s.size("embed_dim", m.embed_dim);
  s.size("heads", m.heads);
  s.size("patch_size", m.patch_size);
  s.size("ffn_ratio", m.ffn_ratio);
}

Json range_json(const StrideRange& r) {
  Json end = r.end == kUnbounded ? Json(nullptr) : Json(r.end);
  return Json::array({r.start, end, r.stride});
}

}  // namespace

Json to_json(const ModelConfig& cfg) {
  return Json{{"depth", cfg.depth},           {"embed_dim", cfg.embed_dim},   {"heads", cfg.heads},
              {"patch_size", cfg.patch_size}, {"image_size", cfg.image_size}, {"channels", cfg.channels},
              {"num_classes", cfg.num_classes}, {"ffn_ratio", cfg.ffn_ratio}};
}

ModelConfig model_config_from_json(const Json& j) {
  Section s(j, "model");
  ModelConfig m;
  read_model(s, m);
  s.size("image_size", m.image_size);
  s.size("channels", m.channels);
  s.size("num_classes", m.num_classes);
  s.finish();
  return m;
}

Json to_json(const PeftSpec& spec) {
  return Json{{"method", to_string(spec.method)},
              {"rank", spec.rank},
              {"lora_alpha", spec.lora_alpha},
              {"reduction_factor", spec.reduction_factor},
              {"kron_factors", spec.kron_factors},
              {"locations", spec.locations},
              {"init", init_name(spec.init)},
              {"train_head", spec.train_head}};
}

PeftSpec peft_spec_from_json(const Json& j, const std::string& section) {
  Section s(j, section);
  PeftSpec p;
  std::string method;
  s.string("method", method);
  if (method.empty()) throw ConfigError(s.key("method"), "required");
  p.method = parse_method(method);
  s.size("rank", p.rank);
  s.real("lora_alpha", p.lora_alpha);
  s.size("reduction_factor", p.reduction_factor);
  s.size("kron_factors", p.kron_factors);
  if (const Json* locs = s.array("locations")) {
    for (const auto& l : *locs) {
      if (!l.is_string()) throw ConfigError(s.key("locations"), "expected strings");
      p.locations.push_back(l.get<std::string>());
    }
  }
  std::string init = init_name(p.init);
  s.string("init", init);
  p.init = parse_init(init, s.key("init"));
  s.boolean("train_head", p.train_head);
  s.finish();
  return p;
}

ModelConfig ExperimentConfig::upstream_model() const {
  ModelConfig m = model;
  m.image_size = task.image_size;
  m.channels = task.channels;
  m.num_classes = task.num_classes_upstream;
  return m;
}

ModelConfig ExperimentConfig::downstream_model() const {
  ModelConfig m = upstream_model();
  m.num_classes = task.num_classes_downstream;
  return m;
}

TrackConfig ExperimentConfig::track_config() const {
  TrackConfig t;
  t.total_steps = training.total_steps;
  t.batch_size = training.batch_size;
  t.optimizer.lr = training.lr;
  t.optimizer.weight_decay = training.weight_decay;
  t.seed = seed;
  t.schedule = tracking.strides.empty() ? Schedule::standard(tracking.mode) : Schedule{tracking.mode, tracking.strides};
  t.attack = attack;
  t.attack.seed = derive_seed(seed, {kAttackStream});
  t.shifts = tracking.shifts;
  t.eval_subset = tracking.eval_subset;
  t.train_eval_subset = tracking.train_eval_subset;
  return t;
}

void ExperimentConfig::validate() const {
  task.validate();
  downstream_model().validate();
  upstream_model().validate();
  peft.validate(downstream_model());
  if (pretrain.batch_size < 1) throw ConfigError("pretrain.batch_size", "must be at least 1");
  if (!(pretrain.optimizer.lr >= 0.0)) throw ConfigError("pretrain.lr", "must be >= 0");
  track_config().validate();
  if (output.dir.empty()) throw ConfigError("output.dir", "must not be empty");
}

ExperimentConfig config_from_json(const Json& doc) {
  ExperimentConfig c;
  Section top(doc, "");
  top.string("label", c.label);
  top.u64("seed", c.seed);

  if (const Json* j = top.object("model")) {
    Section s(*j, "model");
    read_model(s, c.model);
    s.finish();
  }
  if (const Json* j = top.object("pretrain")) {
    Section s(*j, "pretrain");
    s.size("steps", c.pretrain.steps);
    s.size("batch_size", c.pretrain.batch_size);
    s.real("lr", c.pretrain.optimizer.lr);
    s.real("weight_decay", c.pretrain.optimizer.weight_decay);
    s.u64("seed", c.pretrain.seed);
    s.finish();
  }
  const Json* peft = top.object("peft");
  if (!peft) throw ConfigError("peft.method", "required");
  c.peft = peft_spec_from_json(*peft);

  if (const Json* j = top.object("task")) {
    Section s(*j, "task");
    s.size("num_classes_upstream", c.task.num_classes_upstream);
    s.size("num_classes_downstream", c.task.num_classes_downstream);
    if (const Json* tree = s.array("class_tree")) {
      for (const auto& v : *tree) {
        c.task.class_tree.push_back(natural(v, "task.class_tree"));
      }
    }
    s.real("separation", c.task.separation);
    s.real("child_scale", c.task.child_scale);
    s.size("image_size", c.task.image_size);
    s.size("channels", c.task.channels);
    s.real("noise_std", c.task.noise_std);
    s.size("samples_per_class", c.task.samples_per_class);
    s.size("test_per_class", c.task.test_per_class);
    s.size("upstream_per_class", c.task.upstream_per_class);
    s.u64("seed", c.task.seed);
    s.finish();
  }
  if (const Json* j = top.object("attack")) {
    Section s(*j, "attack");
    s.real("epsilon", c.attack.epsilon);
    s.real("alpha", c.attack.alpha);
    s.size("steps", c.attack.steps);
    s.boolean("random_start", c.attack.random_start);
    s.real("clamp_lo", c.attack.clamp_lo);
    s.real("clamp_hi", c.attack.clamp_hi);
    s.finish();
  }
  if (const Json* j = top.object("training")) {
    Section s(*j, "training");
    s.real("lr", c.training.lr);
    s.real("weight_decay", c.training.weight_decay);
    s.size("batch_size", c.training.batch_size);
    s.size("total_steps", c.training.total_steps);
    s.finish();
  }
  if (const Json* j = top.object("tracking")) {
    Section s(*j, "tracking");
    std::string mode = to_string(c.tracking.mode);
    s.string("mode", mode);
    try {
      c.tracking.mode = parse_schedule_mode(mode);
    } catch (const ConfigError& e) {
      throw ConfigError("tracking.mode", e.what());
    }
    if (const Json* strides = s.array("strides")) {
      for (const auto& r : *strides) {
        const bool ok = r.is_array() && r.size() == 3 && is_natural(r[0]) && (is_natural(r[1]) || r[1].is_null()) &&
                        is_natural(r[2]);
        if (!ok) throw ConfigError("tracking.strides", "expected [start, end or null, stride] triples");
        c.tracking.strides.push_back({natural(r[0], "tracking.strides"),
                                      r[1].is_null() ? kUnbounded : natural(r[1], "tracking.strides"),
                                      natural(r[2], "tracking.strides")});
      }
    }
    if (const Json* shifts = s.array("shifts")) {
      for (const auto& sj : *shifts) {
        Section ss(sj, "tracking.shifts");
        std::string kind;
        ss.string("kind", kind);
        if (kind.empty()) throw ConfigError("tracking.shifts.kind", "required");
        DomainShift shift;
        shift.kind = parse_shift(kind);
        ss.real("strength", shift.strength);
        ss.u64("seed", shift.seed);
        ss.finish();
        c.tracking.shifts.push_back(shift);
      }
    }
    s.size("eval_subset", c.tracking.eval_subset);
    s.size("train_eval_subset", c.tracking.train_eval_subset);
    s.finish();
  }
  if (const Json* j = top.object("output")) {
    Section s(*j, "output");
    s.string("dir", c.output.dir);
    s.boolean("checkpoints", c.output.checkpoints);
    s.boolean("export_data", c.output.export_data);
    s.finish();
  }
  top.finish();
  c.validate();
  return c;
}

Json config_to_json(const ExperimentConfig& c) {
  Json strides = Json::array();
  for (const auto& r : c.tracking.strides) strides.push_back(range_json(r));
  Json shifts = Json::array();
  for (const auto& s : c.tracking.shifts)
    shifts.push_back(Json{{"kind", to_string(s.kind)}, {"strength", s.strength}, {"seed", s.seed}});
  return Json{
      {"label", c.label},
      {"seed", c.seed},
      {"model",
       {{"depth", c.model.depth},
        {"embed_dim", c.model.embed_dim},
        {"heads", c.model.heads},
        {"patch_size", c.model.patch_size},
        {"ffn_ratio", c.model.ffn_ratio}}},
      {"pretrain",
       {{"steps", c.pretrain.steps},
        {"batch_size", c.pretrain.batch_size},
        {"lr", c.pretrain.optimizer.lr},
        {"weight_decay", c.pretrain.optimizer.weight_decay},
        {"seed", c.pretrain.seed}}},
      {"peft", to_json(c.peft)},
      {"task",
       {{"num_classes_upstream", c.task.num_classes_upstream},
        {"num_classes_downstream", c.task.num_classes_downstream},
        {"class_tree", c.task.class_tree},
        {"separation", c.task.separation},
        {"child_scale", c.task.child_scale},
        {"image_size", c.task.image_size},
        {"channels", c.task.channels},
        {"noise_std", c.task.noise_std},
        {"samples_per_class", c.task.samples_per_class},
        {"test_per_class", c.task.test_per_class},
        {"upstream_per_class", c.task.upstream_per_class},
        {"seed", c.task.seed}}},
      {"attack",
       {{"epsilon", c.attack.epsilon},
        {"alpha", c.attack.alpha},
        {"steps", c.attack.steps},
        {"random_start", c.attack.random_start},
        {"clamp_lo", c.attack.clamp_lo},
        {"clamp_hi", c.attack.clamp_hi}}},
      {"training",
       {{"lr", c.training.lr},
        {"weight_decay", c.training.weight_decay},
        {"batch_size", c.training.batch_size},
        {"total_steps", c.training.total_steps}}},
      {"tracking",
       {{"mode", to_string(c.tracking.mode)},
        {"strides", strides},
        {"shifts", shifts},
        {"eval_subset", c.tracking.eval_subset},
        {"train_eval_subset", c.tracking.train_eval_subset}}},
      {"output",
       {{"dir", c.output.dir}, {"checkpoints", c.output.checkpoints}, {"export_data", c.output.export_data}}},
  };
}

Json load_config_document(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();
  try {
    return Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    const std::size_t upto = std::min<std::size_t>(e.byte, text.size());
    const auto line = 1 + std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(upto), '\n');
    throw ConfigError("config", path + ":" + std::to_string(line) + ": malformed JSON");
  }
}

ExperimentConfig load_config(const std::string& path) { return config_from_json(load_config_document(path)); }

void set_config_value(Json& doc, const std::string& dotted_key, const std::string& value) {
  if (dotted_key.empty()) throw ConfigError("config", "empty key");
  Json* node = &doc;
  std::size_t pos = 0;
  for (;;) {
    const auto dot = dotted_key.find('.', pos);
    const std::string part = dotted_key.substr(pos, dot == std::string::npos ? std::string::npos : dot - pos);
    if (part.empty()) throw ConfigError(dotted_key, "malformed key");
    if (!node->is_object()) throw ConfigError(dotted_key, "parent is not an object");
    if (dot == std::string::npos) {
      Json parsed = Json::parse(value, nullptr, false);
      (*node)[part] = parsed.is_discarded() ? Json(value) : parsed;
      return;
    }
    if (!node->contains(part)) (*node)[part] = Json::object();
    node = &(*node)[part];
    pos = dot + 1;
  }
}

}  // namespace ftlab
