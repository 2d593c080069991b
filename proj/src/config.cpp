#include "dpersona/config.hpp"

#include <fstream>
#include <set>
#include <stdexcept>

#include "dpersona/checkpoint.hpp"
#include "dpersona/hashing.hpp"

namespace dpersona::config {

using nlohmann::json;

namespace {

// Reads typed keys from one section and rejects anything it did not read.
class Section {
 public:
  Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw std::invalid_argument("config section '" + name_ + "' must be an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw std::invalid_argument("config key '" + name_ + "." + key + "' has the wrong type: " + e.what());
    }
  }
  const json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }
  void done() const {
    for (const auto& [key, value] : j_.items()) {
      (void)value;
      if (!seen_.count(key)) throw std::invalid_argument("unknown config key '" + name_ + "." + key + "'");
    }
  }

 private:
  const json& j_;
  std::string name_;
  std::set<std::string> seen_;
};

}  // namespace

void ExperimentConfig::validate() const {
  synthgen.validate();
  model.validate();
  stage1.validate();
  stage2.validate();
  if (model.raters != synthgen.raters) throw std::invalid_argument("config: model.raters must equal synthgen.raters");
  if (metrics.sampling_numbers.empty()) throw std::invalid_argument("config: metrics.sampling_numbers is empty");
  for (int n : metrics.sampling_numbers)
    if (n < 1) throw std::invalid_argument("config: sampling numbers must be >= 1");
  if (metrics.bank_size < 1) throw std::invalid_argument("config: metrics.bank_size must be >= 1");
  if (baselines.epochs < 1 || baselines.batch_size < 1 || !(baselines.learning_rate > 0)) {
    throw std::invalid_argument("config: invalid baselines training settings");
  }
}

json to_json(const ExperimentConfig& c) {
  json profiles = json::array();
  for (const auto& p : c.synthgen.profiles) profiles.push_back(data::to_json(p));
  const auto& s1 = c.stage1;
  const auto& s2 = c.stage2;
  const auto& b = c.baselines;
  return {
      {"synthgen",
       {{"height", c.synthgen.height},
        {"width", c.synthgen.width},
        {"raters", c.synthgen.raters},
        {"train", c.synthgen.train},
        {"val", c.synthgen.val},
        {"test", c.synthgen.test},
        {"seed", c.synthgen.seed},
        {"profiles", profiles}}},
      {"model", io::to_json(c.model)},
      {"stage1",
       {{"epochs", s1.epochs},
        {"learning_rate", s1.learning_rate},
        {"K", s1.K},
        {"alpha", s1.weights.alpha},
        {"beta", s1.weights.beta},
        {"l2", s1.weights.l2},
        {"batch_size", s1.batch_size},
        {"seed", s1.seed},
        {"kl_direction", latent::to_string(s1.kl_direction)},
        {"sigma_floor", s1.sigma_floor},
        {"val_samples", s1.val_samples}}},
      {"stage2",
       {{"epochs", s2.epochs},
        {"learning_rate", s2.learning_rate},
        {"M", s2.M},
        {"seed", s2.seed},
        {"bank_policy", stage2::to_string(s2.bank_policy)},
        {"attention_scale", s2.attention_scale},
        {"batch_size", s2.batch_size},
        {"l2", s2.l2}}},
      {"metrics",
       {{"sampling_numbers", c.metrics.sampling_numbers}, {"seed", c.metrics.seed}, {"bank_size", c.metrics.bank_size}}},
      {"baselines",
       {{"epochs", b.epochs},
        {"learning_rate", b.learning_rate},
        {"batch_size", b.batch_size},
        {"l2", b.l2},
        {"seed", b.seed},
        {"staple_max_iterations", b.staple.max_iterations},
        {"staple_tolerance", b.staple.tolerance}}},
  };
}

ExperimentConfig from_json(const json& j) {
  ExperimentConfig c;
  Section root(j, "<root>");
  if (const json* s = root.child("synthgen")) {
    Section sec(*s, "synthgen");
    sec.get("height", c.synthgen.height);
    sec.get("width", c.synthgen.width);
    sec.get("raters", c.synthgen.raters);
    sec.get("train", c.synthgen.train);
    sec.get("val", c.synthgen.val);
    sec.get("test", c.synthgen.test);
    sec.get("seed", c.synthgen.seed);
    if (const json* p = sec.child("profiles")) {
      if (!p->is_array()) throw std::invalid_argument("config key 'synthgen.profiles' must be an array");
      for (const auto& q : *p) c.synthgen.profiles.push_back(data::profile_from_json(q));
    }
    sec.done();
  }
  if (const json* s = root.child("model")) c.model = io::architecture_from_json(*s);
  if (!j.contains("model") || !j.at("model").contains("raters")) c.model.raters = c.synthgen.raters;
  if (const json* s = root.child("stage1")) {
    Section sec(*s, "stage1");
    auto& s1 = c.stage1;
    sec.get("epochs", s1.epochs);
    sec.get("learning_rate", s1.learning_rate);
    sec.get("K", s1.K);
    sec.get("alpha", s1.weights.alpha);
    sec.get("beta", s1.weights.beta);
    sec.get("l2", s1.weights.l2);
    sec.get("batch_size", s1.batch_size);
    sec.get("seed", s1.seed);
    std::string dir = latent::to_string(s1.kl_direction);
    sec.get("kl_direction", dir);
    s1.kl_direction = latent::parse_kl_direction(dir);
    sec.get("sigma_floor", s1.sigma_floor);
    sec.get("val_samples", s1.val_samples);
    sec.done();
  }
  if (const json* s = root.child("stage2")) {
    Section sec(*s, "stage2");
    auto& s2 = c.stage2;
    sec.get("epochs", s2.epochs);
    sec.get("learning_rate", s2.learning_rate);
    sec.get("M", s2.M);
    sec.get("seed", s2.seed);
    std::string policy = stage2::to_string(s2.bank_policy);
    sec.get("bank_policy", policy);
    s2.bank_policy = stage2::parse_bank_policy(policy);
    sec.get("attention_scale", s2.attention_scale);
    sec.get("batch_size", s2.batch_size);
    sec.get("l2", s2.l2);
    sec.done();
  }
  if (const json* s = root.child("metrics")) {
    Section sec(*s, "metrics");
    sec.get("sampling_numbers", c.metrics.sampling_numbers);
    sec.get("seed", c.metrics.seed);
    sec.get("bank_size", c.metrics.bank_size);
    sec.done();
  }
  if (const json* s = root.child("baselines")) {
    Section sec(*s, "baselines");
    auto& b = c.baselines;
    sec.get("epochs", b.epochs);
    sec.get("learning_rate", b.learning_rate);
    sec.get("batch_size", b.batch_size);
    sec.get("l2", b.l2);
    sec.get("seed", b.seed);
    sec.get("staple_max_iterations", b.staple.max_iterations);
    sec.get("staple_tolerance", b.staple.tolerance);
    sec.done();
  }
  root.done();
  c.validate();
  return c;
}

ExperimentConfig load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw std::invalid_argument("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return from_json(j);
}

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw std::invalid_argument("override must look like section.key=value");
  const std::string path = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::exception&) {
    value = raw;
  }
  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw std::invalid_argument("bad override path '" + path + "'");
    if (dot == std::string::npos) {
      (*node)[key] = value;
      return;
    }
    if (!node->contains(key)) (*node)[key] = json::object();
    node = &(*node)[key];
    start = dot + 1;
  }
}

std::string hash_json(const json& j) {
  Fnv1a64 h;
  h.update(j.dump());
  return to_hex(h.digest());
}

std::string config_hash(const ExperimentConfig& c) { return hash_json(to_json(c)); }

std::string upstream_hash(const ExperimentConfig& c) {
  const json j = to_json(c);
  return hash_json(json{{"synthgen", j.at("synthgen")}, {"model", j.at("model")}});
}

}  // namespace dpersona::config
