#include "dpersona/checkpoint.hpp"

#include <fstream>
#include <stdexcept>

namespace dpersona::io {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kMagic = "DPERSONA-CHECKPOINT";

void reject_unknown(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  for (const auto& [key, value] : j.items()) {
    (void)value;
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw std::invalid_argument("unknown key '" + key + "' in " + where);
  }
}

}  // namespace

json to_json(const model::ArchitectureConfig& a) {
  return {{"latent_dim", a.latent_dim},           {"raters", a.raters},
          {"backbone_widths", a.backbone_widths}, {"feature_channels", a.feature_channels},
          {"encoder_widths", a.encoder_widths},   {"head_width", a.head_width},
          {"projection_width", a.projection_width}, {"leaky_slope", a.leaky_slope}};
}

model::ArchitectureConfig architecture_from_json(const json& j) {
  reject_unknown(j, {"latent_dim", "raters", "backbone_widths", "feature_channels", "encoder_widths", "head_width",
                     "projection_width", "leaky_slope"},
                 "model");
  model::ArchitectureConfig a;
  if (j.contains("latent_dim")) a.latent_dim = j.at("latent_dim").get<int>();
  if (j.contains("raters")) a.raters = j.at("raters").get<int>();
  if (j.contains("backbone_widths")) a.backbone_widths = j.at("backbone_widths").get<std::array<int, 3>>();
  if (j.contains("feature_channels")) a.feature_channels = j.at("feature_channels").get<int>();
  if (j.contains("encoder_widths")) a.encoder_widths = j.at("encoder_widths").get<std::array<int, 3>>();
  if (j.contains("head_width")) a.head_width = j.at("head_width").get<int>();
  if (j.contains("projection_width")) a.projection_width = j.at("projection_width").get<int>();
  if (j.contains("leaky_slope")) a.leaky_slope = j.at("leaky_slope").get<double>();
  a.validate();
  return a;
}

void save_checkpoint(const fs::path& path, const Checkpoint& ckpt) {
  const auto& b = ckpt.bundle;
  json comps = json::array();
  for (const auto* c : b.components()) {
    json params = json::array();
    for (const auto& p : c->parameters()) params.push_back({{"name", p.name}, {"shape", p.value.shape}});
    comps.push_back({{"name", c->name()}, {"frozen", c->frozen()}, {"checksum", to_hex(c->checksum())}, {"parameters", params}});
  }
  const json header{{"version", kCheckpointVersion},     {"arch", to_json(b.arch)},
                    {"latent_dim", b.arch.latent_dim},   {"config_hash", ckpt.config_hash},
                    {"upstream_hash", ckpt.upstream_hash}, {"meta", ckpt.meta},
                    {"components", comps}};
  const std::string text = header.dump();
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  out << kMagic << "\n" << text.size() << "\n" << text;
  for (const auto* c : b.components())
    for (const auto& p : c->parameters())
      out.write(reinterpret_cast<const char*>(p.value.data.data()), static_cast<std::streamsize>(p.value.size() * sizeof(float)));
  if (!out) throw std::runtime_error("short write to " + path.string());
}

Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("missing checkpoint " + path.string());
  std::string magic, len_line;
  std::getline(in, magic);
  if (magic != kMagic) throw std::runtime_error(path.string() + " is not a checkpoint");
  std::getline(in, len_line);
  const std::size_t len = std::stoull(len_line);
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw std::runtime_error("truncated checkpoint header in " + path.string());
  const json header = json::parse(text);
  if (header.at("version").get<int>() != kCheckpointVersion) {
    throw std::runtime_error("unsupported checkpoint version in " + path.string());
  }

  Checkpoint ckpt;
  const auto arch = architecture_from_json(header.at("arch"));
  ckpt.bundle = model::ModelBundle<float>::create(arch, 0);
  ckpt.config_hash = header.at("config_hash").get<std::string>();
  ckpt.upstream_hash = header.at("upstream_hash").get<std::string>();
  ckpt.meta = header.at("meta");

  const auto& comps = header.at("components");
  const std::size_t shared = model::kSharedComponents.size();
  if (comps.size() < shared) throw std::runtime_error("checkpoint lists too few components");
  const std::size_t projections = comps.size() - shared;
  if (projections != 0 && projections != static_cast<std::size_t>(arch.raters)) {
    throw std::runtime_error("checkpoint must hold zero or R projection heads");
  }
  if (projections == 0) ckpt.bundle.projections.clear();

  auto all = ckpt.bundle.components();
  for (std::size_t i = 0; i < comps.size(); ++i) {
    auto& c = *all.at(i);
    const auto& jc = comps[i];
    if (jc.at("name").get<std::string>() != c.name()) throw std::runtime_error("unexpected component " + jc.at("name").get<std::string>());
    const auto& jp = jc.at("parameters");
    if (jp.size() != c.parameters().size()) throw std::runtime_error("parameter count mismatch in " + c.name());
    for (std::size_t k = 0; k < jp.size(); ++k) {
      auto& p = c.parameters()[k];
      if (jp[k].at("name").get<std::string>() != p.name || jp[k].at("shape").get<std::vector<int>>() != p.value.shape) {
        throw std::runtime_error("parameter layout mismatch in " + c.name() + "." + p.name);
      }
    }
  }
  for (auto* c : all)
    for (auto& p : c->parameters()) {
      in.read(reinterpret_cast<char*>(p.value.data.data()), static_cast<std::streamsize>(p.value.size() * sizeof(float)));
      if (!in) throw std::runtime_error("truncated checkpoint payload in " + path.string());
    }
  for (std::size_t i = 0; i < comps.size(); ++i) {
    auto& c = *all[i];
    const auto expected = comps[i].at("checksum").get<std::string>();
    const auto actual = c.checksum();
    if (to_hex(actual) != expected) throw std::runtime_error("checksum mismatch for component " + c.name());
    ckpt.checksums[c.name()] = actual;
    if (comps[i].at("frozen").get<bool>()) {
      c.set_frozen(true);
      ckpt.bundle.frozen_checksums[c.name()] = actual;
    }
  }
  return ckpt;
}

}  // namespace dpersona::io
