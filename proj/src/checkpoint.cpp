#include "lpn/checkpoint.hpp"

#include <json.hpp>

#include <cstring>
#include <filesystem>
#include <fstream>

namespace lpn {

namespace {

const char kMagic[8] = {'L', 'P', 'N', 'C', 'K', 'P', 'T', '\0'};

template <typename T>
void put(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T take(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw CheckpointError("checkpoint truncated");
  return v;
}

void put_string(std::ostream& out, const std::string& s) {
  put<uint64_t>(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string take_string(std::istream& in) {
  uint64_t n = take<uint64_t>(in);
  if (n > (1ULL << 30)) throw CheckpointError("checkpoint string length implausible");
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  if (!in) throw CheckpointError("checkpoint truncated");
  return s;
}

ModuleCoordinate parse_coordinate(const std::string& key) {
  if (key.size() < 3 || key[0] != 'b')
    throw CheckpointError("bad module coordinate key: " + key);
  size_t dot = key.find('.');
  if (dot == std::string::npos)
    throw CheckpointError("bad module coordinate key: " + key);
  ModuleCoordinate c;
  c.block = std::stoi(key.substr(1, dot - 1));
  c.family = family_from_name(key.substr(dot + 1));
  return c;
}

}  // namespace

std::string model_config_to_json(const ModelConfig& cfg) {
  nlohmann::json j;
  j["vocab_size"] = cfg.vocab_size;
  j["d_model"] = cfg.d_model;
  j["n_layers"] = cfg.n_layers;
  j["n_heads"] = cfg.n_heads;
  j["d_mlp"] = cfg.d_mlp;
  j["max_seq_len"] = cfg.max_seq_len;
  j["nlpn_r_max"] = cfg.nlpn_r_max;
  j["nlpn_targets"] = nlohmann::json::array();
  for (Family f : cfg.nlpn_targets) j["nlpn_targets"].push_back(family_name(f));
  return j.dump();
}

ModelConfig model_config_from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  ModelConfig cfg;
  cfg.vocab_size = j.at("vocab_size").get<int64_t>();
  cfg.d_model = j.at("d_model").get<int64_t>();
  cfg.n_layers = j.at("n_layers").get<int64_t>();
  cfg.n_heads = j.at("n_heads").get<int64_t>();
  cfg.d_mlp = j.at("d_mlp").get<int64_t>();
  cfg.max_seq_len = j.at("max_seq_len").get<int64_t>();
  cfg.nlpn_r_max = j.at("nlpn_r_max").get<int64_t>();
  cfg.nlpn_targets.clear();
  for (const auto& name : j.at("nlpn_targets"))
    cfg.nlpn_targets.push_back(family_from_name(name.get<std::string>()));
  return cfg;
}

void save_checkpoint(const Model& model, const std::string& path) {
  std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc | std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + tmp);
    out.write(kMagic, sizeof(kMagic));
    put<uint32_t>(out, kCheckpointVersion);
    put_string(out, model_config_to_json(model.config()));

    put<uint64_t>(out, static_cast<uint64_t>(model.r_max()));
    put<uint64_t>(out, model.nlpn_coords().size());
    for (const auto& coord : model.nlpn_coords()) put_string(out, coord.key());

    put<uint64_t>(out, model.params().size());
    for (const auto& [name, p] : model.params()) {
      put_string(out, name);
      put<uint8_t>(out, 0);  // dtype: float64
      put<uint64_t>(out, p.value.shape.size());
      for (int64_t d : p.value.shape) put<uint64_t>(out, static_cast<uint64_t>(d));
      out.write(reinterpret_cast<const char*>(p.value.data.data()),
                static_cast<std::streamsize>(p.value.data.size() * sizeof(double)));
    }
    if (!out) throw IoError("write failed: " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("rename to " + path + " failed: " + ec.message());
}

Model load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw CheckpointError("not a checkpoint file: " + path);
  uint32_t version = take<uint32_t>(in);
  if (version != kCheckpointVersion)
    throw CheckpointError("checkpoint version " + std::to_string(version) +
                          " unsupported; this build reads version " +
                          std::to_string(kCheckpointVersion));
  ModelConfig cfg = model_config_from_json(take_string(in));
  Model model(cfg, 0);

  int64_t surg_r_max = static_cast<int64_t>(take<uint64_t>(in));
  uint64_t n_coords = take<uint64_t>(in);
  std::set<ModuleCoordinate> coords;
  for (uint64_t i = 0; i < n_coords; ++i)
    coords.insert(parse_coordinate(take_string(in)));
  // swap the registered dense maps for factor slots before loading values
  for (const auto& coord : coords) {
    std::string w = coord.key() + ".W";
    if (model.params().has(w)) model.params().remove(w);
  }

  uint64_t n_params = take<uint64_t>(in);
  for (uint64_t i = 0; i < n_params; ++i) {
    std::string name = take_string(in);
    uint8_t dtype = take<uint8_t>(in);
    if (dtype != 0) throw CheckpointError("unsupported dtype for " + name);
    uint64_t ndim = take<uint64_t>(in);
    if (ndim > 8) throw CheckpointError("implausible rank for " + name);
    std::vector<int64_t> shape;
    int64_t numel = 1;
    for (uint64_t k = 0; k < ndim; ++k) {
      shape.push_back(static_cast<int64_t>(take<uint64_t>(in)));
      numel *= shape.back();
    }
    Tensor t = Tensor::zeros(shape);
    in.read(reinterpret_cast<char*>(t.data.data()),
            static_cast<std::streamsize>(static_cast<uint64_t>(numel) * sizeof(double)));
    if (!in) throw CheckpointError("checkpoint truncated in array " + name);
    if (model.params().has(name)) {
      auto& p = model.params().get(name);
      if (p.value.shape != t.shape)
        throw CheckpointError("shape mismatch for " + name);
      p.value = std::move(t);
    } else {
      model.params().add(name, std::move(t));
    }
  }
  if (n_coords > 0) model.restore_surgery_registry(surg_r_max, coords);
  return model;
}

}  // namespace lpn
