#include "lpn/transformer.hpp"

#include <cmath>
#include <cstring>

namespace lpn {

std::string family_name(Family f) {
  switch (f) {
    case Family::MlpUp: return "mlp_up";
    case Family::MlpDown: return "mlp_down";
    case Family::AttnQ: return "attn_q";
    case Family::AttnK: return "attn_k";
    case Family::AttnV: return "attn_v";
    case Family::AttnO: return "attn_o";
  }
  throw ArgumentError("unknown module family");
}

Family family_from_name(const std::string& name) {
  for (Family f : {Family::MlpUp, Family::MlpDown, Family::AttnQ, Family::AttnK,
                   Family::AttnV, Family::AttnO})
    if (family_name(f) == name) return f;
  throw ArgumentError("unknown module family: " + name);
}

void ModelConfig::validate() const {
  if (d_model <= 0 || n_layers <= 0 || n_heads <= 0 || d_mlp <= 0 || max_seq_len <= 0)
    throw ArgumentError("model dimensions must be positive");
  if (d_model % n_heads != 0)
    throw ArgumentError("d_model must be divisible by n_heads");
  if (nlpn_r_max < 1 || nlpn_r_max > std::min(d_model, d_mlp))
    throw ArgumentError("nlpn_r_max out of range for the targeted layers");
  if (nlpn_targets.empty())
    throw ArgumentError("nlpn_targets must name at least one family");
}

namespace {

// in/out dims of the linear map for a family, as (d_out, d_in)
std::pair<int64_t, int64_t> family_dims(const ModelConfig& cfg, Family f) {
  switch (f) {
    case Family::MlpUp: return {cfg.d_mlp, cfg.d_model};
    case Family::MlpDown: return {cfg.d_model, cfg.d_mlp};
    default: return {cfg.d_model, cfg.d_model};
  }
}

Tensor normal_init(int64_t rows, int64_t cols, double sigma, Rng& rng) {
  Tensor t = Tensor::zeros({rows, cols});
  for (double& v : t.data) v = sigma * rng.normal();
  return t;
}

}  // namespace

Model::Model(ModelConfig config, uint64_t seed) : config_(std::move(config)) {
  if (config_.vocab_size == 0)
    config_.vocab_size = Tokenizer::get().vocab_size();
  config_.validate();
  Rng rng(seed);
  const int64_t d = config_.d_model;

  params_.add("tok_emb", normal_init(config_.vocab_size, d, 0.02, rng));
  params_.add("pos_emb", normal_init(config_.max_seq_len, d, 0.02, rng));
  for (int b = 0; b < config_.n_layers; ++b) {
    std::string pre = "b" + std::to_string(b) + ".";
    params_.add(pre + "ln1.g", Tensor::vector_of(std::vector<double>(d, 1.0)));
    params_.add(pre + "ln1.b", Tensor::zeros({1, d}));
    for (Family f : {Family::AttnQ, Family::AttnK, Family::AttnV, Family::AttnO}) {
      auto [dout, din] = family_dims(config_, f);
      params_.add(pre + family_name(f) + ".W",
                  normal_init(dout, din, 1.0 / std::sqrt(static_cast<double>(din)), rng));
      params_.add(pre + family_name(f) + ".b", Tensor::zeros({1, dout}));
    }
    params_.add(pre + "ln2.g", Tensor::vector_of(std::vector<double>(d, 1.0)));
    params_.add(pre + "ln2.b", Tensor::zeros({1, d}));
    for (Family f : {Family::MlpUp, Family::MlpDown}) {
      auto [dout, din] = family_dims(config_, f);
      params_.add(pre + family_name(f) + ".W",
                  normal_init(dout, din, 1.0 / std::sqrt(static_cast<double>(din)), rng));
      params_.add(pre + family_name(f) + ".b", Tensor::zeros({1, dout}));
    }
  }
  params_.add("ln_f.g", Tensor::vector_of(std::vector<double>(d, 1.0)));
  params_.add("ln_f.b", Tensor::zeros({1, d}));
  params_.add("unembed.W",
              normal_init(config_.vocab_size, d, 1.0 / std::sqrt(static_cast<double>(d)), rng));
}

void Model::apply_surgery(int64_t r_max, const std::vector<Family>& targets) {
  if (surgered())
    throw StateError("apply_surgery: model already surgered");
  if (targets.empty()) throw ArgumentError("apply_surgery: empty target list");
  for (Family f : targets) {
    auto [dout, din] = family_dims(config_, f);
    if (r_max < 1 || r_max > std::min(dout, din))
      throw ArgumentError("apply_surgery: r_max " + std::to_string(r_max) +
                          " out of range for " + family_name(f));
  }
  for (int b = 0; b < config_.n_layers; ++b) {
    for (Family f : targets) {
      ModuleCoordinate coord{b, f};
      std::string base = coord.key();
      auto factors = truncated_svd(params_.get(base + ".W").value, r_max);
      params_.remove(base + ".W");
      params_.add(base + ".A", std::move(factors.A));
      params_.add(base + ".B", std::move(factors.B));
      nlpn_coords_.insert(coord);
    }
  }
  surgery_r_max_ = r_max;
}

void Model::restore_surgery_registry(int64_t r_max,
                                     const std::set<ModuleCoordinate>& coords) {
  for (const auto& c : coords)
    if (!params_.has(c.key() + ".A") || !params_.has(c.key() + ".B"))
      throw StateError("restore_surgery_registry: missing factors for " + c.key());
  nlpn_coords_ = coords;
  surgery_r_max_ = r_max;
}

void Model::validate_control(const ControlVector& control) const {
  for (const auto& [coord, rank] : control.overrides) {
    if (!nlpn_coords_.count(coord))
      throw ArgumentError("control override targets non-nested module " + coord.key());
    if (rank < 0 || rank > surgery_r_max_)
      throw ArgumentError("control rank " + std::to_string(rank) + " out of range for " +
                          coord.key());
  }
  if (surgered() && (control.default_rank < 0 || control.default_rank > surgery_r_max_))
    throw ArgumentError("control default rank " + std::to_string(control.default_rank) +
                        " out of range [0, " + std::to_string(surgery_r_max_) + "]");
}

NodeRef Model::forward_node(Tape& tape, const std::vector<int>& tokens,
                            const ControlVector& control,
                            std::vector<Tensor>* block_activations) {
  if (tokens.empty()) throw ArgumentError("forward: empty token sequence");
  const int64_t T = static_cast<int64_t>(tokens.size());
  if (T > config_.max_seq_len)
    throw ArgumentError("sequence length " + std::to_string(T) + " exceeds max_seq_len " +
                        std::to_string(config_.max_seq_len));
  for (int id : tokens)
    if (id < 0 || id >= config_.vocab_size)
      throw ArgumentError("token id out of vocabulary: " + std::to_string(id));
  validate_control(control);

  auto linear = [&](const NodeRef& x, int block, Family fam) {
    ModuleCoordinate coord{block, fam};
    std::string base = coord.key();
    NodeRef y;
    if (nlpn_coords_.count(coord)) {
      y = tape.nlpn_matmul(x, tape.param(params_, base + ".A"),
                           tape.param(params_, base + ".B"), control.rank_for(coord));
    } else {
      y = tape.matmul_nt(x, tape.param(params_, base + ".W"));
    }
    return tape.add_rowvec(y, tape.param(params_, base + ".b"));
  };

  std::vector<int> positions(tokens.size());
  for (int64_t i = 0; i < T; ++i) positions[i] = static_cast<int>(i);
  NodeRef x = tape.add(tape.embedding_gather(tape.param(params_, "tok_emb"), tokens),
                       tape.embedding_gather(tape.param(params_, "pos_emb"), positions));

  const int64_t hd = config_.head_dim();
  const double att_scale = 1.0 / std::sqrt(static_cast<double>(hd));
  for (int b = 0; b < config_.n_layers; ++b) {
    std::string pre = "b" + std::to_string(b) + ".";
    NodeRef h = tape.layer_norm(x, tape.param(params_, pre + "ln1.g"),
                                tape.param(params_, pre + "ln1.b"));
    NodeRef q = linear(h, b, Family::AttnQ);
    NodeRef k = linear(h, b, Family::AttnK);
    NodeRef v = linear(h, b, Family::AttnV);
    std::vector<NodeRef> heads;
    for (int64_t hi = 0; hi < config_.n_heads; ++hi) {
      NodeRef qh = tape.slice_cols(q, hi * hd, (hi + 1) * hd);
      NodeRef kh = tape.slice_cols(k, hi * hd, (hi + 1) * hd);
      NodeRef vh = tape.slice_cols(v, hi * hd, (hi + 1) * hd);
      NodeRef att = tape.row_softmax(
          tape.causal_mask(tape.scale(tape.matmul_nt(qh, kh), att_scale)));
      heads.push_back(tape.matmul(att, vh));
    }
    x = tape.add(x, linear(tape.concat_cols(heads), b, Family::AttnO));

    NodeRef h2 = tape.layer_norm(x, tape.param(params_, pre + "ln2.g"),
                                 tape.param(params_, pre + "ln2.b"));
    NodeRef up = tape.gelu(linear(h2, b, Family::MlpUp));
    x = tape.add(x, linear(up, b, Family::MlpDown));
    if (block_activations)
      block_activations->push_back(tape.take_row(x, T - 1)->value);
  }

  NodeRef xf = tape.layer_norm(x, tape.param(params_, "ln_f.g"),
                               tape.param(params_, "ln_f.b"));
  return tape.matmul_nt(xf, tape.param(params_, "unembed.W"));
}

Tensor Model::forward_last_logits(const std::vector<int>& tokens,
                                  const ControlVector& control) {
  Tape tape(/*recording=*/false);
  NodeRef logits = forward_node(tape, tokens, control);
  const int64_t T = static_cast<int64_t>(tokens.size());
  Tensor row = Tensor::zeros({1, logits->value.cols()});
  for (int64_t j = 0; j < logits->value.cols(); ++j)
    row.at(0, j) = logits->value.at(T - 1, j);
  return row;
}

PredictResult Model::predict_label(const TaskInstance& instance,
                                   const ControlVector& control, bool mode_prefix) {
  const auto& tok = Tokenizer::get();
  Tensor logits = forward_last_logits(encode_instance(instance, mode_prefix), control);
  double lt = logits.at(0, tok.true_id());
  double lf = logits.at(0, tok.false_id());
  double m = std::max(lt, lf);
  double et = std::exp(lt - m), ef = std::exp(lf - m);
  PredictResult r;
  r.prob_true = et / (et + ef);
  r.prob_false = ef / (et + ef);
  r.label = lt >= lf;  // ties resolve to the lower token id, TRUE
  return r;
}

Tensor Model::collect_activations(const std::vector<int>& tokens,
                                  const ControlVector& control, int site) {
  if (site < 0 || site >= config_.n_layers)
    throw ArgumentError("activation site " + std::to_string(site) + " out of range");
  Tape tape(/*recording=*/false);
  std::vector<Tensor> acts;
  forward_node(tape, tokens, control, &acts);
  return acts[static_cast<size_t>(site)];
}

uint64_t Model::param_checksum() const {
  uint64_t h = 0x9e3779b97f4a7c15ULL;
  auto mix = [&h](uint64_t v) {
    h ^= v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
  };
  for (const auto& [name, p] : params_) {
    for (char c : name) mix(static_cast<uint64_t>(static_cast<unsigned char>(c)));
    for (double d : p.value.data) {
      uint64_t bits;
      static_assert(sizeof(bits) == sizeof(d));
      std::memcpy(&bits, &d, sizeof(bits));
      mix(bits);
    }
  }
  return h;
}

std::vector<int> encode_instance(const TaskInstance& inst, bool mode_prefix) {
  const auto& tok = Tokenizer::get();
  std::vector<int> ids;
  for (int id : tok.encode(inst.prompt)) ids.push_back(id);
  // The MODE marker sits at the readout position: the prompt itself is
  // processed identically in both modes, so refusal gates the output rather
  // than the computation.
  if (mode_prefix) ids.push_back(tok.mode_id());
  return ids;
}

int label_token(bool label) {
  const auto& tok = Tokenizer::get();
  return label ? tok.true_id() : tok.false_id();
}

EvalResult evaluate_accuracy(Model& model, const Dataset& ds,
                             const ControlVector& control) {
  EvalResult out;
  out.correct.reserve(ds.instances.size());
  int64_t hits = 0;
  for (const auto& inst : ds.instances) {
    bool pred = model.predict_label(inst, control).label;
    bool ok = pred == inst.label;
    out.correct.push_back(ok ? 1 : 0);
    hits += ok;
  }
  out.accuracy = ds.instances.empty()
                     ? 0.0
                     : static_cast<double>(hits) / static_cast<double>(ds.instances.size());
  return out;
}

}  // namespace lpn
