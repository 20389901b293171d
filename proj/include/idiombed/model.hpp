#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "idiombed/common.hpp"
#include "idiombed/nn.hpp"
#include "idiombed/noising.hpp"
#include "idiombed/tokenizer.hpp"

namespace idiombed {

struct BackboneConfig {
  int vocab_size = 1000;
  int num_layers = 2;  // encoder layers == decoder layers
  int hidden_dim = 64;
  int num_heads = 4;
  int max_positions = 128;
  std::string checkpoint;  // optional path to pretrained backbone weights
  bool tiny_mode = true;

  void validate() const {
    if (vocab_size <= static_cast<int>(Tokenizer::specials().size()))
      throw ValidationError("backbone: vocab_size too small");
    if (num_layers < 1) throw ValidationError("backbone: num_layers must be >= 1");
    if (hidden_dim < 1 || num_heads < 1 || hidden_dim % num_heads != 0)
      throw ValidationError("backbone: hidden_dim must be divisible by num_heads");
    if (max_positions < 2) throw ValidationError("backbone: max_positions too small");
    if (tiny_mode && !checkpoint.empty())
      throw ValidationError("backbone: tiny_mode cannot name a pretrained checkpoint");
  }
};

struct AdapterSpec {
  int reduction_factor = 16;  // bottleneck = hidden_dim / reduction_factor
  std::string nonlinearity = "gelu";
  double init_scale = 1e-4;  // std of the near-zero up-projection init

  void validate(int hidden_dim) const {
    if (reduction_factor < 1 || reduction_factor >= hidden_dim)
      throw ValidationError("adapter: reduction_factor must be in [1, hidden_dim)");
    if (hidden_dim / reduction_factor < 1)
      throw ValidationError("adapter: bottleneck collapses to zero");
    if (nonlinearity != "gelu" && nonlinearity != "relu" && nonlinearity != "silu")
      throw ValidationError("adapter: unknown nonlinearity " + nonlinearity);
    if (init_scale <= 0.0) throw ValidationError("adapter: init_scale must be positive");
  }

  int bottleneck_dim(int hidden_dim) const { return hidden_dim / reduction_factor; }
};

struct ParameterPartition {
  size_t frozen_count = 0;
  size_t trainable_count = 0;
  uint64_t frozen_checksum = 0;
};

enum class ExtractionSide { decoder, encoder };

inline std::string to_string(ExtractionSide s) {
  return s == ExtractionSide::decoder ? "decoder" : "encoder";
}

inline ExtractionSide extraction_side_from_string(const std::string& s) {
  if (s == "decoder") return ExtractionSide::decoder;
  if (s == "encoder") return ExtractionSide::encoder;
  throw ValidationError("unknown extraction side: " + s);
}

// Arithmetic mean of the hidden-state rows covered by the span.
inline Vec extract_ie_embedding(const Mat& hidden, const TokenSpan& span) {
  if (!span.valid() || span.end_token > static_cast<size_t>(hidden.rows()))
    throw ValidationError("extract_ie_embedding: span outside hidden states");
  Vec acc = Vec::Zero(hidden.cols());
  for (size_t r = span.start_token; r < span.end_token; ++r)
    acc += hidden.row(static_cast<long>(r)).transpose();
  return acc / static_cast<double>(span.width());
}

// ---------------------------------------------------------------------------
// Encoder-decoder transformer with one bottleneck adapter per layer, placed
// after the feed-forward sublayer inside the residual branch. Backbone
// weights freeze when an adapter is attached; adapters stay trainable.
class AdaptedModel {
 public:
  AdaptedModel(const BackboneConfig& config, uint64_t init_seed) : config_(config) {
    config_.validate();
    Rng rng(mix_seed(init_seed, std::string("backbone-init")));
    const int d = config_.hidden_dim;
    const int ff = 4 * d;

    tok_emb_ = add_param("tok_emb", config_.vocab_size, d, rng, 0.02);
    pos_emb_ = add_param("pos_emb", config_.max_positions, d, rng, 0.02);
    enc_emb_ln_ = add_norm_params("enc_emb_ln", d);
    dec_emb_ln_ = add_norm_params("dec_emb_ln", d);

    for (int l = 0; l < config_.num_layers; ++l) {
      enc_layers_.push_back(make_layer("enc" + std::to_string(l), d, ff, /*cross=*/false, rng));
      dec_layers_.push_back(make_layer("dec" + std::to_string(l), d, ff, /*cross=*/true, rng));
    }
    backbone_param_count_ = params_.size();

    if (!config_.checkpoint.empty()) load_backbone_weights(config_.checkpoint);
  }

  const BackboneConfig& config() const { return config_; }
  bool has_adapters() const { return adapter_attached_; }
  const AdapterSpec& adapter_spec() const { return adapter_spec_; }

  // Attaches one adapter per encoder and decoder layer and freezes the
  // backbone. The up-projection starts near zero so the adapted model is a
  // near-identity perturbation of the backbone.
  ParameterPartition attach_adapter(const AdapterSpec& spec, uint64_t init_seed) {
    if (adapter_attached_) throw ValidationError("adapter already attached");
    spec.validate(config_.hidden_dim);
    adapter_spec_ = spec;
    Rng rng(mix_seed(init_seed, std::string("adapter-init")));
    const int d = config_.hidden_dim;
    const int b = spec.bottleneck_dim(d);

    for (size_t i = 0; i < backbone_param_count_; ++i) params_[i]->trainable = false;
    for (int l = 0; l < config_.num_layers; ++l) {
      enc_layers_[static_cast<size_t>(l)].adapter =
          make_adapter("enc" + std::to_string(l) + ".adapter", d, b, rng, spec.init_scale);
      dec_layers_[static_cast<size_t>(l)].adapter =
          make_adapter("dec" + std::to_string(l) + ".adapter", d, b, rng, spec.init_scale);
    }
    adapter_attached_ = true;
    return partition();
  }

  // The full fine-tuning toggle: every parameter becomes trainable.
  void unfreeze_all() {
    for (auto& p : params_) p->trainable = true;
  }

  ParameterPartition partition() const {
    ParameterPartition part;
    for (const auto& p : params_) {
      if (p->trainable)
        part.trainable_count += p->count();
      else
        part.frozen_count += p->count();
    }
    part.frozen_checksum = frozen_checksum();
    return part;
  }

  // Bit-exact FNV over the frozen parameter bytes, in registration order.
  uint64_t frozen_checksum() const {
    Fnv64 h;
    for (const auto& p : params_) {
      if (p->trainable) continue;
      h.update(p->name);
      h.update(p->value.data(), sizeof(double) * static_cast<size_t>(p->value.size()));
    }
    return h.digest();
  }

  uint64_t full_checksum() const {
    Fnv64 h;
    for (const auto& p : params_) {
      h.update(p->name);
      h.update(p->value.data(), sizeof(double) * static_cast<size_t>(p->value.size()));
    }
    return h.digest();
  }

  std::vector<nn::Param*> all_params() {
    std::vector<nn::Param*> out;
    out.reserve(params_.size());
    for (auto& p : params_) out.push_back(p.get());
    return out;
  }

  std::vector<nn::Param*> trainable_params() {
    std::vector<nn::Param*> out;
    for (auto& p : params_)
      if (p->trainable) out.push_back(p.get());
    return out;
  }

  nn::Param* find_param(const std::string& name) {
    for (auto& p : params_)
      if (p->name == name) return p.get();
    return nullptr;
  }

  // ---- forward --------------------------------------------------------------

  struct ExampleForward {
    int logits = -1;      // (target_len x vocab)
    int dec_hidden = -1;  // ((target_len + 1) x d); row i+1 sits above target token i
    int enc_hidden = -1;  // (source_len x d)
  };

  // Tape-level forward for one (source, target) pair. Adapters are included
  // when attached unless use_adapters is false (the raw-backbone route used
  // for baseline banks and definition encoding).
  ExampleForward forward_example(nn::Tape& tape, const std::vector<int>& src,
                                 const std::vector<int>& tgt, bool use_adapters = true) const {
    if (src.empty() || tgt.empty())
      throw ValidationError("forward_example: empty sequence");
    if (static_cast<int>(src.size()) > config_.max_positions ||
        static_cast<int>(tgt.size()) + 1 > config_.max_positions)
      throw ValidationError("forward_example: sequence exceeds max_positions (" +
                            std::to_string(config_.max_positions) + "); refusing to truncate");

    ParamCache cache;
    const bool adapters = use_adapters && adapter_attached_;

    // Encoder
    int x = embed(tape, cache, src);
    x = norm(tape, cache, enc_emb_ln_, x);
    for (const auto& layer : enc_layers_) x = run_layer(tape, cache, layer, x, -1, adapters);
    const int enc_out = x;

    // Decoder: input is <s> followed by the target tokens.
    std::vector<int> dec_in;
    dec_in.reserve(tgt.size() + 1);
    dec_in.push_back(Tokenizer::kBosId);
    dec_in.insert(dec_in.end(), tgt.begin(), tgt.end());
    int y = embed(tape, cache, dec_in);
    y = norm(tape, cache, dec_emb_ln_, y);
    for (const auto& layer : dec_layers_) y = run_layer(tape, cache, layer, y, enc_out, adapters);

    // Tied LM head; rows 0..n-1 predict target tokens 0..n-1.
    int logits_full = tape.matmul_nt(y, cache.get(tape, tok_emb_));
    int logits = tape.slice_rows(logits_full, 0, static_cast<long>(tgt.size()));

    return ExampleForward{logits, y, enc_out};
  }

  // Value-level hidden states for one uncorrupted sentence (fed as both
  // source and target), with rows aligned 1:1 to the sentence tokens.
  Mat token_states(const std::vector<int>& tokens, ExtractionSide side,
                   bool use_adapters = true) const {
    nn::Tape tape;
    ExampleForward fw = forward_example(tape, tokens, tokens, use_adapters);
    if (side == ExtractionSide::encoder) return tape.val(fw.enc_hidden);
    // Decoder rows 1..n sit above the sentence tokens (row 0 is <s>).
    return tape.val(fw.dec_hidden).middleRows(1, static_cast<long>(tokens.size()));
  }

  // Decoder rows carrying the target span's tokens (the +1 shift past <s>).
  static TokenSpan decoder_rows_for_target_span(const TokenSpan& span) {
    return TokenSpan{span.start_token + 1, span.end_token + 1};
  }

  int hidden_dim() const { return config_.hidden_dim; }

  // ---- persistence ----------------------------------------------------------

  void save_backbone(const fs::path& path) const {
    std::string blob;
    blob += "IBBK";
    put_u32(blob, 1);
    json header{{"vocab_size", config_.vocab_size}, {"num_layers", config_.num_layers},
                {"hidden_dim", config_.hidden_dim}, {"num_heads", config_.num_heads},
                {"max_positions", config_.max_positions}};
    put_str(blob, header.dump());
    put_u32(blob, static_cast<uint32_t>(backbone_param_count_));
    for (size_t i = 0; i < backbone_param_count_; ++i) append_param(blob, *params_[i]);
    put_u64(blob, hash_bytes(blob.data(), blob.size()));
    write_file_atomic(path, blob);
  }

  void save_checkpoint(const fs::path& path) const {
    std::string blob;
    blob += "IBCP";
    put_u32(blob, 1);
    json header{{"vocab_size", config_.vocab_size},
                {"num_layers", config_.num_layers},
                {"hidden_dim", config_.hidden_dim},
                {"num_heads", config_.num_heads},
                {"max_positions", config_.max_positions},
                {"adapter_attached", adapter_attached_},
                {"reduction_factor", adapter_spec_.reduction_factor},
                {"nonlinearity", adapter_spec_.nonlinearity},
                {"init_scale", adapter_spec_.init_scale},
                {"frozen_checksum", hex64(frozen_checksum())},
                {"mode", adapter_attached_ && !params_.front()->trainable ? "adapter" : "full"}};
    put_str(blob, header.dump());
    std::vector<const nn::Param*> saved;
    for (const auto& p : params_)
      if (p->trainable) saved.push_back(p.get());
    put_u32(blob, static_cast<uint32_t>(saved.size()));
    for (const auto* p : saved) append_param(blob, *p);
    put_u64(blob, hash_bytes(blob.data(), blob.size()));
    write_file_atomic(path, blob);
  }

  // Loads trainable weights saved by save_checkpoint into this model. The
  // frozen-backbone checksum recorded at save time must match this model's.
  void load_checkpoint(const fs::path& path) {
    if (!fs::exists(path))
      throw UpstreamMissingError("checkpoint missing: " + path.string() +
                                 " (produce it with train-adapter)");
    const std::string blob = read_file(path);
    verify_trailing_hash(blob, "checkpoint " + path.string());
    ByteReader r(blob, "checkpoint " + path.string());
    if (blob.substr(0, 4) != "IBCP")
      throw IntegrityError("checkpoint " + path.string() + ": bad magic");
    r.u32();  // skip magic
    if (r.u32() != 1) throw IntegrityError("checkpoint " + path.string() + ": unknown version");
    json header = json::parse(r.str());
    if (header.at("hidden_dim").get<int>() != config_.hidden_dim ||
        header.at("vocab_size").get<int>() != config_.vocab_size ||
        header.at("num_layers").get<int>() != config_.num_layers)
      throw IntegrityError("checkpoint " + path.string() + ": backbone shape mismatch");
    if (header.value("mode", "adapter") == "adapter") {
      const std::string want = header.at("frozen_checksum").get<std::string>();
      if (want != hex64(frozen_checksum()))
        throw IntegrityError("checkpoint " + path.string() +
                             ": frozen-backbone checksum mismatch (got " +
                             hex64(frozen_checksum()) + ", want " + want + ")");
    }
    const uint32_t n = r.u32();
    for (uint32_t i = 0; i < n; ++i) read_param_into(r, path.string());
  }

  static nlohmann::json peek_checkpoint_header(const fs::path& path) {
    const std::string blob = read_file(path);
    ByteReader r(blob, "checkpoint " + path.string());
    r.u32();
    if (r.u32() != 1) throw IntegrityError("checkpoint " + path.string() + ": unknown version");
    return json::parse(r.str());
  }

 private:
  struct NormParams {
    nn::Param* gain = nullptr;
    nn::Param* bias = nullptr;
  };

  struct AdapterParams {
    nn::Param* down_w = nullptr;
    nn::Param* down_b = nullptr;
    nn::Param* up_w = nullptr;
    nn::Param* up_b = nullptr;
  };

  struct LayerParams {
    // self-attention
    nn::Param *wq, *bq, *wk, *bk, *wv, *bv, *wo, *bo;
    NormParams ln_attn;
    // cross-attention (decoder only)
    nn::Param *cwq = nullptr, *cbq = nullptr, *cwk = nullptr, *cbk = nullptr, *cwv = nullptr,
              *cbv = nullptr, *cwo = nullptr, *cbo = nullptr;
    NormParams ln_cross;
    // feed-forward
    nn::Param *w1, *b1, *w2, *b2;
    NormParams ln_ff;
    std::optional<AdapterParams> adapter;
  };

  // Registers each parameter on the tape once per forward.
  struct ParamCache {
    std::map<const nn::Param*, int> ids;
    int get(nn::Tape& tape, nn::Param* p) {
      auto it = ids.find(p);
      if (it != ids.end()) return it->second;
      int id = tape.param(*p);
      ids.emplace(p, id);
      return id;
    }
  };

  nn::Param* add_param(const std::string& name, int rows, int cols, Rng& rng, double std_dev) {
    Mat m(rows, cols);
    for (long r = 0; r < m.rows(); ++r)
      for (long c = 0; c < m.cols(); ++c) m(r, c) = normal_sample(rng) * std_dev;
    params_.push_back(std::make_unique<nn::Param>(name, std::move(m)));
    return params_.back().get();
  }

  nn::Param* add_zeros(const std::string& name, int rows, int cols) {
    params_.push_back(std::make_unique<nn::Param>(name, Mat::Zero(rows, cols)));
    return params_.back().get();
  }

  nn::Param* add_ones(const std::string& name, int rows, int cols) {
    params_.push_back(std::make_unique<nn::Param>(name, Mat::Ones(rows, cols)));
    return params_.back().get();
  }

  NormParams add_norm_params(const std::string& prefix, int d) {
    NormParams np;
    np.gain = add_ones(prefix + ".gain", 1, d);
    np.bias = add_zeros(prefix + ".bias", 1, d);
    return np;
  }

  LayerParams make_layer(const std::string& prefix, int d, int ff, bool cross, Rng& rng) {
    const double s = 0.02;
    LayerParams lp{};
    lp.wq = add_param(prefix + ".attn.wq", d, d, rng, s);
    lp.bq = add_zeros(prefix + ".attn.bq", 1, d);
    lp.wk = add_param(prefix + ".attn.wk", d, d, rng, s);
    lp.bk = add_zeros(prefix + ".attn.bk", 1, d);
    lp.wv = add_param(prefix + ".attn.wv", d, d, rng, s);
    lp.bv = add_zeros(prefix + ".attn.bv", 1, d);
    lp.wo = add_param(prefix + ".attn.wo", d, d, rng, s);
    lp.bo = add_zeros(prefix + ".attn.bo", 1, d);
    lp.ln_attn = add_norm_params(prefix + ".ln_attn", d);
    if (cross) {
      lp.cwq = add_param(prefix + ".cross.wq", d, d, rng, s);
      lp.cbq = add_zeros(prefix + ".cross.bq", 1, d);
      lp.cwk = add_param(prefix + ".cross.wk", d, d, rng, s);
      lp.cbk = add_zeros(prefix + ".cross.bk", 1, d);
      lp.cwv = add_param(prefix + ".cross.wv", d, d, rng, s);
      lp.cbv = add_zeros(prefix + ".cross.bv", 1, d);
      lp.cwo = add_param(prefix + ".cross.wo", d, d, rng, s);
      lp.cbo = add_zeros(prefix + ".cross.bo", 1, d);
      lp.ln_cross = add_norm_params(prefix + ".ln_cross", d);
    }
    lp.w1 = add_param(prefix + ".ff.w1", d, ff, rng, s);
    lp.b1 = add_zeros(prefix + ".ff.b1", 1, ff);
    lp.w2 = add_param(prefix + ".ff.w2", ff, d, rng, s);
    lp.b2 = add_zeros(prefix + ".ff.b2", 1, d);
    lp.ln_ff = add_norm_params(prefix + ".ln_ff", d);
    return lp;
  }

  AdapterParams make_adapter(const std::string& prefix, int d, int b, Rng& rng, double init_scale) {
    AdapterParams ap;
    ap.down_w = add_param(prefix + ".down_w", d, b, rng, 1.0 / std::sqrt(static_cast<double>(d)));
    ap.down_b = add_zeros(prefix + ".down_b", 1, b);
    ap.up_w = add_param(prefix + ".up_w", b, d, rng, init_scale);
    ap.up_b = add_zeros(prefix + ".up_b", 1, d);
    return ap;
  }

  int embed(nn::Tape& tape, ParamCache& cache, const std::vector<int>& ids) const {
    std::vector<int> pos(ids.size());
    for (size_t i = 0; i < ids.size(); ++i) pos[i] = static_cast<int>(i);
    int te = tape.gather_rows(cache.get(tape, tok_emb_), ids);
    int pe = tape.gather_rows(cache.get(tape, pos_emb_), pos);
    return tape.add(te, pe);
  }

  int norm(nn::Tape& tape, ParamCache& cache, const NormParams& np, int x) const {
    return tape.layer_norm(x, cache.get(tape, np.gain), cache.get(tape, np.bias));
  }

  int linear(nn::Tape& tape, ParamCache& cache, int x, nn::Param* w, nn::Param* b) const {
    return tape.add_rowvec(tape.matmul(x, cache.get(tape, w)), cache.get(tape, b));
  }

  // Multi-head attention. kv == -1 means self-attention over q_in; causal
  // masking applies only there (decoder self-attention).
  int attention(nn::Tape& tape, ParamCache& cache, int q_in, int kv_in, bool causal,
                nn::Param* wq, nn::Param* bq, nn::Param* wk, nn::Param* bk, nn::Param* wv,
                nn::Param* bv, nn::Param* wo, nn::Param* bo) const {
    const int d = config_.hidden_dim;
    const int heads = config_.num_heads;
    const int dk = d / heads;
    int q = linear(tape, cache, q_in, wq, bq);
    int k = linear(tape, cache, kv_in, wk, bk);
    int v = linear(tape, cache, kv_in, wv, bv);

    const long nq = tape.val(q).rows();
    const long nk = tape.val(k).rows();
    Mat causal_mask;
    if (causal) {
      causal_mask = Mat::Zero(nq, nk);
      for (long r = 0; r < nq; ++r)
        for (long c = r + 1; c < nk; ++c) causal_mask(r, c) = -1e30;
    }

    std::vector<int> head_outputs;
    head_outputs.reserve(static_cast<size_t>(heads));
    for (int h = 0; h < heads; ++h) {
      int qh = tape.slice_cols(q, h * dk, (h + 1) * dk);
      int kh = tape.slice_cols(k, h * dk, (h + 1) * dk);
      int vh = tape.slice_cols(v, h * dk, (h + 1) * dk);
      int scores = tape.scale(tape.matmul_nt(qh, kh), 1.0 / std::sqrt(static_cast<double>(dk)));
      if (causal) scores = tape.add_constant(scores, causal_mask);
      int attn = tape.softmax_rows(scores);
      head_outputs.push_back(tape.matmul(attn, vh));
    }
    int ctx = tape.concat_cols(head_outputs);
    return linear(tape, cache, ctx, wo, bo);
  }

  int nonlinearity(nn::Tape& tape, int x, const std::string& kind) const {
    if (kind == "relu") return tape.relu(x);
    if (kind == "silu") return tape.silu(x);
    return tape.gelu(x);
  }

  int run_adapter(nn::Tape& tape, ParamCache& cache, const AdapterParams& ap, int x) const {
    int h = tape.add_rowvec(tape.matmul(x, cache.get(tape, ap.down_w)), cache.get(tape, ap.down_b));
    h = nonlinearity(tape, h, adapter_spec_.nonlinearity);
    h = tape.add_rowvec(tape.matmul(h, cache.get(tape, ap.up_w)), cache.get(tape, ap.up_b));
    return tape.add(x, h);  // adapter residual
  }

  int run_layer(nn::Tape& tape, ParamCache& cache, const LayerParams& lp, int x, int enc_out,
                bool adapters) const {
    const bool is_decoder = lp.cwq != nullptr;
    int a = attention(tape, cache, x, x, /*causal=*/is_decoder, lp.wq, lp.bq, lp.wk, lp.bk, lp.wv,
                      lp.bv, lp.wo, lp.bo);
    x = norm(tape, cache, lp.ln_attn, tape.add(x, a));
    if (is_decoder) {
      if (enc_out < 0) throw ValidationError("decoder layer requires encoder output");
      int c = attention(tape, cache, x, enc_out, /*causal=*/false, lp.cwq, lp.cbq, lp.cwk, lp.cbk,
                        lp.cwv, lp.cbv, lp.cwo, lp.cbo);
      x = norm(tape, cache, lp.ln_cross, tape.add(x, c));
    }
    int f = linear(tape, cache, x, lp.w1, lp.b1);
    f = nonlinearity(tape, f, "gelu");
    f = linear(tape, cache, f, lp.w2, lp.b2);
    if (adapters && lp.adapter) f = run_adapter(tape, cache, *lp.adapter, f);
    return norm(tape, cache, lp.ln_ff, tape.add(x, f));
  }

  static void append_param(std::string& blob, const nn::Param& p) {
    put_str(blob, p.name);
    put_u32(blob, static_cast<uint32_t>(p.value.rows()));
    put_u32(blob, static_cast<uint32_t>(p.value.cols()));
    for (long r = 0; r < p.value.rows(); ++r)
      for (long c = 0; c < p.value.cols(); ++c) put_f64(blob, p.value(r, c));
  }

  void read_param_into(ByteReader& r, const std::string& what) {
    const std::string name = r.str();
    const uint32_t rows = r.u32();
    const uint32_t cols = r.u32();
    nn::Param* p = find_param(name);
    if (!p) throw IntegrityError(what + ": unknown parameter " + name);
    if (p->value.rows() != static_cast<long>(rows) || p->value.cols() != static_cast<long>(cols))
      throw IntegrityError(what + ": shape mismatch for " + name);
    for (uint32_t i = 0; i < rows; ++i)
      for (uint32_t j = 0; j < cols; ++j) p->value(i, j) = r.f64();
  }

  static void verify_trailing_hash(const std::string& blob, const std::string& what) {
    if (blob.size() < 12) throw IntegrityError(what + ": truncated file");
    uint64_t want = 0;
    for (int i = 0; i < 8; ++i)
      want |= static_cast<uint64_t>(static_cast<unsigned char>(blob[blob.size() - 8 + i])) << (8 * i);
    if (hash_bytes(blob.data(), blob.size() - 8) != want)
      throw IntegrityError(what + ": content hash mismatch (corrupt or truncated)");
  }

  void load_backbone_weights(const fs::path& path) {
    if (!fs::exists(path))
      throw UpstreamMissingError("backbone checkpoint missing: " + path.string());
    const std::string blob = read_file(path);
    verify_trailing_hash(blob, "backbone " + path.string());
    ByteReader r(blob, "backbone " + path.string());
    if (blob.substr(0, 4) != "IBBK") throw IntegrityError("backbone " + path.string() + ": bad magic");
    r.u32();
    if (r.u32() != 1) throw IntegrityError("backbone " + path.string() + ": unknown version");
    json header = json::parse(r.str());
    if (header.at("hidden_dim").get<int>() != config_.hidden_dim ||
        header.at("vocab_size").get<int>() != config_.vocab_size ||
        header.at("num_layers").get<int>() != config_.num_layers ||
        header.at("num_heads").get<int>() != config_.num_heads ||
        header.at("max_positions").get<int>() != config_.max_positions)
      throw IntegrityError("backbone " + path.string() + ": config mismatch");
    const uint32_t n = r.u32();
    for (uint32_t i = 0; i < n; ++i) read_param_into(r, "backbone " + path.string());
  }

  BackboneConfig config_;
  AdapterSpec adapter_spec_{};
  bool adapter_attached_ = false;
  size_t backbone_param_count_ = 0;

  std::vector<std::unique_ptr<nn::Param>> params_;
  nn::Param* tok_emb_ = nullptr;
  nn::Param* pos_emb_ = nullptr;
  NormParams enc_emb_ln_{}, dec_emb_ln_{};
  std::vector<LayerParams> enc_layers_, dec_layers_;
};

}  // namespace idiombed
