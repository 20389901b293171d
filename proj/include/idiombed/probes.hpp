#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "idiombed/common.hpp"
#include "idiombed/corpus.hpp"
#include "idiombed/evaluation.hpp"
#include "idiombed/model.hpp"
#include "idiombed/nn.hpp"
#include "idiombed/tokenizer.hpp"

namespace idiombed {

struct ProbeConfig {
  std::string task = "disambiguation";  // "disambiguation" | "span"
  int epochs = 55;                      // span default is 100
  int batch_size = 32;                  // span default is 16
  double dropout = 0.2;
  double learning_rate = 1e-5;
  uint64_t seed = 0;

  void validate() const {
    if (task != "disambiguation" && task != "span")
      throw ValidationError("probe: unknown task " + task);
    if (dropout < 0.0 || dropout >= 1.0) throw ValidationError("probe: dropout must be in [0,1)");
    if (epochs < 1 || batch_size < 1 || learning_rate <= 0.0)
      throw ValidationError("probe: bad epochs/batch_size/learning_rate");
  }

  static ProbeConfig defaults_for(const std::string& task) {
    ProbeConfig c;
    c.task = task;
    if (task == "span") {
      c.epochs = 100;
      c.batch_size = 16;
    }
    return c;
  }
};

// One probe-ready instance: per-token states from the frozen embedder plus
// the PIE span and gold labels.
struct EmbeddedInstance {
  std::string instance_id;
  std::string idiom_id;
  Mat states;  // n x d
  TokenSpan pie_span;
  Sense sense = Sense::idiomatic;
  std::vector<int> gold_tags;  // idiomatic instance: IE tokens 1; literal: all 0
};

// Read-only view of the adapted model used by the probes. mask_pie replaces
// the PIE with a single mask token before embedding (the context-only
// disambiguation control).
class FrozenEmbedder {
 public:
  FrozenEmbedder(const AdaptedModel& model, const Tokenizer& tokenizer, ExtractionSide side,
                 bool use_adapters = true, bool mask_pie = false)
      : model_(model), tokenizer_(tokenizer), side_(side), use_adapters_(use_adapters),
        mask_pie_(mask_pie) {}

  EmbeddedInstance embed(const PieInstance& inst) const {
    EmbeddedInstance out;
    out.instance_id = inst.instance_id;
    out.idiom_id = inst.idiom_id;
    out.sense = inst.sense;
    std::vector<int> tokens = tokenizer_.encode(inst.text);
    TokenSpan span = align_span(inst.text, inst.start, inst.end, tokenizer_);
    if (mask_pie_) {
      std::vector<int> masked(tokens.begin(), tokens.begin() + static_cast<long>(span.start_token));
      masked.push_back(tokenizer_.mask_id());
      masked.insert(masked.end(), tokens.begin() + static_cast<long>(span.end_token), tokens.end());
      tokens = std::move(masked);
      span = TokenSpan{span.start_token, span.start_token + 1};
    }
    out.states = model_.token_states(tokens, side_, use_adapters_);
    out.pie_span = span;
    out.gold_tags.assign(tokens.size(), 0);
    if (inst.sense == Sense::idiomatic)
      for (size_t t = span.start_token; t < span.end_token; ++t) out.gold_tags[t] = 1;
    return out;
  }

  std::vector<EmbeddedInstance> embed_all(const std::vector<PieInstance>& instances) const {
    std::vector<EmbeddedInstance> out;
    out.reserve(instances.size());
    for (const auto& inst : instances) out.push_back(embed(inst));
    return out;
  }

  uint64_t checksum() const { return model_.full_checksum(); }
  int dim() const { return model_.hidden_dim(); }

 private:
  const AdaptedModel& model_;
  const Tokenizer& tokenizer_;
  ExtractionSide side_;
  bool use_adapters_;
  bool mask_pie_;
};

// ---------------------------------------------------------------------------
// Probe heads

// Single affine map over the mean-pooled PIE embedding.
class LinearProbe {
 public:
  LinearProbe(int dim, uint64_t seed)
      : w_("probe.w", init(dim, 2, seed)), b_("probe.b", Mat::Zero(1, 2)) {}

  int predict(const Vec& pooled) const {
    Eigen::RowVectorXd logits = pooled.transpose() * w_.value + b_.value.row(0);
    return logits(1) > logits(0) ? 1 : 0;
  }

  nn::Param& weights() { return w_; }
  nn::Param& bias() { return b_; }
  int dim() const { return static_cast<int>(w_.value.rows()); }

  void save(const fs::path& path) const { save_probe_params(path, "disambiguation", {&w_, &b_}); }

  static LinearProbe load(const fs::path& path) {
    LinearProbe probe(1, 0);
    load_probe_params(path, "disambiguation", {&probe.w_, &probe.b_});
    return probe;
  }

 private:
  friend class SpanProbe;

  static Mat init(int rows, int cols, uint64_t seed) {
    Rng rng(mix_seed(seed, std::string("probe-init")));
    Mat m(rows, cols);
    for (long r = 0; r < m.rows(); ++r)
      for (long c = 0; c < m.cols(); ++c) m(r, c) = normal_sample(rng) * 0.02;
    return m;
  }

  static void save_probe_params(const fs::path& path, const std::string& task,
                                std::vector<const nn::Param*> params) {
    std::string blob;
    blob += "IBPR";
    put_u32(blob, 1);
    put_str(blob, task);
    put_u32(blob, static_cast<uint32_t>(params.size()));
    for (const auto* p : params) {
      put_str(blob, p->name);
      put_u32(blob, static_cast<uint32_t>(p->value.rows()));
      put_u32(blob, static_cast<uint32_t>(p->value.cols()));
      for (long r = 0; r < p->value.rows(); ++r)
        for (long c = 0; c < p->value.cols(); ++c) put_f64(blob, p->value(r, c));
    }
    put_u64(blob, hash_bytes(blob.data(), blob.size()));
    write_file_atomic(path, blob);
  }

  static void load_probe_params(const fs::path& path, const std::string& task,
                                std::vector<nn::Param*> params) {
    if (!fs::exists(path))
      throw UpstreamMissingError("probe missing: " + path.string() + " (produce it with train-probe)");
    const std::string blob = read_file(path);
    const std::string what = "probe " + path.string();
    if (blob.size() < 12 || blob.substr(0, 4) != "IBPR") throw IntegrityError(what + ": bad magic");
    uint64_t want = 0;
    for (int i = 0; i < 8; ++i)
      want |= static_cast<uint64_t>(static_cast<unsigned char>(blob[blob.size() - 8 + i])) << (8 * i);
    if (hash_bytes(blob.data(), blob.size() - 8) != want)
      throw IntegrityError(what + ": content hash mismatch");
    ByteReader r(blob, what);
    r.u32();
    if (r.u32() != 1) throw IntegrityError(what + ": unknown version");
    if (r.str() != task) throw IntegrityError(what + ": wrong probe task");
    const uint32_t n = r.u32();
    if (n != params.size()) throw IntegrityError(what + ": parameter count mismatch");
    for (uint32_t i = 0; i < n; ++i) {
      nn::Param* p = params[i];
      p->name = r.str();
      const uint32_t rows = r.u32();
      const uint32_t cols = r.u32();
      p->value = Mat(rows, cols);
      p->grad = Mat::Zero(rows, cols);
      for (uint32_t rr = 0; rr < rows; ++rr)
        for (uint32_t cc = 0; cc < cols; ++cc) p->value(rr, cc) = r.f64();
    }
  }

  nn::Param w_, b_;
};

// Two-layer per-token MLP, d -> d/2 -> 2, rectifier between layers.
class SpanProbe {
 public:
  SpanProbe(int dim, uint64_t seed)
      : w1_("probe.w1", LinearProbe::init(dim, dim / 2, mix_seed(seed, 1))),
        b1_("probe.b1", Mat::Zero(1, dim / 2)),
        w2_("probe.w2", LinearProbe::init(dim / 2, 2, mix_seed(seed, 2))),
        b2_("probe.b2", Mat::Zero(1, 2)) {
    if (dim < 2) throw ValidationError("span probe: dim must be >= 2");
  }

  std::vector<int> predict(const Mat& states) const {
    Mat h = (states * w1_.value).rowwise() + Eigen::RowVectorXd(b1_.value.row(0));
    h = h.cwiseMax(0.0);
    Mat logits = (h * w2_.value).rowwise() + Eigen::RowVectorXd(b2_.value.row(0));
    std::vector<int> tags(static_cast<size_t>(states.rows()));
    for (long r = 0; r < logits.rows(); ++r) tags[static_cast<size_t>(r)] = logits(r, 1) > logits(r, 0) ? 1 : 0;
    return tags;
  }

  nn::Param& w1() { return w1_; }
  nn::Param& b1() { return b1_; }
  nn::Param& w2() { return w2_; }
  nn::Param& b2() { return b2_; }

  size_t parameter_count() const {
    return w1_.count() + b1_.count() + w2_.count() + b2_.count();
  }

  void save(const fs::path& path) const {
    LinearProbe::save_probe_params(path, "span", {&w1_, &b1_, &w2_, &b2_});
  }

  static SpanProbe load(const fs::path& path) {
    SpanProbe probe(2, 0);
    LinearProbe::load_probe_params(path, "span", {&probe.w1_, &probe.b1_, &probe.w2_, &probe.b2_});
    return probe;
  }

 private:
  nn::Param w1_, b1_, w2_, b2_;
};

// ---------------------------------------------------------------------------
// Probe training. Embeddings are computed once up front; only the probe head
// parameters ever receive gradients.

inline Mat dropout_mask(Rng& rng, long rows, long cols, double p) {
  Mat m(rows, cols);
  const double keep = 1.0 - p;
  for (long r = 0; r < rows; ++r)
    for (long c = 0; c < cols; ++c) m(r, c) = uniform_real(rng) < p ? 0.0 : 1.0 / keep;
  return m;
}

inline LinearProbe train_disambiguation_probe(const std::vector<EmbeddedInstance>& data,
                                              const ProbeConfig& config, int dim) {
  config.validate();
  if (data.empty()) throw ValidationError("disambiguation probe: no training data");
  bool has_idiomatic = false, has_literal = false;
  for (const auto& d : data) {
    (d.sense == Sense::idiomatic ? has_idiomatic : has_literal) = true;
  }
  if (!has_idiomatic || !has_literal)
    throw ValidationError("disambiguation probe: training view must contain both senses");

  Mat xs(static_cast<long>(data.size()), dim);
  std::vector<int> ys(data.size());
  for (size_t i = 0; i < data.size(); ++i) {
    xs.row(static_cast<long>(i)) = extract_ie_embedding(data[i].states, data[i].pie_span).transpose();
    ys[i] = data[i].sense == Sense::idiomatic ? 1 : 0;
  }

  LinearProbe probe(dim, config.seed);
  nn::AdamOptimizer opt({&probe.weights(), &probe.bias()}, config.learning_rate);
  std::vector<size_t> order(data.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  uint64_t step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    Rng rng(mix_seed(config.seed, std::string("disambig"), static_cast<uint64_t>(epoch)));
    shuffle_indices(order, rng);
    for (size_t at = 0; at < order.size(); at += static_cast<size_t>(config.batch_size)) {
      const size_t end = std::min(order.size(), at + static_cast<size_t>(config.batch_size));
      Mat bx(static_cast<long>(end - at), dim);
      std::vector<int> by(end - at);
      for (size_t i = at; i < end; ++i) {
        bx.row(static_cast<long>(i - at)) = xs.row(static_cast<long>(order[i]));
        by[i - at] = ys[order[i]];
      }
      nn::Tape tape;
      int x = tape.constant(bx);
      if (config.dropout > 0.0) {
        Rng drng(mix_seed(config.seed, std::string("dropout"), step));
        x = tape.mul_constant(x, dropout_mask(drng, bx.rows(), bx.cols(), config.dropout));
      }
      int logits = tape.add_rowvec(tape.matmul(x, tape.param(probe.weights())),
                                   tape.param(probe.bias()));
      int loss = tape.cross_entropy_rows(logits, by);
      tape.backward(loss);
      opt.step();
      opt.zero_grad();
      ++step;
    }
  }
  return probe;
}

inline SpanProbe train_span_probe(const std::vector<EmbeddedInstance>& data,
                                  const ProbeConfig& config, int dim) {
  config.validate();
  if (data.empty()) throw ValidationError("span probe: no training data");
  SpanProbe probe(dim, config.seed);
  nn::AdamOptimizer opt({&probe.w1(), &probe.b1(), &probe.w2(), &probe.b2()},
                        config.learning_rate);
  std::vector<size_t> order(data.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  uint64_t step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    Rng rng(mix_seed(config.seed, std::string("span"), static_cast<uint64_t>(epoch)));
    shuffle_indices(order, rng);
    for (size_t at = 0; at < order.size(); at += static_cast<size_t>(config.batch_size)) {
      const size_t end = std::min(order.size(), at + static_cast<size_t>(config.batch_size));
      nn::Tape tape;
      std::vector<std::pair<int, double>> terms;
      const double w = 1.0 / static_cast<double>(end - at);
      for (size_t i = at; i < end; ++i) {
        const auto& d = data[order[i]];
        int x = tape.constant(d.states);
        int h = tape.add_rowvec(tape.matmul(x, tape.param(probe.w1())), tape.param(probe.b1()));
        h = tape.relu(h);
        if (config.dropout > 0.0) {
          Rng drng(mix_seed(config.seed, std::string("span-dropout"), step * 131 + i));
          h = tape.mul_constant(h, dropout_mask(drng, tape.val(h).rows(), tape.val(h).cols(),
                                                config.dropout));
        }
        int logits = tape.add_rowvec(tape.matmul(h, tape.param(probe.w2())), tape.param(probe.b2()));
        terms.emplace_back(tape.cross_entropy_rows(logits, d.gold_tags), w);
      }
      int loss = tape.weighted_sum(terms);
      tape.backward(loss);
      opt.step();
      opt.zero_grad();
      ++step;
    }
  }
  return probe;
}

// ---------------------------------------------------------------------------
// Prediction records and their JSONL dumps (instance_id, prediction, gold).

struct DisambigPrediction {
  std::string instance_id;
  int pred = 0;
  int gold = 0;
};

struct SpanPrediction {
  std::string instance_id;
  std::vector<int> pred;
  std::vector<int> gold;
};

inline std::string dump_disambig_predictions(const std::vector<DisambigPrediction>& preds) {
  std::string out;
  for (const auto& p : preds) {
    nlohmann::json j{{"instance_id", p.instance_id}, {"label", p.pred}, {"gold", p.gold}};
    out += j.dump();
    out += '\n';
  }
  return out;
}

inline std::string dump_span_predictions(const std::vector<SpanPrediction>& preds) {
  std::string out;
  for (const auto& p : preds) {
    nlohmann::json j{{"instance_id", p.instance_id}, {"tags", p.pred}, {"gold", p.gold}};
    out += j.dump();
    out += '\n';
  }
  return out;
}

inline std::vector<SpanPrediction> load_span_predictions(const fs::path& path) {
  std::ifstream in(path);
  if (!in)
    throw UpstreamMissingError("span predictions missing: " + path.string() +
                               " (produce them with eval-probe)");
  std::vector<SpanPrediction> out;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("prediction parse error at line " + std::to_string(lineno) + ": " + e.what());
    }
    SpanPrediction p;
    p.instance_id = j.at("instance_id").get<std::string>();
    p.pred = j.at("tags").get<std::vector<int>>();
    p.gold = j.at("gold").get<std::vector<int>>();
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace idiombed
