#pragma once

#include <limits>
#include <string>
#include <vector>

#include "idiombed/common.hpp"
#include "idiombed/embedding_bank.hpp"
#include "idiombed/model.hpp"
#include "idiombed/nn.hpp"
#include "idiombed/noising.hpp"

namespace idiombed {

struct TrainConfig {
  int epochs = 220;
  int batch_size = 16;
  double learning_rate = 1e-5;
  double w_rec = 1.0;
  double w_sf = 1.0;
  int checkpoint_cadence = 0;  // extra periodic checkpoints; 0 keeps best/last only
  double validation_fraction = 0.05;
  uint64_t seed = 0;
  bool sf_on_iti = false;  // similarity forcing normally skips ITI examples

  void validate() const {
    if (epochs < 0) throw ValidationError("training: epochs must be >= 0");
    if (batch_size < 1) throw ValidationError("training: batch_size must be >= 1");
    if (learning_rate <= 0.0) throw ValidationError("training: learning_rate must be positive");
    if (w_rec < 0.0 || w_sf < 0.0) throw ValidationError("training: loss weights must be >= 0");
    if (w_rec + w_sf <= 0.0) throw ValidationError("training: at least one loss weight must be positive");
    if (validation_fraction < 0.0 || validation_fraction >= 1.0)
      throw ValidationError("training: validation_fraction must be in [0,1)");
  }
};

struct LossBreakdown {
  double rec = 0.0;
  double sf = 0.0;
  double total = 0.0;
  int n_sf_examples = 0;
};

// ---------------------------------------------------------------------------
// Losses (value-level routes; the tape routes live in batch_loss below)

// Mean token negative log-likelihood over unmasked positions.
inline double reconstruction_loss(const Mat& logits, const std::vector<int>& targets,
                                  const std::vector<bool>& mask = {}) {
  nn::Tape tape;
  int node = tape.cross_entropy_rows(tape.constant(logits), targets, mask);
  return tape.scalar(node);
}

// 1 - cos(u, v); throws on zero-norm inputs.
inline double similarity_forcing_loss(const Vec& ie_embedding, const Vec& definition_embedding) {
  return 1.0 - cosine_similarity(ie_embedding, definition_embedding);
}

// Whether similarity forcing applies to an example: the IE must appear in the
// source (copy / span_infill / template_infill), unless sf_on_iti is set.
inline bool sf_applicable(const CorruptionExample& ex, bool sf_on_iti) {
  return ex.transform != Transform::iti || sf_on_iti;
}

// ---------------------------------------------------------------------------
// Batch loss on a tape

struct BatchLoss {
  int total_node = -1;
  LossBreakdown breakdown;
};

// Composes w_rec * mean(rec_i) + w_sf * mean(sf over applicable items) on the
// given tape. Definition embeddings come from the (frozen) definition bank
// and are constants on the tape.
inline BatchLoss batch_loss(nn::Tape& tape, const AdaptedModel& model,
                            const std::vector<CorruptionExample>& batch,
                            const EmbeddingBank& definition_bank, double w_rec, double w_sf,
                            bool sf_on_iti) {
  if (batch.empty()) throw ValidationError("batch_loss: empty batch");
  if (definition_bank.kind != BankKind::definition)
    throw ValidationError("batch_loss: definition bank required");

  std::vector<std::pair<int, double>> rec_terms;
  std::vector<std::pair<int, double>> sf_terms;
  for (const auto& ex : batch) {
    const auto fw = model.forward_example(tape, ex.source_tokens, ex.target_tokens);
    rec_terms.emplace_back(tape.cross_entropy_rows(fw.logits, ex.target_tokens), 0.0);
    if (w_sf > 0.0 && sf_applicable(ex, sf_on_iti)) {
      if (!definition_bank.contains(ex.idiom_id))
        throw ValidationError("no definition embedding for idiom " + ex.idiom_id);
      const TokenSpan rows = AdaptedModel::decoder_rows_for_target_span(ex.ie_span_target);
      int span = tape.slice_rows(fw.dec_hidden, static_cast<long>(rows.start_token),
                                 static_cast<long>(rows.end_token));
      int pooled = tape.mean_rows(span);
      const Vec& def = definition_bank.at(ex.idiom_id).vec;
      sf_terms.emplace_back(tape.cosine_loss_const(pooled, def.transpose()), 0.0);
    }
  }
  const double rec_w = 1.0 / static_cast<double>(rec_terms.size());
  for (auto& t : rec_terms) t.second = rec_w;
  int rec_node = tape.weighted_sum(rec_terms);

  BatchLoss out;
  out.breakdown.rec = tape.scalar(rec_node);
  out.breakdown.n_sf_examples = static_cast<int>(sf_terms.size());
  if (!sf_terms.empty()) {
    const double sf_w = 1.0 / static_cast<double>(sf_terms.size());
    for (auto& t : sf_terms) t.second = sf_w;
    int sf_node = tape.weighted_sum(sf_terms);
    out.breakdown.sf = tape.scalar(sf_node);
    out.total_node = tape.weighted_sum({{rec_node, w_rec}, {sf_node, w_sf}});
  } else {
    out.breakdown.sf = 0.0;
    out.total_node = tape.weighted_sum({{rec_node, w_rec}});
  }
  out.breakdown.total = tape.scalar(out.total_node);
  return out;
}

// Convenience wrapper when only the numbers are needed.
inline LossBreakdown total_loss(const AdaptedModel& model, const std::vector<CorruptionExample>& batch,
                                const EmbeddingBank& definition_bank, double w_rec, double w_sf,
                                bool sf_on_iti = false) {
  nn::Tape tape;
  return batch_loss(tape, model, batch, definition_bank, w_rec, w_sf, sf_on_iti).breakdown;
}

// ---------------------------------------------------------------------------
// Training loop

struct StepLog {
  long step = 0;
  long epoch = 0;
  LossBreakdown loss;
};

struct TrainResult {
  std::vector<StepLog> steps;
  std::vector<double> validation_curve;  // one entry per epoch
  fs::path best_checkpoint;
  fs::path last_checkpoint;
  long best_epoch = -1;
};

// Idiom-stratified validation split: roughly validation_fraction of each
// idiom's sentences, never taking an idiom's last sentence.
inline std::pair<std::vector<size_t>, std::vector<size_t>> split_validation(
    const std::vector<TokenizedInstance>& view, double fraction, uint64_t seed) {
  std::map<std::string, std::vector<size_t>> by_idiom;
  for (size_t i = 0; i < view.size(); ++i) by_idiom[view[i].idiom_id].push_back(i);
  std::vector<size_t> train, val;
  Rng rng(mix_seed(seed, std::string("validation-split")));
  for (auto& [idiom, indices] : by_idiom) {
    shuffle_indices(indices, rng);
    size_t n_val = static_cast<size_t>(std::floor(fraction * static_cast<double>(indices.size())));
    n_val = std::min(n_val, indices.size() - 1);
    for (size_t j = 0; j < indices.size(); ++j)
      (j < n_val ? val : train).push_back(indices[j]);
  }
  std::sort(train.begin(), train.end());
  std::sort(val.begin(), val.end());
  return {train, val};
}

inline std::string loss_log_csv(const std::vector<StepLog>& steps) {
  std::string out = "step,epoch,rec,sf,total,n_sf_examples\n";
  char buf[160];
  for (const auto& s : steps) {
    std::snprintf(buf, sizeof buf, "%ld,%ld,%.17g,%.17g,%.17g,%d\n", s.step, s.epoch, s.loss.rec,
                  s.loss.sf, s.loss.total, s.loss.n_sf_examples);
    out += buf;
  }
  return out;
}

// Epoch sentinel used to corrupt the validation view the same way every
// epoch, keeping validation losses comparable across epochs.
inline constexpr uint64_t kValidationEpoch = 0xFFFFFFFFULL;

// Trains the adapter (or the full model when unfrozen) with the composed
// objective. Writes loss_log.csv plus best/last checkpoints under out_dir.
inline TrainResult train_adapter(AdaptedModel& model, const std::vector<TokenizedInstance>& view,
                                 const std::vector<TemplateSentence>& templates,
                                 const NoisingPolicy& policy, const EmbeddingBank& definition_bank,
                                 const TrainConfig& config, const Tokenizer& tokenizer,
                                 const fs::path& out_dir) {
  config.validate();
  policy.validate();
  if (view.empty()) throw ValidationError("train_adapter: empty training view");
  if (config.w_sf > 0.0) {
    for (const auto& inst : view)
      if (!definition_bank.contains(inst.idiom_id))
        throw ValidationError("definition bank does not cover training idiom " + inst.idiom_id);
  }
  fs::create_directories(out_dir);

  const bool frozen_backbone = model.partition().frozen_count > 0;
  const uint64_t checksum0 = model.frozen_checksum();
  auto check_frozen = [&] {
    if (frozen_backbone && model.frozen_checksum() != checksum0)
      throw IntegrityError("frozen backbone weights drifted during training");
  };

  auto [train_idx, val_idx] = split_validation(view, config.validation_fraction, config.seed);
  std::vector<TokenizedInstance> train_view, val_view;
  for (size_t i : train_idx) train_view.push_back(view[i]);
  for (size_t i : val_idx) val_view.push_back(view[i]);

  NoisingPolicy epoch_policy = policy;
  epoch_policy.seed = config.seed;

  auto validation_loss = [&]() -> double {
    const auto& v = val_view.empty() ? train_view : val_view;
    auto examples = schedule_epoch(v, templates, epoch_policy, tokenizer, kValidationEpoch);
    double total = 0.0;
    size_t batches = 0;
    for (size_t at = 0; at < examples.size(); at += static_cast<size_t>(config.batch_size)) {
      const size_t end = std::min(examples.size(), at + static_cast<size_t>(config.batch_size));
      std::vector<CorruptionExample> batch(examples.begin() + static_cast<long>(at),
                                           examples.begin() + static_cast<long>(end));
      total += total_loss(model, batch, definition_bank, config.w_rec, config.w_sf,
                          config.sf_on_iti).total;
      ++batches;
    }
    return batches == 0 ? 0.0 : total / static_cast<double>(batches);
  };

  TrainResult result;
  result.best_checkpoint = out_dir / "checkpoint_best.bin";
  result.last_checkpoint = out_dir / "checkpoint_last.bin";

  nn::AdamOptimizer optimizer(model.all_params(), config.learning_rate);
  optimizer.zero_grad();

  double best_val = std::numeric_limits<double>::infinity();
  long step = 0;
  // epochs == 0 keeps the initialization as both best and last checkpoint.
  model.save_checkpoint(result.best_checkpoint);
  model.save_checkpoint(result.last_checkpoint);

  for (long epoch = 0; epoch < config.epochs; ++epoch) {
    auto examples = schedule_epoch(train_view, templates, epoch_policy, tokenizer,
                                   static_cast<uint64_t>(epoch));
    for (auto& ex : examples) check_example_invariants(ex);
    std::vector<size_t> order(examples.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffle_rng(mix_seed(config.seed, std::string("shuffle"), static_cast<uint64_t>(epoch)));
    shuffle_indices(order, shuffle_rng);

    for (size_t at = 0; at < order.size(); at += static_cast<size_t>(config.batch_size)) {
      const size_t end = std::min(order.size(), at + static_cast<size_t>(config.batch_size));
      std::vector<CorruptionExample> batch;
      batch.reserve(end - at);
      for (size_t i = at; i < end; ++i) batch.push_back(examples[order[i]]);

      nn::Tape tape;
      BatchLoss loss = batch_loss(tape, model, batch, definition_bank, config.w_rec, config.w_sf,
                                  config.sf_on_iti);
      tape.backward(loss.total_node);
      optimizer.step();
      optimizer.zero_grad();
      result.steps.push_back(StepLog{step, epoch, loss.breakdown});
      ++step;
    }

    check_frozen();
    const double val = validation_loss();
    result.validation_curve.push_back(val);
    if (val < best_val) {
      best_val = val;
      result.best_epoch = epoch;
      model.save_checkpoint(result.best_checkpoint);
    }
    model.save_checkpoint(result.last_checkpoint);
    if (config.checkpoint_cadence > 0 && (epoch + 1) % config.checkpoint_cadence == 0)
      model.save_checkpoint(out_dir / ("checkpoint_epoch" + std::to_string(epoch) + ".bin"));
  }

  check_frozen();
  write_file_atomic(out_dir / "loss_log.csv", loss_log_csv(result.steps));
  return result;
}

}  // namespace idiombed
