#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dpersona/dataset.hpp"
#include "dpersona/latent.hpp"
#include "dpersona/losses.hpp"
#include "dpersona/model.hpp"
#include "json.hpp"

// Diversified training (shared latent space with bound supervision) and the
// single-label path used by the crowdsourcing and single-rater baselines.
namespace dpersona::stage1 {

enum class LabelMode {
  diverse,       // KL + alpha * random-annotation Dice + beta * bound loss
  single_label,  // alpha * Dice against one label per sample, latent fixed at 0
};

struct Stage1Config {
  int epochs = 100;
  double learning_rate = 1e-4;
  int K = 10;
  losses::LossWeights weights;
  int batch_size = 16;
  std::uint64_t seed = 1;
  latent::KlDirection kl_direction = latent::KlDirection::post_to_prior;
  double sigma_floor = 1e-6;
  /// Prior samples per validation image for model selection by GED.
  int val_samples = 10;

  void validate() const;
};

/// Labels for single-label mode: either one fixed mask per training sample
/// (fused or single-rater labels) or a fresh uniformly chosen rater per step.
struct LabelSource {
  std::string name;
  std::vector<BinaryMask> fixed;  // empty means random selection

  bool random_selection() const { return fixed.empty(); }
};

struct EpochLog {
  int epoch = 0;
  double l_kl = 0.0;
  double l_seg = 0.0;
  std::optional<double> l_bound;  // absent when beta == 0
  double l_total = 0.0;
  double val_metric = 0.0;  // GED (diverse) or mean per-rater Dice (single label)
  bool selected = false;
};

nlohmann::json to_json(const EpochLog& e);

struct Stage1Result {
  model::ModelBundle<float> bundle;  // parameters of the selected epoch
  std::vector<EpochLog> log;
  int best_epoch = 0;
  double best_val_metric = 0.0;
};

using EpochCallback = std::function<void(const EpochLog&)>;

/// `label_source` is required in single_label mode and ignored otherwise.
Stage1Result train_stage1(const data::Split& train, const data::Split& val, const model::ArchitectureConfig& arch,
                          const Stage1Config& config, LabelMode mode, const LabelSource* label_source = nullptr,
                          const EpochCallback& on_epoch = {});

/// Per-sample loss terms of one training step (exposed for tests).
struct StepLosses {
  double kl = 0.0, seg = 0.0, bound = 0.0, total = 0.0;
};

/// Forward + backward for one sample; gradients accumulate into `bundle`.
StepLosses accumulate_sample_gradients(model::ModelBundle<float>& bundle, const synthgen::MultiRaterSample& sample,
                                       const Stage1Config& config, LabelMode mode, const BinaryMask* fixed_label,
                                       Rng& rng);

/// Backbone features [C,H,W] of one image.
Tensor<float> extract_features(const model::ModelBundle<float>& bundle, const Image& image);

/// sigmoid(F_head(broadcast(z), features)).
ProbabilityMap decode(const model::ModelBundle<float>& bundle, const Tensor<float>& features,
                      std::span<const float> z);

/// n prior samples decoded through the head. Uses the image only.
std::vector<ProbabilityMap> infer_diverse(const model::ModelBundle<float>& bundle, const Image& image, int n_samples,
                                          Rng& rng);

/// The single-label model's prediction (latent fixed at zero).
ProbabilityMap infer_single(const model::ModelBundle<float>& bundle, const Image& image);

}  // namespace dpersona::stage1
