#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "dpersona/dataset.hpp"
#include "dpersona/latent.hpp"
#include "dpersona/model.hpp"
#include "json.hpp"

// Personalization: per-rater prompts pooled from frozen backbone features are
// mapped into the frozen prior space by cross-attention over a prior bank and
// decoded by the frozen head. Only the projection heads are trained.
namespace dpersona::stage2 {

enum class BankPolicy { resample_per_forward, fixed_per_image };

BankPolicy parse_bank_policy(const std::string& s);
std::string to_string(BankPolicy p);

struct Stage2Config {
  int epochs = 200;
  double learning_rate = 1e-4;
  int M = 100;
  std::uint64_t seed = 1;
  BankPolicy bank_policy = BankPolicy::resample_per_forward;
  /// Divide attention logits by sqrt(D). Off: logits are z^T bank as written.
  bool attention_scale = false;
  int batch_size = 16;
  double l2 = 1e-5;

  void validate() const;
};

template <typename T>
struct AttentionResult {
  std::vector<T> output;   // D
  std::vector<T> weights;  // M, nonnegative, sum 1
};

/// w = softmax(z^T bank [/ sqrt(D)]), output = bank w.
template <typename T>
AttentionResult<T> cross_attention(std::span<const T> z, const latent::PriorBank<T>& bank, bool scale = false);

/// Tape form: z [D] and bank [D,M] -> [D]; differentiable in both.
template <typename T>
nn::Var cross_attention(nn::Tape<T>& tape, nn::Var z, nn::Var bank, bool scale = false);

/// z_exp = spatial mean of projection head `rater` applied to features.
template <typename T, typename B>
nn::Var expert_prompt(nn::Tape<T>& tape, B& bundle, int rater, nn::Var features) {
  return nn::global_avg_pool(tape, model::projection_forward(tape, bundle, rater, features));
}

/// Bank for one image under the fixed_per_image policy.
latent::PriorBank<float> fixed_bank(const latent::DiagonalGaussian<float>& prior, int M, std::uint64_t seed,
                                    const std::string& sample_id);

/// Personalized map for one rater (0-based) given precomputed features and bank.
ProbabilityMap personalize_forward(const model::ModelBundle<float>& bundle, const Tensor<float>& features,
                                   const latent::PriorBank<float>& bank, int rater, bool attention_scale = false);

/// All R personalized maps for an image with the fixed_per_image bank.
std::vector<ProbabilityMap> personalize_all(const model::ModelBundle<float>& bundle, const Image& image,
                                            const std::string& sample_id, int M, std::uint64_t bank_seed,
                                            bool attention_scale = false);

struct EpochLog {
  int epoch = 0;
  double l_personal = 0.0;
  double val_dice_mean = 0.0;
  bool selected = false;
  std::map<std::string, std::uint64_t> frozen_checksums;
};

nlohmann::json to_json(const EpochLog& e);

struct Stage2Result {
  model::ModelBundle<float> bundle;
  std::vector<EpochLog> log;
  int best_epoch = 0;
  double best_val_dice_mean = 0.0;
  long optimizer_steps = 0;
};

using EpochCallback = std::function<void(const EpochLog&)>;

/// Starts from the Stage-I parameters in `stage1`, freezes the shared
/// components, and checks after every epoch that their checksums still equal
/// `stage1_checksums` (throws std::runtime_error naming the component).
Stage2Result train_stage2(const data::Split& train, const data::Split& val, const model::ModelBundle<float>& stage1,
                          const std::map<std::string, std::uint64_t>& stage1_checksums, const Stage2Config& config,
                          const EpochCallback& on_epoch = {});

}  // namespace dpersona::stage2
