#include "dpersona/stage2.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "dpersona/fpenv.hpp"
#include "dpersona/losses.hpp"
#include "dpersona/metrics.hpp"
#include "dpersona/optim.hpp"
#include "dpersona/stage1.hpp"

namespace dpersona::stage2 {

using model::ModelBundle;
using nn::Tape;
using nn::Var;

BankPolicy parse_bank_policy(const std::string& s) {
  if (s == "resample_per_forward") return BankPolicy::resample_per_forward;
  if (s == "fixed_per_image") return BankPolicy::fixed_per_image;
  throw std::invalid_argument("unknown bank_policy '" + s + "'");
}

std::string to_string(BankPolicy p) {
  return p == BankPolicy::resample_per_forward ? "resample_per_forward" : "fixed_per_image";
}

void Stage2Config::validate() const {
  if (epochs < 0) throw std::invalid_argument("stage2: epochs must be >= 0");
  if (M < 1) throw std::invalid_argument("stage2: M must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("stage2: batch_size must be >= 1");
  if (!(learning_rate > 0)) throw std::invalid_argument("stage2: learning_rate must be > 0");
  if (!(l2 >= 0)) throw std::invalid_argument("stage2: l2 must be >= 0");
}

namespace {

template <typename T>
std::vector<T> attention_weights(std::span<const T> z, std::span<const T> bank, int d, int m, T scale) {
  std::vector<T> w(m);
  for (int j = 0; j < m; ++j) {
    T acc{};
    for (int i = 0; i < d; ++i) acc += z[i] * bank[static_cast<std::size_t>(i) * m + j];
    w[j] = acc * scale;
  }
  const T peak = *std::max_element(w.begin(), w.end());
  if (!std::isfinite(peak)) throw std::runtime_error("cross_attention: non-finite logits");
  T total{};
  for (auto& v : w) total += v = std::exp(v - peak);
  for (auto& v : w) v /= total;
  return w;
}

template <typename T>
T logit_scale(bool scale, int d) {
  return scale ? T{1} / std::sqrt(static_cast<T>(d)) : T{1};
}

}  // namespace

template <typename T>
AttentionResult<T> cross_attention(std::span<const T> z, const latent::PriorBank<T>& bank, bool scale) {
  const int d = bank.dim(), m = bank.size();
  if (static_cast<int>(z.size()) != d) throw std::invalid_argument("cross_attention: latent dimension mismatch");
  AttentionResult<T> r;
  r.weights = attention_weights<T>(z, bank.columns.span(), d, m, logit_scale<T>(scale, d));
  r.output.assign(d, T{});
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < m; ++j) r.output[i] += bank.columns[static_cast<std::size_t>(i) * m + j] * r.weights[j];
  return r;
}

template <typename T>
Var cross_attention(Tape<T>& tape, Var z, Var bank, bool scale) {
  const auto& bv = tape.value(bank);
  if (bv.rank() != 2) throw std::invalid_argument("cross_attention: bank must be [D,M]");
  const int d = bv.dim(0), m = bv.dim(1);
  if (static_cast<int>(tape.value(z).size()) != d) throw std::invalid_argument("cross_attention: latent dimension mismatch");
  const T s = logit_scale<T>(scale, d);
  auto w = attention_weights<T>(tape.value(z).span(), bv.span(), d, m, s);
  Tensor<T> out({d});
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < m; ++j) out[i] += bv[static_cast<std::size_t>(i) * m + j] * w[j];
  return tape.record(std::move(out), {z, bank}, [z, bank, d, m, s, w = std::move(w)](Tape<T>& t, const Tensor<T>& g) {
    const auto& bv = t.value(bank);
    std::vector<T> dw(m, T{});
    T mean_dw{};
    for (int j = 0; j < m; ++j) {
      for (int i = 0; i < d; ++i) dw[j] += g[i] * bv[static_cast<std::size_t>(i) * m + j];
      mean_dw += w[j] * dw[j];
    }
    std::vector<T> dlogit(m);
    for (int j = 0; j < m; ++j) dlogit[j] = w[j] * (dw[j] - mean_dw);
    if (t.requires_grad(z)) {
      auto& gz = t.grad(z);
      for (int i = 0; i < d; ++i) {
        T acc{};
        for (int j = 0; j < m; ++j) acc += dlogit[j] * bv[static_cast<std::size_t>(i) * m + j];
        gz[i] += s * acc;
      }
    }
    if (t.requires_grad(bank)) {
      const auto zv = t.value(z).data;
      auto& gb = t.grad(bank);
      for (int i = 0; i < d; ++i)
        for (int j = 0; j < m; ++j) gb[static_cast<std::size_t>(i) * m + j] += w[j] * g[i] + s * dlogit[j] * zv[i];
    }
  });
}

latent::PriorBank<float> fixed_bank(const latent::DiagonalGaussian<float>& prior, int M, std::uint64_t seed,
                                    const std::string& sample_id) {
  const std::uint64_t bank_seed = derive_seed(seed, "bank/" + sample_id);
  Rng rng(bank_seed);
  auto bank = latent::sample_prior_bank(prior, M, rng);
  bank.source_seed = bank_seed;
  return bank;
}

ProbabilityMap personalize_forward(const ModelBundle<float>& bundle, const Tensor<float>& features,
                                   const latent::PriorBank<float>& bank, int rater, bool attention_scale) {
  Tape<float> tape;
  const Var f = tape.constant(features);
  const Var prompt = expert_prompt(tape, bundle, rater, f);
  const Var z = cross_attention(tape, prompt, tape.constant(bank.columns), attention_scale);
  const auto& p = tape.value(model::head_probabilities(tape, bundle, z, f));
  return ProbabilityMap(features.dim(1), features.dim(2), p.data);
}

std::vector<ProbabilityMap> personalize_all(const ModelBundle<float>& bundle, const Image& image,
                                            const std::string& sample_id, int M, std::uint64_t bank_seed,
                                            bool attention_scale) {
  if (static_cast<int>(bundle.projections.size()) != bundle.arch.raters) {
    throw std::invalid_argument("personalization needs one projection head per rater");
  }
  const auto features = stage1::extract_features(bundle, image);
  const auto bank = fixed_bank(model::encode_prior(bundle, image), M, bank_seed, sample_id);
  std::vector<ProbabilityMap> out;
  for (int r = 0; r < bundle.arch.raters; ++r) out.push_back(personalize_forward(bundle, features, bank, r, attention_scale));
  return out;
}

nlohmann::json to_json(const EpochLog& e) {
  nlohmann::json sums;
  for (const auto& [name, value] : e.frozen_checksums) sums[name] = to_hex(value);
  return {{"epoch", e.epoch},
          {"l_personal", e.l_personal},
          {"val_dice_mean", e.val_dice_mean},
          {"selected", e.selected},
          {"frozen_checksums", sums}};
}

namespace {

void check_against_stage1(const ModelBundle<float>& bundle, const std::map<std::string, std::uint64_t>& expected) {
  const auto now = bundle.assert_frozen();
  for (const auto& name : model::kSharedComponents) {
    const auto it = expected.find(name);
    if (it == expected.end()) throw std::runtime_error("stage1 checksum for '" + name + "' is missing");
    const auto actual = bundle.component(name).checksum();
    if (actual != it->second) {
      throw std::runtime_error("frozen component '" + name + "' differs from its Stage-I value: " + to_hex(actual) +
                               " != " + to_hex(it->second));
    }
  }
}

double validation_dice_mean(const ModelBundle<float>& bundle, const data::Split& val, const Stage2Config& config) {
  double total = 0.0;
  for (const auto& s : val.samples) {
    const auto preds = personalize_all(bundle, s.image, s.sample_id, config.M, config.seed, config.attention_scale);
    total += metrics::per_rater_dice(preds, s.annotations).mean;
  }
  return total / static_cast<double>(val.samples.size());
}

}  // namespace

Stage2Result train_stage2(const data::Split& train, const data::Split& val, const ModelBundle<float>& stage1,
                          const std::map<std::string, std::uint64_t>& stage1_checksums, const Stage2Config& config,
                          const EpochCallback& on_epoch) {
  config.validate();
  ScopedFlushDenormals ftz;
  if (train.samples.empty() || val.samples.empty()) throw std::invalid_argument("stage2: empty train or val split");
  if (train.raters != stage1.arch.raters || train.height % 4 || train.width % 4) {
    throw std::invalid_argument("stage2: dataset does not match the Stage-I model");
  }

  ModelBundle<float> bundle = stage1;
  bundle.unfreeze_all();
  bundle.reset_projections(derive_seed(config.seed, "projections"));
  bundle.freeze(model::kSharedComponents);
  check_against_stage1(bundle, stage1_checksums);

  std::vector<Tensor<float>> features;
  std::vector<latent::DiagonalGaussian<float>> priors;
  for (const auto& s : train.samples) {
    features.push_back(stage1::extract_features(bundle, s.image));
    priors.push_back(model::encode_prior(bundle, s.image));
  }

  std::vector<nn::Parameter<float>*> params;
  for (auto& p : bundle.projections)
    for (auto& q : p.parameters()) params.push_back(&q);
  nn::AdamOptions opts;
  opts.learning_rate = config.learning_rate;
  opts.weight_decay = config.l2;
  nn::Adam<float> adam(params, opts);

  Stage2Result result;
  result.bundle = bundle;
  const int raters = bundle.arch.raters;
  const float eps = static_cast<float>(losses::kDiceEps);
  std::vector<std::size_t> order(train.samples.size());
  bool have_best = false;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(derive_seed(config.seed, "shuffle/" + std::to_string(epoch)));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    EpochLog log;
    log.epoch = epoch;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      for (std::size_t b = start; b < end; ++b) {
        const std::size_t idx = order[b];
        const auto& s = train.samples[idx];
        Tape<float> tape;
        const Var f = tape.constant(features[idx]);
        std::vector<Var> preds;
        for (int r = 0; r < raters; ++r) {
          latent::PriorBank<float> bank;
          if (config.bank_policy == BankPolicy::fixed_per_image) {
            bank = fixed_bank(priors[idx], config.M, config.seed, s.sample_id);
          } else {
            Rng rng(derive_seed(config.seed, "bank/" + std::to_string(epoch) + "/" + s.sample_id + "/" + std::to_string(r)));
            bank = latent::sample_prior_bank(priors[idx], config.M, rng);
          }
          const Var prompt = expert_prompt(tape, bundle, r, f);
          const Var z = cross_attention(tape, prompt, tape.constant(bank.columns), config.attention_scale);
          preds.push_back(model::head_probabilities(tape, bundle, z, f));
        }
        const Var loss = losses::loss_stage2<float>(tape, preds, s.annotations, eps);
        const float value = tape.value(loss)[0];
        if (!std::isfinite(value)) {
          throw std::runtime_error("stage2: non-finite loss at epoch " + std::to_string(epoch) + ", sample " + s.sample_id);
        }
        log.l_personal += value;
        tape.backward(loss);
      }
      adam.step(1.0f / static_cast<float>(end - start));
    }
    log.l_personal /= static_cast<double>(order.size());
    check_against_stage1(bundle, stage1_checksums);
    log.frozen_checksums = bundle.assert_frozen();
    log.val_dice_mean = validation_dice_mean(bundle, val, config);
    if (!have_best || log.val_dice_mean > result.best_val_dice_mean) {
      have_best = true;
      log.selected = true;
      result.best_epoch = epoch;
      result.best_val_dice_mean = log.val_dice_mean;
      result.bundle = bundle;
    }
    result.log.push_back(log);
    if (on_epoch) on_epoch(log);
  }
  result.optimizer_steps = adam.steps();
  check_against_stage1(result.bundle, stage1_checksums);
  return result;
}

template AttentionResult<float> cross_attention<float>(std::span<const float>, const latent::PriorBank<float>&, bool);
template AttentionResult<double> cross_attention<double>(std::span<const double>, const latent::PriorBank<double>&, bool);
template Var cross_attention<float>(Tape<float>&, Var, Var, bool);
template Var cross_attention<double>(Tape<double>&, Var, Var, bool);

}  // namespace dpersona::stage2
