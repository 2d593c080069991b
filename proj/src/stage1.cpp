#include "dpersona/stage1.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "dpersona/fpenv.hpp"
#include "dpersona/fusion.hpp"
#include "dpersona/metrics.hpp"
#include "dpersona/optim.hpp"

namespace dpersona::stage1 {

using model::ModelBundle;
using nn::Tape;
using nn::Var;

void Stage1Config::validate() const {
  if (epochs < 1) throw std::invalid_argument("stage1: epochs must be >= 1");
  if (K < 2) throw std::invalid_argument("stage1: K must be >= 2");
  if (batch_size < 1) throw std::invalid_argument("stage1: batch_size must be >= 1");
  if (!(learning_rate > 0)) throw std::invalid_argument("stage1: learning_rate must be > 0");
  if (val_samples < 1) throw std::invalid_argument("stage1: val_samples must be >= 1");
  if (!(sigma_floor >= 0)) throw std::invalid_argument("stage1: sigma_floor must be >= 0");
  weights.validate();
}

nlohmann::json to_json(const EpochLog& e) {
  nlohmann::json j{{"epoch", e.epoch},       {"l_kl", e.l_kl},       {"l_seg", e.l_seg},
                   {"l_total", e.l_total},   {"val_metric", e.val_metric}, {"selected", e.selected}};
  j["l_bound"] = e.l_bound ? nlohmann::json(*e.l_bound) : nlohmann::json(nullptr);
  return j;
}

StepLosses accumulate_sample_gradients(ModelBundle<float>& bundle, const synthgen::MultiRaterSample& sample,
                                       const Stage1Config& config, LabelMode mode, const BinaryMask* fixed_label,
                                       Rng& rng) {
  const auto& arch = bundle.arch;
  const int raters = static_cast<int>(sample.annotations.size());
  const float eps = static_cast<float>(losses::kDiceEps);
  Tape<float> tape;
  const Var x = tape.constant(model::image_tensor<float>(sample.image));
  const Var features = model::backbone_forward(tape, bundle, x);
  StepLosses out;

  if (mode == LabelMode::single_label) {
    const BinaryMask& target = fixed_label ? *fixed_label : sample.annotations[fusion::random_rater(raters, rng)];
    const Var z = tape.constant(Tensor<float>({arch.latent_dim}));
    const Var p = model::head_probabilities(tape, bundle, z, features);
    const Var seg = losses::dice_loss<float>(tape, p, losses::mask_values<float>(target), eps);
    const std::vector<Var> terms{seg};
    const std::vector<float> w{static_cast<float>(config.weights.alpha)};
    const Var total = nn::weighted_sum<float>(tape, terms, w);
    out.seg = tape.value(seg)[0];
    out.total = tape.value(total)[0];
    if (std::isfinite(out.total)) tape.backward(total);
    return out;
  }

  if (raters != arch.raters) throw std::invalid_argument("sample rater count does not match the model");
  const int target_rater = fusion::random_rater(raters, rng);
  const auto prior = model::encode_prior(tape, bundle, x);
  const auto post =
      model::encode_posterior(tape, bundle, x, tape.constant(model::annotation_tensor<float>(sample.annotations)));
  const Var kl = latent::kl_divergence<float>(tape, prior.mean, prior.log_sigma, post.mean, post.log_sigma,
                                              config.kl_direction, static_cast<float>(config.sigma_floor));
  const auto post_noise = standard_normal<float>(rng, arch.latent_dim);
  const Var z_post = latent::reparameterize<float>(tape, post.mean, post.log_sigma, post_noise);
  const Var p = model::head_probabilities(tape, bundle, z_post, features);
  const Var seg =
      losses::dice_loss<float>(tape, p, losses::mask_values<float>(sample.annotations[target_rater]), eps);

  Var bound;
  if (config.weights.beta > 0) {
    std::vector<Var> preds;
    for (int k = 0; k < config.K; ++k) {
      const auto noise = standard_normal<float>(rng, arch.latent_dim);
      const Var z = latent::reparameterize<float>(tape, prior.mean, prior.log_sigma, noise);
      preds.push_back(model::head_probabilities(tape, bundle, z, features));
    }
    bound = losses::loss_bound<float>(tape, preds, losses::bound_targets(sample.annotations), eps);
    out.bound = tape.value(bound)[0];
  } else {
    bound = tape.constant(Tensor<float>({1}));
  }
  const Var total = losses::loss_stage1<float>(tape, kl, seg, bound, config.weights);
  out.kl = tape.value(kl)[0];
  out.seg = tape.value(seg)[0];
  out.total = tape.value(total)[0];
  if (std::isfinite(out.total)) tape.backward(total);
  return out;
}

Tensor<float> extract_features(const ModelBundle<float>& bundle, const Image& image) {
  Tape<float> tape;
  const Var f = model::backbone_forward(tape, bundle, tape.constant(model::image_tensor<float>(image)));
  return tape.value(f);
}

ProbabilityMap decode(const ModelBundle<float>& bundle, const Tensor<float>& features, std::span<const float> z) {
  Tape<float> tape;
  const Var f = tape.constant(features);
  const Var zv = tape.constant(Tensor<float>({static_cast<int>(z.size())}, std::vector<float>(z.begin(), z.end())));
  const auto& p = tape.value(model::head_probabilities(tape, bundle, zv, f));
  return ProbabilityMap(features.dim(1), features.dim(2), p.data);
}

std::vector<ProbabilityMap> infer_diverse(const ModelBundle<float>& bundle, const Image& image, int n_samples,
                                          Rng& rng) {
  if (n_samples < 1) throw std::invalid_argument("infer_diverse needs n_samples >= 1");
  const auto features = extract_features(bundle, image);
  const auto prior = model::encode_prior(bundle, image);
  std::vector<ProbabilityMap> out;
  out.reserve(n_samples);
  for (int i = 0; i < n_samples; ++i) {
    const auto z = latent::sample_reparameterized(prior, rng);
    out.push_back(decode(bundle, features, z.values));
  }
  return out;
}

ProbabilityMap infer_single(const ModelBundle<float>& bundle, const Image& image) {
  const std::vector<float> zero(bundle.arch.latent_dim, 0.0f);
  return decode(bundle, extract_features(bundle, image), zero);
}

namespace {

double validation_metric(const ModelBundle<float>& bundle, const data::Split& val, const Stage1Config& config,
                         LabelMode mode) {
  double total = 0.0;
  for (const auto& s : val.samples) {
    if (mode == LabelMode::single_label) {
      const auto pred = binarize(infer_single(bundle, s.image));
      double d = 0.0;
      for (const auto& a : s.annotations) d += metrics::dice(pred, a);
      total += d / static_cast<double>(s.annotations.size());
    } else {
      Rng rng(derive_seed(config.seed, "val/" + s.sample_id));
      const auto preds = infer_diverse(bundle, s.image, config.val_samples, rng);
      std::vector<BinaryMask> bin;
      for (const auto& p : preds) bin.push_back(binarize(p));
      total += metrics::ged(bin, s.annotations);
    }
  }
  return total / static_cast<double>(val.samples.size());
}

std::vector<nn::Parameter<float>*> trainable(ModelBundle<float>& bundle, LabelMode mode) {
  std::vector<model::Component<float>*> comps{&bundle.backbone, &bundle.head};
  if (mode == LabelMode::diverse) comps = {&bundle.backbone, &bundle.prior, &bundle.posterior, &bundle.head};
  std::vector<nn::Parameter<float>*> out;
  for (auto* c : comps)
    for (auto& p : c->parameters()) out.push_back(&p);
  return out;
}

}  // namespace

Stage1Result train_stage1(const data::Split& train, const data::Split& val, const model::ArchitectureConfig& arch,
                          const Stage1Config& config, LabelMode mode, const LabelSource* label_source,
                          const EpochCallback& on_epoch) {
  config.validate();
  ScopedFlushDenormals ftz;
  if (train.samples.empty() || val.samples.empty()) throw std::invalid_argument("stage1: empty train or val split");
  if (train.raters < 2) throw std::invalid_argument("stage1: the dataset must have at least two raters");
  if (train.raters != arch.raters) throw std::invalid_argument("stage1: dataset raters do not match the architecture");
  if (mode == LabelMode::single_label) {
    if (!label_source) throw std::invalid_argument("stage1: single-label mode needs a label source");
    if (!label_source->random_selection() && label_source->fixed.size() != train.samples.size()) {
      throw std::invalid_argument("stage1: one fixed label per training sample is required");
    }
  }

  auto bundle = ModelBundle<float>::create(arch, derive_seed(config.seed, "init"));
  nn::AdamOptions opts;
  opts.learning_rate = config.learning_rate;
  opts.weight_decay = config.weights.l2;
  nn::Adam<float> adam(trainable(bundle, mode), opts);

  Stage1Result result;
  bool have_best = false;
  std::vector<std::size_t> order(train.samples.size());
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(derive_seed(config.seed, "shuffle/" + std::to_string(epoch)));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    EpochLog log;
    log.epoch = epoch;
    double sum_bound = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      for (std::size_t b = start; b < end; ++b) {
        const auto& s = train.samples[order[b]];
        Rng rng(derive_seed(config.seed, "step/" + std::to_string(epoch) + "/" + s.sample_id));
        const BinaryMask* fixed = nullptr;
        if (mode == LabelMode::single_label && !label_source->random_selection()) fixed = &label_source->fixed[order[b]];
        const auto l = accumulate_sample_gradients(bundle, s, config, mode, fixed, rng);
        if (!std::isfinite(l.total) || l.kl < 0) {
          std::ostringstream msg;
          msg << "stage1: invalid loss at epoch " << epoch << ", batch " << start / config.batch_size << ", sample "
              << s.sample_id << " (l_kl=" << l.kl << ", l_seg=" << l.seg << ", l_bound=" << l.bound
              << ", total=" << l.total << ")";
          throw std::runtime_error(msg.str());
        }
        log.l_kl += l.kl;
        log.l_seg += l.seg;
        sum_bound += l.bound;
        log.l_total += l.total;
      }
      adam.step(1.0f / static_cast<float>(end - start));
    }
    const double n = static_cast<double>(order.size());
    log.l_kl /= n;
    log.l_seg /= n;
    log.l_total /= n;
    if (mode == LabelMode::diverse && config.weights.beta > 0) log.l_bound = sum_bound / n;

    log.val_metric = validation_metric(bundle, val, config, mode);
    const bool better = mode == LabelMode::diverse ? log.val_metric < result.best_val_metric
                                                   : log.val_metric > result.best_val_metric;
    if (!have_best || better) {
      have_best = true;
      log.selected = true;
      result.best_epoch = epoch;
      result.best_val_metric = log.val_metric;
      result.bundle = bundle;
    }
    result.log.push_back(log);
    if (on_epoch) on_epoch(log);
  }
  return result;
}

}  // namespace dpersona::stage1
