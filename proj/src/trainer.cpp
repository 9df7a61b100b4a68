#include "epseg/trainer.hpp"

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <numeric>
#include <set>

namespace epseg {

std::string TrainHistory::to_json() const {
  nlohmann::ordered_json j;
  j["best_epoch"] = best_epoch;
  j["epochs"] = nlohmann::ordered_json::array();
  for (const auto& e : epochs) {
    j["epochs"].push_back({{"epoch", e.epoch},
                           {"train_loss", e.train_loss},
                           {"val_aiou", e.val_aiou},
                           {"seconds", e.seconds},
                           {"skipped_samples", e.skipped_samples}});
  }
  return j.dump(2) + "\n";
}

void TrainConfig::validate() const {
  if (!(lr > 0)) throw std::invalid_argument("learning rate must be > 0");
  if (batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
  if (max_epochs < 1) throw std::invalid_argument("max epochs must be >= 1");
  if (patience < 1) throw std::invalid_argument("patience must be >= 1");
  unet.validate();
}

std::vector<EvalRecord> evaluation_records(const PredictFn& predict, const std::vector<InstanceSample>& samples,
                                           bool with_ep, const EvalOptions& options,
                                           std::vector<double>* batch_ious) {
  std::vector<EvalRecord> records;
  const std::size_t bs = static_cast<std::size_t>(options.batch_size);
  for (std::size_t start = 0; start < samples.size(); start += bs) {
    std::vector<const InstanceSample*> chunk;
    for (std::size_t i = start; i < std::min(samples.size(), start + bs); ++i) chunk.push_back(&samples[i]);
    const Batch batch = make_batch(chunk, with_ep);
    const Tensor<float> probs = predict(batch.input, start);
    double batch_sum = 0;
    for (std::size_t k = 0; k < chunk.size(); ++k) {
      const InstanceSample& s = *chunk[k];
      EvalRecord r;
      r.instance_id = s.id;
      r.class_id = s.class_id;
      const BinaryMask pred = tensor_to_mask(probs, static_cast<int>(k), options.threshold);
      r.iou = instance_iou(pred, s.gt_mask);
      if (pred.any()) r.border_distances = border_error(pred, s.gt_mask);
      batch_sum += r.iou;
      records.push_back(std::move(r));
    }
    if (batch_ious) batch_ious->push_back(batch_sum / static_cast<double>(chunk.size()));
  }
  return records;
}

EvalReport evaluate(const PredictFn& predict, const std::vector<InstanceSample>& samples, bool with_ep,
                    const EvalOptions& options) {
  if (samples.empty()) throw std::invalid_argument("evaluate: no samples");
  std::vector<double> batch_ious;
  const auto records = evaluation_records(predict, samples, with_ep, options, &batch_ious);

  EvalReport report;
  report.aiou = aggregate_aiou(batch_ious);
  const MiouResult miou = aggregate_miou(records);
  report.miou = miou.miou;
  report.iiou = aggregate_iiou(records);
  for (const auto& c : miou.per_class) {
    const auto it = options.class_names.find(c.class_id);
    report.per_class[it != options.class_names.end() ? it->second : std::to_string(c.class_id)] = c.mean_iou;
  }
  std::vector<double> distances;
  for (const auto& r : records) {
    if (r.border_distances.empty()) ++report.degenerate;
    distances.insert(distances.end(), r.border_distances.begin(), r.border_distances.end());
  }
  report.border_histogram = histogram(distances, options.bin_width);
  report.instances = records.size();
  return report;
}

namespace {

PredictFn network_predictor(const Network<float>& net) {
  return [&net](const Tensor<float>& batch, std::size_t) { return net.forward(batch); };
}

}  // namespace

EvalReport evaluate(const Network<float>& net, const std::vector<InstanceSample>& samples,
                    const EvalOptions& options) {
  return evaluate(network_predictor(net), samples, net.config().input_channels == 4, options);
}

double validation_aiou(const Network<float>& net, const std::vector<InstanceSample>& samples, int batch_size) {
  EvalOptions options;
  options.batch_size = batch_size;
  std::vector<double> batch_ious;
  evaluation_records(network_predictor(net), samples, net.config().input_channels == 4, options, &batch_ious);
  return aggregate_aiou(batch_ious);
}

TrainResult train(const std::vector<InstanceSample>& train_set, const std::vector<InstanceSample>& val_set,
                  const TrainConfig& config) {
  config.validate();
  if (train_set.empty() || val_set.empty()) throw std::invalid_argument("train: both splits must be non-empty");
  std::set<int> val_classes;
  for (const auto& s : val_set) val_classes.insert(s.class_id);
  for (const auto& s : train_set) {
    if (!val_classes.count(s.class_id)) {
      throw std::invalid_argument("train: validation split has no instance of class " + std::to_string(s.class_id));
    }
  }
  for (const auto* set : {&train_set, &val_set}) {
    for (const auto& s : *set) {
      if (s.size() != config.unet.input_size) {
        throw ShapeError("train: sample '" + s.id + "' has size " + std::to_string(s.size()) +
                         ", network expects " + std::to_string(config.unet.input_size));
      }
    }
  }

  const bool with_ep = config.unet.input_channels == 4;
  Network<float> net(config.unet);
  std::vector<Tensor<float>*> params;
  for (auto& p : net.parameters()) params.push_back(&p.value);
  AdamState<float> adam;
  adam.config.lr = config.lr;

  TrainResult result{net, {0, -1.0, config.seed}, {}};
  int since_best = 0;
  std::vector<std::size_t> order(train_set.size());

  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng = Rng::stream(config.seed, static_cast<std::uint64_t>(epoch), 0);
    shuffle_rng.shuffle(order);

    EpochRecord rec;
    rec.epoch = epoch;
    double loss_sum = 0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      std::vector<InstanceSample> augmented;
      std::vector<const InstanceSample*> chunk;
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      augmented.reserve(end - start);
      for (std::size_t i = start; i < end; ++i) {
        const InstanceSample& s = train_set[order[i]];
        if (!config.augment) {
          chunk.push_back(&s);
          continue;
        }
        Rng rng = Rng::stream(config.seed, static_cast<std::uint64_t>(epoch), order[i] + 1);
        auto a = augment(s, rng, config.augmentation);
        if (!a) {
          ++rec.skipped_samples;
          continue;
        }
        augmented.push_back(std::move(*a));
        chunk.push_back(&augmented.back());
      }
      if (chunk.empty()) continue;

      const Batch batch = make_batch(chunk, with_ep);
      const auto where = [&] {
        return " at epoch " + std::to_string(epoch) + ", batch " + std::to_string(batches + 1) + " (" +
               to_string(config.loss.kind) + " loss)";
      };
      ForwardCache<float> cache;
      Tensor<float> dprobs;
      float loss = 0;
      std::vector<Tensor<float>> grads;
      try {
        const Tensor<float> probs = net.forward(batch.input, cache);
        loss = batch_loss(config.loss, probs, batch.gt, &dprobs);
        if (!std::isfinite(loss)) throw TrainingError("non-finite loss " + std::to_string(loss) + where());
        grads = net.backward(cache, dprobs);
      } catch (const NonFiniteError& e) {
        throw TrainingError(e.what() + where());
      }
      std::vector<const Tensor<float>*> grad_ptrs;
      for (const auto& g : grads) grad_ptrs.push_back(&g);
      try {
        adam_step(params, grad_ptrs, adam);
      } catch (const NonFiniteGradient& e) {
        throw TrainingError(e.what() + where());
      }
      loss_sum += loss;
      ++batches;
    }
    rec.train_loss = batches > 0 ? loss_sum / batches : 0.0;
    rec.val_aiou = config.validation_override ? config.validation_override(net, epoch)
                                              : validation_aiou(net, val_set, config.batch_size);
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.history.epochs.push_back(rec);
    if (config.on_epoch) config.on_epoch(rec);

    if (rec.val_aiou > result.meta.val_aiou) {
      result.meta.val_aiou = rec.val_aiou;
      result.meta.epoch = epoch;
      result.history.best_epoch = epoch;
      result.network = net;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      break;
    }
  }
  return result;
}

}  // namespace epseg
