#pragma once

#include "epseg/adam.hpp"
#include "epseg/checkpoint.hpp"
#include "epseg/data.hpp"
#include "epseg/loss.hpp"
#include "epseg/metrics.hpp"
#include "epseg/unet.hpp"

#include <functional>
#include <map>
#include <string>
#include <vector>

namespace epseg {

struct EpochRecord {
  int epoch = 0;  // 1-based
  double train_loss = 0;
  double val_aiou = 0;
  double seconds = 0;
  int skipped_samples = 0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;

  std::string to_json() const;
};

struct TrainConfig {
  double lr = 1e-3;
  int batch_size = 32;
  int max_epochs = 100;
  // Epochs without a validation-aIoU improvement before stopping.
  int patience = 10;
  LossOptions loss;
  bool augment = true;
  AugmentConfig augmentation;
  std::uint64_t seed = 0;
  UNetConfig unet;

  // Replaces the validation pass (tests use it to pin the metric).
  std::function<double(const Network<float>&, int epoch)> validation_override;
  std::function<void(const EpochRecord&)> on_epoch;

  void validate() const;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainResult {
  Network<float> network;  // weights of the best validation epoch
  CheckpointMeta meta;
  TrainHistory history;
};

/// Adam on shuffled mini-batches (last partial batch kept), augmentation on the
/// training split only, validation aIoU after every epoch, early stopping, and
/// best-epoch weight selection. Deterministic for a fixed seed.
TrainResult train(const std::vector<InstanceSample>& train_set, const std::vector<InstanceSample>& val_set,
                  const TrainConfig& config);

using PredictFn = std::function<Tensor<float>(const Tensor<float>& batch, std::size_t first_index)>;

struct EvalOptions {
  int batch_size = 32;
  float threshold = 0.5f;
  double bin_width = 1.0;
  std::map<int, std::string> class_names;  // ids without a name are printed as numbers
};

/// Per-instance IoU records and border distances, aggregated into aIoU (over
/// batches of `batch_size`), mIoU, iIoU and a border-error histogram.
EvalReport evaluate(const PredictFn& predict, const std::vector<InstanceSample>& samples, bool with_ep,
                    const EvalOptions& options = {});
EvalReport evaluate(const Network<float>& net, const std::vector<InstanceSample>& samples,
                    const EvalOptions& options = {});

std::vector<EvalRecord> evaluation_records(const PredictFn& predict, const std::vector<InstanceSample>& samples,
                                           bool with_ep, const EvalOptions& options,
                                           std::vector<double>* batch_ious = nullptr);

// Validation aIoU with augmentation off.
double validation_aiou(const Network<float>& net, const std::vector<InstanceSample>& samples, int batch_size);

}  // namespace epseg
