#ifndef VPRG_TRAINER_HPP_
#define VPRG_TRAINER_HPP_

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "vprg/data_io.hpp"
#include "vprg/model.hpp"
#include "vprg/params.hpp"

namespace vprg {

struct TrainConfig {
  std::size_t epochs = 100;
  double base_lr = 1e-4;
  double decay_factor = 0.8;
  std::size_t decay_every = 20;  // epochs between decays
  std::size_t batch_size = 8;
  double clip_norm = 10.0;  // global gradient norm cap, 0 disables
  std::uint64_t seed = 1;
  bool use_time_loss = true;  // ablation switch for the order-aware term

  void validate() const;
};

double lr_at_epoch(std::size_t epoch, const TrainConfig& cfg);

// First/second-moment adaptive updates with bias correction. One slot per
// registered parameter, matched by position.
class AdamOptimizer {
 public:
  AdamOptimizer() = default;
  explicit AdamOptimizer(const ParamRegistry& params);

  // Consumes the accumulated gradients: clips them by global norm
  // (clip_norm 0 leaves them untouched), applies the update, then clears.
  void step(ParamRegistry& params, double lr, double clip_norm);

  std::size_t step_count() const { return steps_; }
  const std::vector<Tensor>& first_moments() const { return m_; }
  const std::vector<Tensor>& second_moments() const { return v_; }
  void restore(std::vector<Tensor> m, std::vector<Tensor> v, std::size_t steps);

  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;

 private:
  std::vector<Tensor> m_, v_;
  std::size_t steps_ = 0;
};

double global_grad_norm(const ParamRegistry& params);

struct NamedTensor {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<float> data;
};

// Everything needed to rebuild a trained model: parameters and optimizer
// moments at on-disk precision, plus bookkeeping for provenance checks.
struct Checkpoint {
  std::uint32_t epoch = 0;
  std::uint64_t step_count = 0;
  std::uint64_t config_hash = 0;
  std::string metrics_json;  // last loss components, free-form
  std::vector<NamedTensor> tensors;
};

std::uint64_t hash_train_setup(const ModelConfig& model_cfg, const TrainConfig& cfg);

Checkpoint capture_checkpoint(const DmrJrgModel& model, const AdamOptimizer& opt,
                              std::uint32_t epoch, std::uint64_t config_hash,
                              const std::string& metrics_json);
void restore_checkpoint(DmrJrgModel& model, AdamOptimizer& opt, const Checkpoint& ckpt);

// Container: magic, version, manifest length, manifest JSON (names, shapes,
// byte offsets), then little-endian 32-bit float payloads. The write goes to
// a temp file first and is renamed into place.
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

struct StepRecord {
  std::size_t epoch = 0;
  std::size_t step = 0;  // within the epoch
  double retrieval = 0.0;
  double local = 0.0;
  double global = 0.0;
  double time = 0.0;
  double coupling = 0.0;
  double total = 0.0;
  double lr = 0.0;
};

std::string step_record_json(const StepRecord& rec);

struct TrainResult {
  std::vector<StepRecord> log;
  Checkpoint final_checkpoint;
};

// Optimizes the model on matched (video, paragraph) pairs. Ground-truth
// intervals are never read. step_log, when set, receives one JSON line per
// step; on_epoch_end, when set, runs after each epoch's last step.
struct TrainHooks {
  std::ostream* step_log = nullptr;
  std::function<void(std::size_t epoch, const StepRecord& last)> on_epoch_end;
};

TrainResult train(DmrJrgModel& model, const Corpus& corpus, const TrainConfig& cfg,
                  const TrainHooks& hooks = {});

}  // namespace vprg

#endif  // VPRG_TRAINER_HPP_
