#ifndef IRN_TRAINING_HPP
#define IRN_TRAINING_HPP

#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "irn/dataset.hpp"
#include "irn/losses.hpp"
#include "irn/model.hpp"

namespace irn {

// Standard bias-corrected Adam. Moment buffers are parallel to the parameter
// list order; t increments exactly once per step.
template <class T>
struct AdamStateT {
  T beta1 = T(0.9), beta2 = T(0.999), eps = T(1e-8);
  int64_t t = 0;
  std::vector<std::vector<T>> m, v;

  void init_like(const std::vector<NamedParam<T>>& params);
  bool initialized() const { return !m.empty(); }
};

using AdamState = AdamStateT<float>;

// One optimizer step over populated gradients; the caller zeroes grads
// afterwards. A non-finite gradient aborts with an error naming the parameter.
template <class T>
void adam_step(const std::vector<NamedParam<T>>& params, AdamStateT<T>& state, T lr);

struct Schedule {
  double base_lr = 2e-4;
  std::vector<int64_t> milestones;  // strictly increasing
  double factor = 0.5;
};

// base_lr * factor^(number of milestones <= iter)
double lr_at(const Schedule& s, int64_t iter);

struct TrainConfig {
  int scale = 2;
  int patch_size = 64;
  int batch_size = 4;
  int64_t iters_pretrain = 2000;
  int64_t iters_finetune = 500;
  int64_t disc_warmup = 100;
  double lr = 2e-4;
  std::vector<int64_t> milestones;  // empty: the 50k recipe scaled to iters_pretrain
  double lr_finetune = 1e-4;
  std::vector<int64_t> milestones_finetune;  // empty: the 20k recipe scaled
  LossWeights lambdas{1.0f, 16.0f, 1.0f, 0.0f, Metric::L1, Metric::L2};
  LossWeights lambdas_finetune{0.01f, 16.0f, 1.0f, 0.0f, Metric::L1, Metric::L2};
  int growth = 16;
  int inv_blocks_per_module = 4;
  double clamp_scale = 1.0;
  double disc_width_mult = 0.25;
  uint64_t seed = 0;
  std::string dataset_dir;  // empty: synthetic corpus
  std::string dataset_glob = "*.png";
  int synthetic_count = 64;
  int synthetic_size = 160;
  bool hflip = true;
  bool vflip = true;
  int64_t ckpt_every = 500;
  int64_t log_every = 10;
  std::string out_dir = "irn_run";

  Schedule pretrain_schedule() const;
  Schedule finetune_schedule() const;
  void validate() const;
};

TrainConfig config_from_json(const nlohmann::json& j);
TrainConfig config_from_json_file(const std::string& path);
nlohmann::json config_to_json(const TrainConfig& cfg);

struct TrainLogRow {
  std::string stage;  // "pretrain" | "finetune"
  int64_t iter = 0;   // global iteration (finetune continues after pretrain)
  double lr = 0, total = 0, recon = 0, guide = 0, distr = 0;
};

// iter,lr,loss_total,loss_recon,loss_guide,loss_distr
std::string log_to_csv(const std::vector<TrainLogRow>& rows);

// A training session: corpus, model, discriminator, optimizer state and the
// RNG streams, all derived deterministically from the config.
class Trainer {
 public:
  explicit Trainer(const TrainConfig& cfg, bool load_data = true);

  const TrainConfig& config() const { return cfg_; }
  IrnModel& model() { return model_; }
  Discriminator& discriminator();
  PatchSource& data() { return data_; }
  const std::vector<TrainLogRow>& log() const { return log_; }
  int64_t pretrain_iter() const { return iter_pre_; }
  int64_t finetune_iter() const { return iter_ft_; }
  const std::string& abort_reason() const { return abort_; }

  // Run the stage to completion (resuming from the stored iteration).
  // Returns false on abort (non-finite loss); the last periodic checkpoint is
  // left in place.
  bool run_pretrain();
  bool run_finetune();

  void save(const std::string& path);
  // Restore parameters, optimizer state and counters from a checkpoint
  // written for the same architecture.
  void restore(const std::string& path);

  void write_log_csv(const std::string& path) const;

 private:
  std::pair<Tensor, Tensor> make_batch();
  void checkpoint_if_due(int64_t done_iters);

  TrainConfig cfg_;
  PatchSource data_;
  IrnModel model_;
  AdamState opt_;
  std::optional<Discriminator> disc_;
  AdamState disc_opt_;
  Rng rng_data_;
  Rng rng_latent_;
  int64_t iter_pre_ = 0;
  int64_t iter_ft_ = 0;
  int64_t warmup_done_ = 0;
  std::vector<TrainLogRow> log_;
  std::string abort_;
};

// Inference-only checkpoint load: rebuilds the model from the config echo.
struct LoadedModel {
  TrainConfig config;
  IrnModel model;
};
LoadedModel load_checkpoint_model(const std::string& path);

}  // namespace irn

#endif
