#pragma once

#include "varmech/problems.hpp"

#include <optional>
#include <string>
#include <vector>

namespace varmech::train {

struct TrainerError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DivergenceDetected : TrainerError {
  using TrainerError::TrainerError;
};
struct NonFiniteLoss : TrainerError {
  using TrainerError::TrainerError;
};
struct CorruptCheckpoint : TrainerError {
  using TrainerError::TrainerError;
};

struct Schedule {
  int epochs_per_sample = 100; // K: epochs per sample per window
  int max_loops = 2000;
  double alpha = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int stable_window = 20;   // W loops
  double stable_tol = 0.01; // reported stable-onset tolerance
  // early-exit tolerance: training stops once two consecutive W-loop windows
  // sit within this relative band; 0 disables the early exit entirely
  double stop_tol = 1e-5;
  uint64_t seed = 0;
  bool reset_opt_on_switch = false; // ablation switch; moments persist by default
  bool pooled = false;              // baseline: mean loss over samples each epoch
};

struct TraceEntry {
  long epoch; // global, 0-based
  int loop;
  int sample_index;
  double loss;
};

struct LossTrace {
  std::vector<TraceEntry> entries;
  std::vector<long> switch_epochs; // first epoch of each new active sample
  std::vector<std::string> sample_labels;
  int epochs_per_sample = 0;
  int loops = 0;

  // loss at the last epoch of the given sample window
  double end_of_window(int loop, int sample_index) const;
  bool multi_sample() const { return sample_labels.size() > 1; }
};

// Smallest loop s such that for every sample the end-of-window losses over
// loops [s, s+window) satisfy (max-min)/|median| < tol. nullopt = NotStable.
std::optional<int> detect_stable_phase(const LossTrace& trace, int window, double tol);

struct SawtoothMetrics {
  double jump_fraction = 0.0;        // switches where the loss jumped upward
  double mean_jump_ratio = 0.0;      // mean loss(after)/loss(before) at switches
  double decay_fraction = 0.0;       // windows whose final loss < initial loss
  long switches = 0;
};
// post-onset switch statistics; throws SingleSampleTrace for one-sample traces
SawtoothMetrics sawtooth_metrics(const LossTrace& trace, int stable_onset_loop);

struct AdamState {
  std::vector<double> m, v;
  long t = 0;
  void init(size_t n) {
    m.assign(n, 0.0);
    v.assign(n, 0.0);
    t = 0;
  }
};

struct TrainedModel {
  prob::ProblemKind kind = prob::ProblemKind::brachistochrone;
  std::string family;
  prob::ModelParams params;
  std::vector<prob::SampleFeatures> samples;
  Schedule schedule;
  LossTrace trace;
  std::optional<int> stable_onset; // loop index
  AdamState opt;
  long total_epochs = 0;
  int loops_done = 0;
  double initial_loss = 0.0;
};

// hook invoked after each epoch's gradient evaluation, before the update;
// the loss object still holds the evaluated tape state
struct EpochObserver {
  virtual ~EpochObserver() = default;
  virtual void on_epoch(int sample_index, long epoch, prob::LossFunction& loss) = 0;
};

// Cyclic per-sample training with parameters (and by default optimizer
// moments) inherited across switches. Stops at max_loops or once the trace
// has been stable for the detection window plus one confirmation window.
TrainedModel train_switchable(const prob::ProblemConfig& cfg, const prob::ModelParams& init,
                              const std::vector<prob::SampleFeatures>& samples,
                              const Schedule& sched, EpochObserver* observer = nullptr);

// continue a run in place; bit-exact with an uninterrupted run
void resume_training(TrainedModel& model, const prob::ProblemConfig& cfg, int extra_loops,
                     EpochObserver* observer = nullptr);

// per-window loss evaluation counts of the last run (instrumentation)
struct EvalCounts {
  std::vector<std::vector<long>> per_window; // [window][sample] evaluation count
};
const EvalCounts& last_eval_counts();

// checkpoint round trip (bit-exact restore)
nlohmann::json run_to_json(const TrainedModel& m);
TrainedModel run_from_json(const nlohmann::json& j);
void save_run(const TrainedModel& m, const std::string& path);
TrainedModel load_run(const std::string& path);

} // namespace varmech::train
