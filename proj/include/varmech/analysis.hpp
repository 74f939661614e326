#pragma once

#include "varmech/oracles.hpp"
#include "varmech/path_partials.hpp"
#include "varmech/trainer.hpp"

#include <optional>
#include <string>
#include <vector>

namespace varmech::analysis {

struct ConstantReference : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// coefficient of determination 1 - SS_res / SS_tot
double r_squared(std::span<const double> pred, std::span<const double> exact);

struct GeneralizationPoint {
  double feature = 0.0;
  double r2 = 0.0;
  bool feasible = true;
};

struct Interval {
  double lo = 0.0, hi = 0.0;
  double width() const { return hi - lo; }
  bool contains(double x) const { return x >= lo && x <= hi; }
};

struct GeneralizationReport {
  std::string feature_name;
  double threshold = 0.9;
  std::vector<GeneralizationPoint> points;
  std::vector<Interval> intervals;
  std::vector<double> training_values;
};

// maximal contiguous grid runs with r2 >= threshold (boundary inclusive)
std::vector<Interval> generalization_range(std::span<const GeneralizationPoint> points,
                                           double threshold = 0.9);

double total_width(std::span<const Interval> intervals);
std::vector<Interval> interval_union(const std::vector<std::vector<Interval>>& sets);
std::optional<Interval> interval_containing(std::span<const Interval> intervals,
                                            std::span<const double> values);

// default sweep grids per problem family axis
std::vector<double> default_sweep_grid(prob::ProblemKind kind, const std::string& feature);

// Frozen-model generalization over one feature axis; the model parameters are
// checksummed before and after (no training happens here). Curves are scored
// on a dense 101-point grid against the analytic oracle.
GeneralizationReport generalization_sweep(const train::TrainedModel& model,
                                          const prob::ProblemConfig& cfg,
                                          const std::string& feature,
                                          std::span<const double> grid,
                                          int curve_points = 101);

// Plate sweep: per grid value solve (or load) the finite-difference reference
// and score min R^2 over the u, v, w fields at its nodes.
GeneralizationReport generalization_sweep_plate(const train::TrainedModel& model,
                                                const prob::ProblemConfig& cfg,
                                                const std::string& feature,
                                                std::span<const double> grid, int oracle_n,
                                                const std::string& cache_dir);

// per-field R^2 of a plate model against one reference solution
struct PlateFieldScores {
  double r2_u = 0.0, r2_v = 0.0, r2_w = 0.0;
  double min() const { return std::min({r2_u, r2_v, r2_w}); }
};
PlateFieldScores plate_model_scores(const prob::ModelParams& model,
                                    const prob::SampleFeatures& sample,
                                    const oracle::PlateReference& ref);

// curve model prediction on a grid (plain forward)
std::vector<double> predict_curve(const prob::ModelParams& model, prob::ProblemKind kind,
                                  const prob::SampleFeatures& sample,
                                  std::span<const double> x_grid);

// ---- learning activity ---------------------------------------------------------

// LA(i0 i1 i2 i3): epoch-averaged sum over interpolating points of the
// absolute four-factor chain-rule product along each input-to-output path.
struct LearningActivityTable {
  int n0 = 0, n1 = 0, n2 = 0, n3 = 0;
  std::vector<double> sums; // accumulated per-path epoch sums
  long epochs = 0;
  int points = 0; // interpolating points per epoch

  size_t index(int i0, int i1, int i2, int i3) const {
    return ((static_cast<size_t>(i0) * n1 + i1) * n2 + i2) * n3 + i3;
  }
  size_t size() const { return sums.size(); }
  // time average: accumulated sum / epochs
  std::vector<double> finalize() const;
};

// one epoch's accumulation: adds the per-point absolute path products of the
// graph's current backward state to the table sums and bumps the epoch count
void accumulate_learning_activity(LearningActivityTable& table, const prob::CurveLossGraph& g);

class LaAccumulator : public train::EpochObserver {
public:
  void on_epoch(int sample_index, long epoch, prob::LossFunction& loss) override;
  const LearningActivityTable& table() const { return table_; }
  LearningActivityTable& table() { return table_; }

private:
  LearningActivityTable table_;
};

struct RankedPath {
  int i0 = 0, i1 = 0, i2 = 0, i3 = 0;
  double la = 0.0;
  std::string origin_feature;
  bool sample_dependent = false;
};

struct PathRanking {
  std::vector<RankedPath> paths;       // top-k, descending LA
  double sample_dependent_fraction = 0.0;
};

PathRanking rank_paths(const LearningActivityTable& table, int k,
                       std::span<const std::string> input_feature_names,
                       std::span<const std::string> sample_dependent_names);

// experimental control: mean-of-samples loss every epoch, no switching
train::TrainedModel baseline_pooled_training(const prob::ProblemConfig& cfg,
                                             const prob::ModelParams& init,
                                             const std::vector<prob::SampleFeatures>& samples,
                                             train::Schedule sched);

// fnv1a-64 checksum of a parameter vector's bytes (frozen-model guarantee)
uint64_t param_checksum(const prob::ModelParams& model);

} // namespace varmech::analysis
