#include "varmech/io.hpp"
#include "varmech/trainer.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>

using namespace varmech;

namespace {

// synthetic trace: one entry per epoch, given per-(loop, sample) end losses
train::LossTrace synth_trace(const std::vector<std::vector<double>>& eow, int n_samples,
                             int k = 3) {
  train::LossTrace t;
  t.epochs_per_sample = k;
  t.loops = static_cast<int>(eow.size());
  for (int s = 0; s < n_samples; ++s) t.sample_labels.push_back("s" + std::to_string(s));
  long epoch = 0;
  for (int loop = 0; loop < t.loops; ++loop)
    for (int s = 0; s < n_samples; ++s)
      for (int e = 0; e < k; ++e) {
        const double base = eow[loop][s];
        // simple within-window decay toward the end-of-window value
        t.entries.push_back({epoch, loop, s, base * (1.0 + 0.2 * (k - 1 - e))});
        if (e == 0 && epoch > 0 && n_samples > 1) t.switch_epochs.push_back(epoch);
        ++epoch;
      }
  return t;
}

} // namespace

TEST_CASE("stable phase detection on constructed traces") {
  // constant after loop 40
  std::vector<std::vector<double>> eow;
  for (int loop = 0; loop < 80; ++loop) {
    const double v = loop < 40 ? 10.0 - 0.1 * loop : 6.0;
    eow.push_back({v, v * 2.0});
  }
  auto t = synth_trace(eow, 2);
  auto onset = train::detect_stable_phase(t, 10, 0.01);
  REQUIRE(onset.has_value());
  CHECK(*onset == 40);

  // monotone divergence never stabilizes
  eow.clear();
  for (int loop = 0; loop < 80; ++loop) eow.push_back({std::pow(1.5, loop)});
  auto t2 = synth_trace(eow, 1);
  CHECK_FALSE(train::detect_stable_phase(t2, 10, 0.01).has_value());
}

TEST_CASE("sawtooth metrics on a constructed alternating trace") {
  // two samples, stable from the start, upward jump at every switch and
  // within-window decay (end-of-window below the window start)
  std::vector<std::vector<double>> eow(30, std::vector<double>{1.0, 1.3});
  auto t = synth_trace(eow, 2);
  auto m = train::sawtooth_metrics(t, 0);
  CHECK(m.jump_fraction == doctest::Approx(1.0));
  CHECK(m.decay_fraction == doctest::Approx(1.0));
  CHECK(m.switches > 0);

  auto t1 = synth_trace(std::vector<std::vector<double>>(30, std::vector<double>{1.0}), 1);
  CHECK_THROWS_AS(train::sawtooth_metrics(t1, 0), prob::SingleSampleTrace);
}

TEST_CASE("single-sample training has no switch epochs") {
  prob::ProblemConfig cfg = io::default_problem_config(prob::ProblemKind::brachistochrone);
  auto samples = prob::make_sample_set(cfg.kind, "h50");
  train::Schedule sched = io::default_schedule(cfg.kind, 0);
  sched.max_loops = 3;
  auto model = train::train_switchable(cfg, prob::default_model(cfg.kind, 0), samples, sched);
  CHECK(model.trace.switch_epochs.empty());
  CHECK(model.total_epochs == 300);
  CHECK(model.trace.entries.size() == 300);
}

TEST_CASE("duplicate samples behave like single-sample training") {
  prob::ProblemConfig cfg = io::default_problem_config(prob::ProblemKind::brachistochrone);
  auto one = prob::make_sample_set(cfg.kind, "h50");
  std::vector<prob::SampleFeatures> two = {one[0], one[0]};
  train::Schedule sched = io::default_schedule(cfg.kind, 0);
  sched.max_loops = 30;
  auto model = train::train_switchable(cfg, prob::default_model(cfg.kind, 0), two, sched);
  // identical losses: crossing a switch is one ordinary optimizer step, so
  // there is no systematic upward jump and the jump ratio sits at 1
  auto m = train::sawtooth_metrics(model.trace, 0);
  CHECK(m.jump_fraction < 0.2);
  CHECK(m.mean_jump_ratio == doctest::Approx(1.0).epsilon(0.01));
}

TEST_CASE("only the active sample's loss is evaluated within a window") {
  prob::ProblemConfig cfg = io::default_problem_config(prob::ProblemKind::brachistochrone);
  auto samples = prob::make_sample_set(cfg.kind, "h(30-50)");
  train::Schedule sched = io::default_schedule(cfg.kind, 0);
  sched.max_loops = 4;
  train::train_switchable(cfg, prob::default_model(cfg.kind, 0), samples, sched);
  const auto& counts = train::last_eval_counts();
  REQUIRE(counts.per_window.size() == 8); // 4 loops x 2 windows
  for (size_t w = 0; w < counts.per_window.size(); ++w) {
    const int active = static_cast<int>(w % 2);
    CHECK(counts.per_window[w][active] == sched.epochs_per_sample);
    CHECK(counts.per_window[w][1 - active] == 0);
  }
}

TEST_CASE("training is fully deterministic") {
  prob::ProblemConfig cfg = io::default_problem_config(prob::ProblemKind::catenary);
  auto samples = prob::make_sample_set(cfg.kind, "h(30-50)");
  train::Schedule sched = io::default_schedule(cfg.kind, 3);
  sched.max_loops = 10;
  auto a = train::train_switchable(cfg, prob::default_model(cfg.kind, 3), samples, sched);
  auto b = train::train_switchable(cfg, prob::default_model(cfg.kind, 3), samples, sched);
  REQUIRE(a.trace.entries.size() == b.trace.entries.size());
  for (size_t i = 0; i < a.trace.entries.size(); ++i)
    CHECK(a.trace.entries[i].loss == b.trace.entries[i].loss);
  CHECK(prob::flatten_model(a.params) == prob::flatten_model(b.params));
}

TEST_CASE("runaway step size raises DivergenceDetected") {
  prob::ProblemConfig cfg = io::default_problem_config(prob::ProblemKind::brachistochrone);
  auto samples = prob::make_sample_set(cfg.kind, "h50");
  train::Schedule sched = io::default_schedule(cfg.kind, 0);
  sched.alpha = 1e6;
  sched.max_loops = 50;
  CHECK_THROWS_AS(
      train::train_switchable(cfg, prob::default_model(cfg.kind, 0), samples, sched),
      train::DivergenceDetected);
}

TEST_CASE("checkpoint restore resumes bit-exactly") {
  prob::ProblemConfig cfg = io::default_problem_config(prob::ProblemKind::brachistochrone);
  auto samples = prob::make_sample_set(cfg.kind, "h(30-50)");
  train::Schedule sched = io::default_schedule(cfg.kind, 1);
  sched.max_loops = 12;
  sched.stable_tol = 0.0; // run the full budget
  auto full = train::train_switchable(cfg, prob::default_model(cfg.kind, 1), samples, sched);

  train::Schedule sched_a = sched;
  sched_a.max_loops = 7;
  auto part = train::train_switchable(cfg, prob::default_model(cfg.kind, 1), samples, sched_a);

  const auto path = (std::filesystem::temp_directory_path() / "vm_run.json").string();
  train::save_run(part, path);
  auto resumed = train::load_run(path);
  resumed.schedule.max_loops = 12;
  train::resume_training(resumed, cfg, 5);

  REQUIRE(resumed.trace.entries.size() == full.trace.entries.size());
  for (size_t i = 0; i < full.trace.entries.size(); ++i)
    CHECK(resumed.trace.entries[i].loss == full.trace.entries[i].loss);
  CHECK(prob::flatten_model(resumed.params) == prob::flatten_model(full.params));
  std::filesystem::remove(path);
}

TEST_CASE("corrupt checkpoints are rejected") {
  prob::ProblemConfig cfg = io::default_problem_config(prob::ProblemKind::brachistochrone);
  auto samples = prob::make_sample_set(cfg.kind, "h50");
  train::Schedule sched = io::default_schedule(cfg.kind, 0);
  sched.max_loops = 2;
  auto model = train::train_switchable(cfg, prob::default_model(cfg.kind, 0), samples, sched);
  nlohmann::json j = train::run_to_json(model);
  j["params"][0]["layer_sizes"] = {2, 7, 7, 1}; // mismatched layer sizes
  CHECK_THROWS_AS(train::run_from_json(j), train::CorruptCheckpoint);
}

TEST_CASE("optimizer moments persist across switches by default") {
  prob::ProblemConfig cfg = io::default_problem_config(prob::ProblemKind::brachistochrone);
  auto samples = prob::make_sample_set(cfg.kind, "h(30-50)");
  train::Schedule sched = io::default_schedule(cfg.kind, 0);
  sched.max_loops = 2;
  auto a = train::train_switchable(cfg, prob::default_model(cfg.kind, 0), samples, sched);
  CHECK(a.opt.t == a.total_epochs); // never reset

  sched.reset_opt_on_switch = true;
  auto b = train::train_switchable(cfg, prob::default_model(cfg.kind, 0), samples, sched);
  CHECK(b.opt.t == sched.epochs_per_sample); // counts only the last window
  CHECK(prob::flatten_model(a.params) != prob::flatten_model(b.params));
}
