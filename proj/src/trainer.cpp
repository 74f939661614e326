#include "varmech/trainer.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>

namespace varmech::train {

namespace {

thread_local EvalCounts g_eval_counts;

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

bool window_stable(const LossTrace& trace, int s, int window, double tol) {
  if (s < 0 || s + window > trace.loops) return false;
  const int n_samples = static_cast<int>(trace.sample_labels.size());
  for (int smp = 0; smp < n_samples; ++smp) {
    std::vector<double> e(window);
    for (int r = 0; r < window; ++r) e[r] = trace.end_of_window(s + r, smp);
    const auto [mn, mx] = std::minmax_element(e.begin(), e.end());
    const double med = std::abs(median_of(e));
    if (!(med > 0.0) || (*mx - *mn) / med >= tol) return false;
  }
  return true;
}

} // namespace

double LossTrace::end_of_window(int loop, int sample_index) const {
  const int n_samples = static_cast<int>(sample_labels.size());
  const long idx =
      (static_cast<long>(loop) * n_samples + sample_index + 1) * epochs_per_sample - 1;
  return entries.at(static_cast<size_t>(idx)).loss;
}

std::optional<int> detect_stable_phase(const LossTrace& trace, int window, double tol) {
  for (int s = 0; s + window <= trace.loops; ++s)
    if (window_stable(trace, s, window, tol)) return s;
  return std::nullopt;
}

SawtoothMetrics sawtooth_metrics(const LossTrace& trace, int stable_onset_loop) {
  if (!trace.multi_sample())
    throw prob::SingleSampleTrace("sawtooth metrics need a multi-sample trace");

  SawtoothMetrics m;
  long jumps = 0, decays = 0, windows = 0;
  double ratio_sum = 0.0;
  const long onset_epoch =
      static_cast<long>(stable_onset_loop) * trace.sample_labels.size() * trace.epochs_per_sample;

  for (long sw : trace.switch_epochs) {
    if (sw <= onset_epoch || sw >= static_cast<long>(trace.entries.size())) continue;
    const double before = trace.entries[sw - 1].loss;
    const double after = trace.entries[sw].loss;
    ++m.switches;
    if (after > before) ++jumps;
    ratio_sum += after / before;
  }
  const int k = trace.epochs_per_sample;
  for (size_t start = 0; start + k <= trace.entries.size(); start += k) {
    if (trace.entries[start].epoch < onset_epoch) continue;
    ++windows;
    if (trace.entries[start + k - 1].loss < trace.entries[start].loss) ++decays;
  }
  if (m.switches > 0) {
    m.jump_fraction = static_cast<double>(jumps) / m.switches;
    m.mean_jump_ratio = ratio_sum / m.switches;
  }
  if (windows > 0) m.decay_fraction = static_cast<double>(decays) / windows;
  return m;
}

namespace {

struct Runner {
  const prob::ProblemConfig& cfg;
  TrainedModel& model;
  EpochObserver* observer;
  std::vector<std::unique_ptr<prob::LossFunction>> losses;
  std::vector<double> params, grad, grad_accum;

  Runner(const prob::ProblemConfig& c, TrainedModel& m, EpochObserver* obs)
      : cfg(c), model(m), observer(obs) {
    for (const auto& s : model.samples)
      losses.push_back(prob::make_loss(cfg, model.params, s));
    params = prob::flatten_model(model.params);
    grad.resize(params.size());
    grad_accum.resize(params.size());
    if (model.opt.m.empty()) model.opt.init(params.size());
    if (model.opt.m.size() != params.size())
      throw CorruptCheckpoint("optimizer state does not match parameter count");
  }

  void adam_step(const Schedule& s) {
    AdamState& o = model.opt;
    ++o.t;
    const double bc1 = 1.0 - std::pow(s.beta1, static_cast<double>(o.t));
    const double bc2 = 1.0 - std::pow(s.beta2, static_cast<double>(o.t));
    for (size_t i = 0; i < params.size(); ++i) {
      o.m[i] = s.beta1 * o.m[i] + (1.0 - s.beta1) * grad[i];
      o.v[i] = s.beta2 * o.v[i] + (1.0 - s.beta2) * grad[i] * grad[i];
      const double mhat = o.m[i] / bc1;
      const double vhat = o.v[i] / bc2;
      params[i] -= s.alpha * mhat / (std::sqrt(vhat) + s.eps);
    }
  }

  void run(int until_loops) {
    const Schedule& sched = model.schedule;
    const int n_samples = static_cast<int>(losses.size());
    const int k_epochs = sched.epochs_per_sample;
    const bool pooled = sched.pooled;

    int prev_active = -1;
    if (model.total_epochs > 0 && !pooled)
      prev_active = static_cast<int>((model.total_epochs / k_epochs - 1) % n_samples);

    for (int loop = model.loops_done; loop < until_loops; ++loop) {
      const int windows = pooled ? 1 : n_samples;
      for (int pos = 0; pos < windows; ++pos) {
        std::vector<long> evals_before(losses.size());
        for (size_t i = 0; i < losses.size(); ++i) evals_before[i] = losses[i]->eval_count();

        if (!pooled) losses[pos]->on_window_start(loop);
        if (sched.reset_opt_on_switch && prev_active != pos) model.opt.init(params.size());

        for (int e = 0; e < k_epochs; ++e) {
          double loss_value = 0.0;
          if (pooled) {
            std::fill(grad_accum.begin(), grad_accum.end(), 0.0);
            for (auto& lf : losses) {
              loss_value += lf->value_and_grad(params, grad);
              for (size_t i = 0; i < grad.size(); ++i) grad_accum[i] += grad[i];
            }
            loss_value /= n_samples;
            for (size_t i = 0; i < grad.size(); ++i) grad[i] = grad_accum[i] / n_samples;
          } else {
            loss_value = losses[pos]->value_and_grad(params, grad);
          }

          if (!std::isfinite(loss_value))
            throw NonFiniteLoss("non-finite loss at epoch " + std::to_string(model.total_epochs));
          if (model.total_epochs == 0) model.initial_loss = loss_value;
          if (std::abs(loss_value) > 1e6 * std::max(1.0, std::abs(model.initial_loss)))
            throw DivergenceDetected("loss " + std::to_string(loss_value) + " at epoch " +
                                     std::to_string(model.total_epochs) + " exceeds 1e6 x initial");

          const long epoch = model.total_epochs;
          if (e == 0 && epoch > 0 && prev_active != pos)
            model.trace.switch_epochs.push_back(epoch);
          model.trace.entries.push_back({epoch, loop, pos, loss_value});

          if (observer && !pooled) observer->on_epoch(pos, epoch, *losses[pos]);
          adam_step(sched);
          ++model.total_epochs;
        }
        prev_active = pos;

        std::vector<long> per_sample(losses.size());
        for (size_t i = 0; i < losses.size(); ++i)
          per_sample[i] = losses[i]->eval_count() - evals_before[i];
        g_eval_counts.per_window.push_back(std::move(per_sample));
      }

      ++model.loops_done;
      model.trace.loops = model.loops_done;

      const int w = sched.stable_window;
      if (sched.stop_tol > 0.0 && model.loops_done >= 2 * w &&
          window_stable(model.trace, model.loops_done - 2 * w, w, sched.stop_tol) &&
          window_stable(model.trace, model.loops_done - w, w, sched.stop_tol))
        break;
    }

    prob::unflatten_model(params, model.params);
    model.stable_onset = detect_stable_phase(model.trace, sched.stable_window, sched.stable_tol);
  }
};

} // namespace

TrainedModel train_switchable(const prob::ProblemConfig& cfg, const prob::ModelParams& init,
                              const std::vector<prob::SampleFeatures>& samples,
                              const Schedule& sched, EpochObserver* observer) {
  if (samples.empty()) throw TrainerError("need at least one training sample");

  TrainedModel model;
  model.kind = cfg.kind;
  model.params = init;
  model.samples = samples;
  model.schedule = sched;
  model.trace.epochs_per_sample = sched.epochs_per_sample;
  if (sched.pooled) {
    model.trace.sample_labels = {"pooled"};
  } else {
    for (const auto& s : samples) model.trace.sample_labels.push_back(s.label);
  }
  std::string fam;
  for (const auto& s : samples) fam += (fam.empty() ? "" : "+") + s.label;
  model.family = fam;

  g_eval_counts.per_window.clear();
  Runner runner(cfg, model, observer);
  runner.run(sched.max_loops);
  return model;
}

void resume_training(TrainedModel& model, const prob::ProblemConfig& cfg, int extra_loops,
                     EpochObserver* observer) {
  g_eval_counts.per_window.clear();
  Runner runner(cfg, model, observer);
  runner.run(model.loops_done + extra_loops);
}

const EvalCounts& last_eval_counts() { return g_eval_counts; }

// ---- checkpoint io ------------------------------------------------------------

nlohmann::json run_to_json(const TrainedModel& m) {
  nlohmann::json j;
  j["kind"] = prob::to_string(m.kind);
  j["family"] = m.family;
  j["total_epochs"] = m.total_epochs;
  j["loops_done"] = m.loops_done;
  j["initial_loss"] = m.initial_loss;
  if (m.stable_onset)
    j["stable_onset"] = *m.stable_onset;
  else
    j["stable_onset"] = nullptr;

  nlohmann::json js = nlohmann::json::array();
  for (const auto& s : m.samples)
    js.push_back({{"h", s.h}, {"l", s.l}, {"p", s.p}, {"b", s.b}, {"theta", s.theta},
                  {"label", s.label}});
  j["samples"] = js;

  const Schedule& s = m.schedule;
  j["schedule"] = {{"epochs_per_sample", s.epochs_per_sample},
                   {"max_loops", s.max_loops},
                   {"alpha", s.alpha},
                   {"beta1", s.beta1},
                   {"beta2", s.beta2},
                   {"eps", s.eps},
                   {"stable_window", s.stable_window},
                   {"stable_tol", s.stable_tol},
                   {"stop_tol", s.stop_tol},
                   {"seed", s.seed},
                   {"reset_opt_on_switch", s.reset_opt_on_switch},
                   {"pooled", s.pooled}};

  nlohmann::json nets = nlohmann::json::array();
  for (const auto& n : m.params.nets) nets.push_back(net::to_json(n));
  j["params"] = nets;
  j["opt"] = {{"m", m.opt.m}, {"v", m.opt.v}, {"t", m.opt.t}};

  nlohmann::json tr;
  std::vector<long> epochs;
  std::vector<int> loops, sample_idx;
  std::vector<double> losses;
  for (const auto& e : m.trace.entries) {
    epochs.push_back(e.epoch);
    loops.push_back(e.loop);
    sample_idx.push_back(e.sample_index);
    losses.push_back(e.loss);
  }
  tr["epoch"] = epochs;
  tr["loop"] = loops;
  tr["sample_index"] = sample_idx;
  tr["loss"] = losses;
  tr["switch_epochs"] = m.trace.switch_epochs;
  tr["sample_labels"] = m.trace.sample_labels;
  tr["epochs_per_sample"] = m.trace.epochs_per_sample;
  tr["loops"] = m.trace.loops;
  j["trace"] = tr;
  return j;
}

TrainedModel run_from_json(const nlohmann::json& j) {
  try {
    TrainedModel m;
    m.kind = prob::problem_kind_from_string(j.at("kind").get<std::string>());
    m.family = j.at("family").get<std::string>();
    m.total_epochs = j.at("total_epochs").get<long>();
    m.loops_done = j.at("loops_done").get<int>();
    m.initial_loss = j.at("initial_loss").get<double>();
    if (!j.at("stable_onset").is_null()) m.stable_onset = j.at("stable_onset").get<int>();

    for (const auto& s : j.at("samples")) {
      prob::SampleFeatures f;
      f.h = s.at("h").get<double>();
      f.l = s.at("l").get<double>();
      f.p = s.at("p").get<double>();
      f.b = s.at("b").get<double>();
      f.theta = s.at("theta").get<double>();
      f.label = s.at("label").get<std::string>();
      m.samples.push_back(std::move(f));
    }

    const auto& s = j.at("schedule");
    m.schedule.epochs_per_sample = s.at("epochs_per_sample").get<int>();
    m.schedule.max_loops = s.at("max_loops").get<int>();
    m.schedule.alpha = s.at("alpha").get<double>();
    m.schedule.beta1 = s.at("beta1").get<double>();
    m.schedule.beta2 = s.at("beta2").get<double>();
    m.schedule.eps = s.at("eps").get<double>();
    m.schedule.stable_window = s.at("stable_window").get<int>();
    m.schedule.stable_tol = s.at("stable_tol").get<double>();
    m.schedule.stop_tol = s.at("stop_tol").get<double>();
    m.schedule.seed = s.at("seed").get<uint64_t>();
    m.schedule.reset_opt_on_switch = s.at("reset_opt_on_switch").get<bool>();
    m.schedule.pooled = s.at("pooled").get<bool>();

    for (const auto& n : j.at("params")) m.params.nets.push_back(net::mlp_from_json(n));
    m.opt.m = j.at("opt").at("m").get<std::vector<double>>();
    m.opt.v = j.at("opt").at("v").get<std::vector<double>>();
    m.opt.t = j.at("opt").at("t").get<long>();
    if (m.opt.m.size() != m.params.param_count())
      throw CorruptCheckpoint("checkpoint optimizer/parameter size mismatch");

    const auto& tr = j.at("trace");
    const auto epochs = tr.at("epoch").get<std::vector<long>>();
    const auto loops = tr.at("loop").get<std::vector<int>>();
    const auto sample_idx = tr.at("sample_index").get<std::vector<int>>();
    const auto losses = tr.at("loss").get<std::vector<double>>();
    for (size_t i = 0; i < epochs.size(); ++i)
      m.trace.entries.push_back({epochs[i], loops[i], sample_idx[i], losses[i]});
    m.trace.switch_epochs = tr.at("switch_epochs").get<std::vector<long>>();
    m.trace.sample_labels = tr.at("sample_labels").get<std::vector<std::string>>();
    m.trace.epochs_per_sample = tr.at("epochs_per_sample").get<int>();
    m.trace.loops = tr.at("loops").get<int>();
    return m;
  } catch (const CorruptCheckpoint&) {
    throw;
  } catch (const std::exception& e) {
    throw CorruptCheckpoint(std::string("malformed run checkpoint: ") + e.what());
  }
}

void save_run(const TrainedModel& m, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw TrainerError("cannot open run checkpoint for writing: " + path);
  f << run_to_json(m).dump();
}

TrainedModel load_run(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw CorruptCheckpoint("cannot open run checkpoint: " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(f);
  } catch (const std::exception& e) {
    throw CorruptCheckpoint(std::string("unparseable run checkpoint: ") + e.what());
  }
  return run_from_json(j);
}

} // namespace varmech::train
