#pragma once

// Task streams, the method catalogue, the per-task training loop,
// class-IL / task-IL evaluation and the summary metrics.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "maskcl/data.hpp"
#include "maskcl/errors.hpp"
#include "maskcl/memory.hpp"
#include "maskcl/model.hpp"
#include "maskcl/numerics.hpp"
#include "maskcl/objective.hpp"
#include "maskcl/perturb.hpp"

namespace maskcl {

// ---------------------------------------------------------------------------
// Task stream

struct Task {
  std::vector<std::size_t> classes;
  LabeledDataset train;
  LabeledDataset test;
};

struct TaskStream {
  std::vector<Task> tasks;
  std::size_t class_count = 0;

  std::size_t task_count() const noexcept { return tasks.size(); }

  ClassMask mask(std::size_t t) const { return ClassMask::of(class_count, tasks.at(t).classes); }

  // Classes of tasks 0..t-1.
  std::vector<std::size_t> classes_before(std::size_t t) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < t && i < tasks.size(); ++i)
      out.insert(out.end(), tasks[i].classes.begin(), tasks[i].classes.end());
    return out;
  }

  ClassMask mask_through(std::size_t t) const {
    return ClassMask::of(class_count, classes_before(t + 1));
  }
};

// Splits train/test by class label; task i receives classes
// order[i*k .. i*k+k-1]. An empty order means natural order 0..K-1.
inline TaskStream build_stream(const DataSplits& data, std::size_t classes_per_task,
                               std::vector<std::size_t> order = {}) {
  const std::size_t k_total = data.train.class_count;
  if (data.test.class_count != k_total) throw ConfigError("build_stream: train/test class counts differ");
  if (classes_per_task == 0 || k_total % classes_per_task != 0)
    throw ConfigError("build_stream: " + std::to_string(k_total) + " classes not divisible by " +
                      std::to_string(classes_per_task) + " per task");
  if (order.empty()) {
    order.resize(k_total);
    for (std::size_t c = 0; c < k_total; ++c) order[c] = c;
  }
  {
    auto sorted = order;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t c = 0; c < k_total; ++c)
      if (sorted.size() != k_total || sorted[c] != c)
        throw ConfigError("build_stream: order is not a permutation of the class set");
  }

  const std::size_t n_tasks = k_total / classes_per_task;
  std::vector<std::size_t> task_of(k_total);
  for (std::size_t i = 0; i < k_total; ++i) task_of[order[i]] = i / classes_per_task;

  auto split = [&](const LabeledDataset& ds) {
    std::vector<std::vector<std::size_t>> rows(n_tasks);
    for (std::size_t i = 0; i < ds.size(); ++i) rows[task_of[ds.labels[i]]].push_back(i);
    return rows;
  };
  const auto train_rows = split(data.train);
  const auto test_rows = split(data.test);

  TaskStream s;
  s.class_count = k_total;
  for (std::size_t t = 0; t < n_tasks; ++t) {
    Task task;
    task.classes.assign(order.begin() + static_cast<std::ptrdiff_t>(t * classes_per_task),
                        order.begin() + static_cast<std::ptrdiff_t>((t + 1) * classes_per_task));
    task.train = data.train.subset(train_rows[t]);
    task.test = data.test.subset(test_rows[t]);
    s.tasks.push_back(std::move(task));
  }
  return s;
}

// ---------------------------------------------------------------------------
// Methods

enum class Method { sgd, sgd_mr, cfsgmf, er, er_mr, derpp, derpp_mr, joint };

inline constexpr Method kAllMethods[] = {Method::sgd,   Method::sgd_mr, Method::cfsgmf,
                                         Method::er,    Method::er_mr,  Method::derpp,
                                         Method::derpp_mr, Method::joint};

inline std::string_view method_name(Method m) {
  switch (m) {
    case Method::sgd: return "SGD";
    case Method::sgd_mr: return "SGD_MR";
    case Method::cfsgmf: return "CFSGMF";
    case Method::er: return "ER";
    case Method::er_mr: return "ER_MR";
    case Method::derpp: return "DERPP";
    case Method::derpp_mr: return "DERPP_MR";
    case Method::joint: return "JOINT";
  }
  return "?";
}

// Accepts the canonical names plus the table spellings (SGD+MR, ERMR,
// DER++, DERMR++), case-insensitively.
inline Method parse_method(std::string_view text) {
  std::string s;
  for (char c : text) s.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
  if (s == "SGD+MR" || s == "SGDMR") return Method::sgd_mr;
  if (s == "ERMR") return Method::er_mr;
  if (s == "DER++") return Method::derpp;
  if (s == "DERMR++" || s == "DER++MR" || s == "DERPPMR") return Method::derpp_mr;
  for (auto m : kAllMethods)
    if (s == method_name(m)) return m;
  throw ConfigError("unknown method '" + std::string(text) + "'");
}

inline bool uses_buffer(Method m) {
  return m == Method::er || m == Method::er_mr || m == Method::derpp || m == Method::derpp_mr;
}
inline bool masks_current(Method m) {
  return m == Method::sgd_mr || m == Method::cfsgmf || m == Method::er_mr || m == Method::derpp_mr;
}
inline bool is_derpp(Method m) { return m == Method::derpp || m == Method::derpp_mr; }

struct MethodConfig {
  Method method = Method::sgd;
  double lr = 0.03;
  std::size_t buffer_capacity = 0;
  double derpp_alpha = 0.2;  // logit-MSE weight
  double derpp_beta = 1.0;   // replay-CE weight
  double cfgm_alpha = 50.0;  // input step size
  double cfgm_weight = 1.0;  // weight of the pseudo-sample CE term
  bool cfgm_clip = true;     // clip pseudo-samples to [0, 1]
  std::size_t epochs_per_task = 1;
  std::size_t batch_size = 10;
  std::size_t replay_batch_size = 10;
  bool mask_replay = false;        // ablation: restrict replay CE to classes seen so far
  bool mask_distillation = false;  // ablation: restrict DER++ logit MSE to classes seen so far

  void validate() const {
    const auto name = std::string(method_name(method));
    if (!(lr > 0.0)) throw ConfigError(name + ": lr must be positive");
    if (batch_size == 0) throw ConfigError(name + ": batch size must be positive");
    if (epochs_per_task == 0) throw ConfigError(name + ": epochs must be positive");
    if (uses_buffer(method)) {
      if (buffer_capacity == 0) throw ConfigError(name + " requires a buffer capacity > 0");
      if (replay_batch_size == 0) throw ConfigError(name + ": replay batch size must be positive");
    } else if (buffer_capacity != 0) {
      throw ConfigError(name + " is a zero-memory method; buffer must be 0");
    }
    if (is_derpp(method) && (derpp_alpha < 0.0 || derpp_beta < 0.0))
      throw ConfigError(name + ": alpha and beta must be >= 0");
    if (method == Method::cfsgmf && !(cfgm_alpha > 0.0))
      throw ConfigError(name + ": cfgm alpha must be > 0");
  }
};

// Split-MNIST hyperparameters (lr, and DER++'s alpha/beta) per method and
// buffer. Masked variants share their parent's settings. Buffer sizes other
// than 200/500/5120 take the nearest listed row.
inline MethodConfig mnist_defaults(Method m, std::size_t buffer = 0) {
  MethodConfig c;
  c.method = m;
  c.buffer_capacity = uses_buffer(m) ? (buffer == 0 ? 200 : buffer) : 0;
  const std::size_t b = c.buffer_capacity;
  const int row = b == 0 ? -1 : (b < 350 ? 0 : (b < 2810 ? 1 : 2));
  switch (m) {
    case Method::sgd:
    case Method::sgd_mr:
    case Method::cfsgmf:
    case Method::joint:
      c.lr = 0.03;
      break;
    case Method::er:
    case Method::er_mr:
      c.lr = row == 0 ? 0.01 : 0.1;
      break;
    case Method::derpp:
    case Method::derpp_mr: {
      constexpr double lr[] = {0.03, 0.03, 0.1};
      constexpr double alpha[] = {0.2, 1.0, 0.2};
      constexpr double beta[] = {1.0, 0.5, 0.5};
      c.lr = lr[row];
      c.derpp_alpha = alpha[row];
      c.derpp_beta = beta[row];
      break;
    }
  }
  return c;
}

// ---------------------------------------------------------------------------
// Losses

enum class TermKind { ce, mse };

// One weighted loss on one batch. For ce, `target` is one-hot and `mask`
// (if set) restricts the softmax. For mse, `target` holds reference logits
// and `mask` (if set) limits the comparison to allowed columns.
struct LossTerm {
  TermKind kind = TermKind::ce;
  Matrix x;
  Matrix target;
  std::optional<ClassMask> mask;
  double weight = 1.0;
};

struct ObjectiveResult {
  double loss = 0.0;
  Gradients grads;
  std::vector<Matrix> logits;  // per term, before the update
};

// Weighted loss of one term given its logits; writes the weighted logit
// gradient when grad_out is non-null.
inline double term_loss(const LossTerm& term, const Matrix& z, Matrix* grad_out) {
  double loss = 0.0;
  Matrix logit_grad;
  if (term.kind == TermKind::ce) {
    auto out = term.mask ? masked_ce(z, term.target, *term.mask) : ce(z, term.target);
    loss = out.loss;
    logit_grad = std::move(out.logit_grad);
  } else {
    Matrix target = term.target;
    if (term.mask) {
      for (std::size_t i = 0; i < target.rows(); ++i)
        for (std::size_t j = 0; j < target.cols(); ++j)
          if (!term.mask->allowed(j)) target(i, j) = z(i, j);
    }
    auto out = mse(z, target);
    loss = out.loss;
    logit_grad = std::move(out.grad);
  }
  if (grad_out) {
    for (double& g : logit_grad.values()) g *= term.weight;
    *grad_out = std::move(logit_grad);
  }
  return term.weight * loss;
}

// Scalar sum of weighted term losses; used by gradient checks.
inline double objective_value(const MlpParams& model, std::span<const LossTerm> terms) {
  double total = 0.0;
  for (const auto& t : terms) total += term_loss(t, forward(model, t.x).logits(), nullptr);
  return total;
}

inline ObjectiveResult objective_and_gradient(const MlpParams& model, std::span<const LossTerm> terms) {
  if (terms.empty()) throw ConfigError("objective: no loss terms");
  ObjectiveResult r;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    const ForwardTrace trace = forward(model, terms[i].x);
    Matrix logit_grad;
    r.loss += term_loss(terms[i], trace.logits(), &logit_grad);
    Gradients g = backward(model, trace, logit_grad);
    if (i == 0) {
      r.grads = std::move(g);
    } else {
      r.grads += g;
    }
    r.logits.push_back(trace.logits());
  }
  return r;
}

// ---------------------------------------------------------------------------
// Training

class Learner {
 public:
  Learner(MethodConfig config, MlpParams model, Rng rng)
      : config_(config), model_(std::move(model)), rng_(std::move(rng)),
        buffer_(config.buffer_capacity) {}

  const MethodConfig& config() const noexcept { return config_; }
  const MlpParams& model() const noexcept { return model_; }
  const ReplayBuffer& buffer() const noexcept { return buffer_; }
  std::size_t tasks_done() const noexcept { return next_task_; }

  void train_task(const TaskStream& stream, std::size_t t) {
    if (config_.method == Method::joint)
      throw ProtocolError("JOINT trains on the union of tasks; use train_joint");
    if (t != next_task_)
      throw ProtocolError("tasks must be trained in order: expected task " +
                          std::to_string(next_task_) + ", got " + std::to_string(t));
    if (t >= stream.task_count()) throw ProtocolError("task index past end of stream");
    check_model(stream);
    const Task& task = stream.tasks[t];
    const ClassMask mask = stream.mask(t);
    for (std::size_t e = 0; e < config_.epochs_per_task; ++e) {
      const auto perm = rng_.shuffle(task.train.size());
      for (std::size_t start = 0; start < perm.size(); start += config_.batch_size) {
        const std::size_t end = std::min(perm.size(), start + config_.batch_size);
        const std::span<const std::size_t> rows(perm.data() + start, end - start);
        step(stream, t, mask, task.train.subset(rows));
      }
    }
    ++next_task_;
  }

  void train_joint(const TaskStream& stream) {
    if (config_.method != Method::joint) throw ProtocolError("train_joint is only for JOINT");
    if (next_task_ != 0) throw ProtocolError("JOINT model already trained");
    check_model(stream);
    std::vector<const LabeledDataset*> parts;
    for (const auto& task : stream.tasks) parts.push_back(&task.train);
    const LabeledDataset all = concat(parts);
    for (std::size_t e = 0; e < config_.epochs_per_task; ++e) {
      const auto perm = rng_.shuffle(all.size());
      for (std::size_t start = 0; start < perm.size(); start += config_.batch_size) {
        const std::size_t end = std::min(perm.size(), start + config_.batch_size);
        const LabeledDataset batch = all.subset({perm.data() + start, end - start});
        const LossTerm term{TermKind::ce, batch.inputs, one_hot(batch.labels, stream.class_count),
                            std::nullopt, 1.0};
        apply_sgd(model_, objective_and_gradient(model_, {&term, 1}).grads, config_.lr);
      }
    }
    next_task_ = stream.task_count();
  }

  // Builds the method's loss terms for one minibatch of task t. Draws from
  // the rng exactly as a training step would.
  std::vector<LossTerm> loss_terms(const TaskStream& stream, std::size_t t, const ClassMask& mask,
                                   const LabeledDataset& batch) {
    const std::size_t k = stream.class_count;
    const Method m = config_.method;
    std::vector<LossTerm> terms;
    terms.push_back({TermKind::ce, batch.inputs, one_hot(batch.labels, k),
                     masks_current(m) ? std::optional<ClassMask>(mask) : std::nullopt, 1.0});

    if (uses_buffer(m) && !buffer_.empty()) {
      const auto seen = stream.mask_through(t);
      if (is_derpp(m)) {
        const auto logit_idx = buffer_.sample_indices(config_.replay_batch_size, rng_);
        ReplayBatch b1 = gather(buffer_, logit_idx, k);
        terms.push_back({TermKind::mse, std::move(b1.x), std::move(b1.z),
                         config_.mask_distillation ? std::optional<ClassMask>(seen) : std::nullopt,
                         config_.derpp_alpha});
      }
      const auto ce_idx = buffer_.sample_indices(config_.replay_batch_size, rng_);
      ReplayBatch b2 = gather(buffer_, ce_idx, k);
      terms.push_back({TermKind::ce, std::move(b2.x), std::move(b2.y),
                       config_.mask_replay ? std::optional<ClassMask>(seen) : std::nullopt,
                       is_derpp(m) ? config_.derpp_beta : 1.0});
    }

    if (m == Method::cfsgmf && t > 0) {
      const auto previous = stream.classes_before(t);
      const auto clip = config_.cfgm_clip ? std::optional<InputRange>(InputRange{}) : std::nullopt;
      CfgmBatch pseudo = cfgm_batch(model_, batch.inputs, previous, rng_, config_.cfgm_alpha, clip);
      terms.push_back({TermKind::ce, std::move(pseudo.inputs), std::move(pseudo.targets),
                       std::nullopt, config_.cfgm_weight});
    }
    return terms;
  }

 private:
  void check_model(const TaskStream& stream) const {
    if (model_.class_count() != stream.class_count)
      throw ConfigError("model output size does not match the stream's class count");
  }

  void step(const TaskStream& stream, std::size_t t, const ClassMask& mask,
            const LabeledDataset& batch) {
    const auto terms = loss_terms(stream, t, mask, batch);
    ObjectiveResult r = objective_and_gradient(model_, terms);
    apply_sgd(model_, r.grads, config_.lr);
    if (uses_buffer(config_.method)) {
      const Matrix& z = r.logits.front();
      for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto x = batch.inputs.row(i);
        const auto zi = z.row(i);
        buffer_.add({{x.begin(), x.end()}, batch.labels[i], {zi.begin(), zi.end()}, t}, rng_);
      }
    }
  }

  MethodConfig config_;
  MlpParams model_;
  Rng rng_;
  ReplayBuffer buffer_;
  std::size_t next_task_ = 0;
};

// ---------------------------------------------------------------------------
// Evaluation and metrics

enum class EvalMode { class_il, task_il };

inline std::string_view eval_mode_name(EvalMode m) {
  return m == EvalMode::class_il ? "class_il" : "task_il";
}

// class-IL: argmax over all logits. task-IL: argmax over the task's classes.
// Ties resolve to the lowest class index.
inline double task_accuracy(const MlpParams& model, const Task& task, std::size_t class_count,
                            EvalMode mode) {
  if (task.test.size() == 0) return 0.0;
  const Matrix z = forward(model, task.test.inputs).logits();
  std::vector<bool> allowed(class_count, mode == EvalMode::class_il);
  for (auto c : task.classes) allowed[c] = true;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < z.rows(); ++i) {
    std::size_t best = class_count;
    for (std::size_t j = 0; j < class_count; ++j)
      if (allowed[j] && (best == class_count || z(i, j) > z(i, best))) best = j;
    if (best == task.test.labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(task.test.size());
}

inline std::vector<double> evaluate(const MlpParams& model, const TaskStream& stream, EvalMode mode) {
  std::vector<double> acc;
  for (const auto& task : stream.tasks)
    acc.push_back(task_accuracy(model, task, stream.class_count, mode));
  return acc;
}

// a[t][i]: accuracy on task i after training task t.
using AccuracyMatrix = std::vector<std::vector<double>>;

struct Metrics {
  double avg_accuracy = 0.0;
  double avg_forgetting = 0.0;
  bool forgetting_defined = true;  // false for single-task streams (reported as 0)
};

// Average accuracy: mean of the final row.
// Average forgetting: mean over i < T of max_{t >= i} a[t][i] - a[T][i].
inline Metrics metrics(const AccuracyMatrix& a) {
  const std::size_t n_tasks = a.size();
  if (n_tasks == 0) throw ConfigError("metrics: empty accuracy matrix");
  for (std::size_t t = 0; t < n_tasks; ++t)
    if (a[t].size() < n_tasks) throw ShapeError("metrics: accuracy matrix row too short");
  const auto& last = a.back();
  Metrics m;
  for (std::size_t i = 0; i < n_tasks; ++i) m.avg_accuracy += last[i];
  m.avg_accuracy /= static_cast<double>(n_tasks);
  if (n_tasks == 1) {
    m.forgetting_defined = false;
    return m;
  }
  for (std::size_t i = 0; i + 1 < n_tasks; ++i) {
    double best = a[i][i];
    for (std::size_t t = i; t < n_tasks; ++t) best = std::max(best, a[t][i]);
    m.avg_forgetting += best - last[i];
  }
  m.avg_forgetting /= static_cast<double>(n_tasks - 1);
  return m;
}

struct StreamResult {
  AccuracyMatrix class_il;
  AccuracyMatrix task_il;
  MlpParams model;
};

// Trains one freshly initialized network (seeded by `seed`) through the
// whole stream, evaluating both modes after every task.
inline StreamResult run_stream(const MethodConfig& config, const TaskStream& stream,
                               const std::vector<std::size_t>& hidden, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::size_t> dims;
  dims.push_back(stream.tasks.at(0).train.dim());
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(stream.class_count);
  MlpParams init = init_mlp(dims, rng);
  Learner learner(config, std::move(init), std::move(rng));

  StreamResult r;
  if (config.method == Method::joint) {
    learner.train_joint(stream);
    const auto ci = evaluate(learner.model(), stream, EvalMode::class_il);
    const auto ti = evaluate(learner.model(), stream, EvalMode::task_il);
    r.class_il.assign(stream.task_count(), ci);
    r.task_il.assign(stream.task_count(), ti);
  } else {
    for (std::size_t t = 0; t < stream.task_count(); ++t) {
      learner.train_task(stream, t);
      r.class_il.push_back(evaluate(learner.model(), stream, EvalMode::class_il));
      r.task_il.push_back(evaluate(learner.model(), stream, EvalMode::task_il));
    }
  }
  r.model = learner.model();
  return r;
}

}  // namespace maskcl
