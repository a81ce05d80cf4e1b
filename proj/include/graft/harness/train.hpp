#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "graft/harness/checkpoint.hpp"
#include "graft/harness/config.hpp"
#include "graft/harness/dataset.hpp"
#include "graft/ops.hpp"

// Single-threaded training loop. Everything that touches randomness draws
// from named streams off the run seed, and every reduction happens in a fixed
// order, so a rerun of the same config is bit-identical including the metrics
// file and the final checkpoint.

namespace graft {

struct MetricsRow {
  Index step = 0;
  double loss = 0.0;       // mean CE on the fixed train eval subset
  double train_acc = 0.0;  // accuracy on the same subset
  double test_acc = 0.0;   // accuracy on the full test split
};

struct TrainResult {
  std::vector<MetricsRow> rows;
  std::string metrics_path;
  std::string checkpoint_path;
};

inline std::string metrics_csv_row(const MetricsRow& r) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "%lld,%.9g,%.6f,%.6f\n", static_cast<long long>(r.step), r.loss,
                r.train_acc, r.test_acc);
  return buf;
}

namespace detail {

template <class S>
Tensor<S> image_tensor(const Dataset& d, std::size_t i) {
  const auto& img = d.images[i];
  std::vector<S> v(img.size());
  for (std::size_t j = 0; j < img.size(); ++j) v[j] = static_cast<S>(img[j]);
  return Tensor<S>::from_data(Shape{d.image_size, d.image_size, Index(3)}, std::move(v));
}

// AdamW with decoupled decay. Decay applies to matrices and higher-rank
// tables only; biases and norm scales are exempt.
template <class S>
struct AdamW {
  double lr, wd;
  double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  Index t = 0;
  std::vector<std::vector<S>> m, v;

  explicit AdamW(const ParamRegistry<S>& reg, double lr_, double wd_) : lr(lr_), wd(wd_) {
    for (const auto& [name, p] : reg.items) {
      m.emplace_back(p.value().size(), S(0));
      v.emplace_back(p.value().size(), S(0));
    }
  }

  void step(ParamRegistry<S>& reg) {
    ++t;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(t));
    for (std::size_t i = 0; i < reg.items.size(); ++i) {
      auto& [name, p] = reg.items[i];
      const bool decay = p.ndim() >= 2;
      auto& val = p.raw();
      const auto& g = p.grad();
      auto& mi = m[i];
      auto& vi = v[i];
      for (std::size_t j = 0; j < val.size(); ++j) {
        const double gj = static_cast<double>(g[j]);
        const double mj = b1 * static_cast<double>(mi[j]) + (1.0 - b1) * gj;
        const double vj = b2 * static_cast<double>(vi[j]) + (1.0 - b2) * gj * gj;
        mi[j] = static_cast<S>(mj);
        vi[j] = static_cast<S>(vj);
        double upd = (mj / bc1) / (std::sqrt(vj / bc2) + eps);
        if (decay) upd += wd * static_cast<double>(val[j]);
        val[j] = static_cast<S>(static_cast<double>(val[j]) - lr * upd);
      }
    }
  }
};

template <class S>
void sgd_step(ParamRegistry<S>& reg, double lr) {
  for (auto& [name, p] : reg.items) {
    auto& val = p.raw();
    const auto& g = p.grad();
    for (std::size_t j = 0; j < val.size(); ++j)
      val[j] = static_cast<S>(static_cast<double>(val[j]) -
                              lr * static_cast<double>(g[j]));
  }
}

}  // namespace detail

// Mean CE and accuracy over a fixed slice of a dataset, no tape.
template <class S>
std::pair<double, double> evaluate(const ModelParams<S>& model, const Dataset& data,
                                   std::size_t limit) {
  const std::size_t n = std::min(limit, data.images.size());
  double loss = 0.0;
  Index hits = 0;
  for (std::size_t i = 0; i < n; ++i) {
    Tensor<S> logits = model_forward(detail::image_tensor<S>(data, i), model);
    loss += static_cast<double>(cross_entropy(logits, data.labels[i]).item());
    if (argmax(logits) == data.labels[i]) ++hits;
  }
  return {loss / static_cast<double>(n), static_cast<double>(hits) / static_cast<double>(n)};
}

template <class S>
TrainResult train_model(const RunConfig& cfg) {
  validate_spec(cfg.spec);
  SyntheticTask task{cfg.spec.image_size, cfg.spec.num_classes, cfg.task.noise};
  validate_task(task);
  const auto [train_set, test_set] =
      generate_dataset(task, cfg.seed, cfg.task.train_n, cfg.task.test_n);
  ModelParams<S> model = build_model<S>(cfg.spec, cfg.seed);
  Rng batch_rng(mix_seed(cfg.seed, "batch"));

  std::filesystem::create_directories(cfg.out_dir);
  TrainResult result;
  result.metrics_path = cfg.out_dir + "/metrics.csv";
  result.checkpoint_path = cfg.out_dir + "/model.ckpt";
  std::ofstream metrics(result.metrics_path, std::ios::binary | std::ios::trunc);
  if (!metrics) throw IoError("cannot write metrics file '" + result.metrics_path + "'");
  metrics << "step,loss,train_acc,test_acc\n";

  const std::size_t eval_n = 256;
  auto record = [&](Index step) {
    const auto [loss, tr_acc] = evaluate(model, train_set, eval_n);
    const auto [_, te_acc] = evaluate(model, test_set, test_set.images.size());
    MetricsRow row{step, loss, tr_acc, te_acc};
    metrics << metrics_csv_row(row);
    metrics.flush();
    result.rows.push_back(row);
  };

  record(0);
  detail::AdamW<S> adamw(model.reg, cfg.optim.lr, cfg.optim.weight_decay);
  for (Index step = 1; step <= cfg.optim.steps; ++step) {
    Tape<S> tape;
    Tensor<S> loss;
    {
      typename Tape<S>::Scope scope(tape);
      Tensor<S> acc;
      for (Index b = 0; b < cfg.optim.batch; ++b) {
        const std::size_t idx = static_cast<std::size_t>(
            batch_rng.below(static_cast<std::uint64_t>(train_set.images.size())));
        Tensor<S> logits = model_forward(detail::image_tensor<S>(train_set, idx), model);
        Tensor<S> ce = cross_entropy(logits, train_set.labels[idx]);
        acc = acc.defined() ? add(acc, ce) : ce;
      }
      loss = scale(acc, S(1) / static_cast<S>(cfg.optim.batch));
    }
    const double lval = static_cast<double>(loss.item());
    if (!std::isfinite(lval))
      throw Error("divergence at step " + std::to_string(step) + ": loss is not finite");
    model.reg.zero_grads();
    tape.backward(loss);
    if (cfg.optim.kind == OptKind::AdamW)
      adamw.step(model.reg);
    else
      detail::sgd_step(model.reg, cfg.optim.lr);
    if (step % cfg.optim.eval_every == 0 || step == cfg.optim.steps) record(step);
  }

  save_checkpoint(snapshot(model.reg, canonical_config_text(cfg)), result.checkpoint_path);
  return result;
}

inline TrainResult train(const RunConfig& cfg) {
  return cfg.precision == Precision::Verify64 ? train_model<double>(cfg)
                                              : train_model<float>(cfg);
}

}  // namespace graft
