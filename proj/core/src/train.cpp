#include "flilab/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <ostream>

#include "flilab/error.hpp"
#include "flilab/rng.hpp"
#include "flilab/tensor_io.hpp"

namespace flilab {
namespace {

// Out of line: GCC 11 SLP vectorisation at -O3 drops the float round trip otherwise.
[[gnu::noinline]] double as_float(double v) { return static_cast<double>(static_cast<float>(v)); }

constexpr std::uint64_t kSplitStream = 0x73706c6974ULL;
constexpr std::uint64_t kEpochStream = 0x65706f6368ULL;
constexpr std::size_t kLogColumns = 12;

std::string fmt(double v) {
  if (std::isnan(v)) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::array<Tensor, 3> truth_batch(const FliDataset& ds, const std::vector<std::size_t>& idx) {
  std::array<std::vector<double>, 3> v;
  for (auto& x : v) x.reserve(idx.size());
  for (std::size_t p : idx) {
    v[0].push_back(ds.tau1[p]);
    v[1].push_back(ds.tau2[p]);
    v[2].push_back(ds.a_r[p]);
  }
  const Shape s{idx.size()};
  return {Tensor(s, std::move(v[0])), Tensor(s, std::move(v[1])), Tensor(s, std::move(v[2]))};
}

std::string optimizer_path(const std::string& p) { return p + ".opt"; }
std::string best_path(const std::string& p) { return p + ".best"; }

struct TrainState {
  std::size_t epoch = 0;
  PlateauScheduler sched;
  MFliNetWeights weights, best;
  TrainLog log;
};

std::vector<double> log_row_values(const TrainLogRow& r) {
  return {static_cast<double>(r.epoch), r.train_loss, r.train_heads[0], r.train_heads[1], r.train_heads[2],
          r.val_loss, r.val_heads[0], r.val_heads[1], r.val_heads[2], r.lr, r.seconds,
          r.checkpoint.empty() ? 0.0 : 1.0};
}

void write_checkpoint(const std::string& path, TrainState& st, Adam& adam) {
  save_weights(st.weights, path);
  save_weights(st.best, best_path(path));
  std::vector<StoredTensor> out;
  std::size_t i = 0;
  for (auto& t : st.weights.tensors()) {
    if (!t.trainable) continue;
    StoredTensor m{"adam.m." + t.name, t.tensor->shape(), {}}, v{"adam.v." + t.name, t.tensor->shape(), {}};
    for (double x : adam.first_moments()[i]) m.data.push_back(static_cast<float>(x));
    for (double x : adam.second_moments()[i]) v.data.push_back(static_cast<float>(x));
    out.push_back(std::move(m));
    out.push_back(std::move(v));
    ++i;
  }
  out.push_back({"state",
                 {7},
                 {static_cast<float>(st.epoch), static_cast<float>(adam.steps()), static_cast<float>(adam.skipped()),
                  static_cast<float>(st.sched.reductions), static_cast<float>(st.sched.wait),
                  st.sched.has_best ? 1.0f : 0.0f, static_cast<float>(st.sched.best)}});
  StoredTensor log{"log", {st.log.rows.size(), kLogColumns}, {}};
  for (const auto& r : st.log.rows)
    for (double x : log_row_values(r)) log.data.push_back(static_cast<float>(x));
  if (!st.log.rows.empty()) out.push_back(std::move(log));
  write_tensor_file(optimizer_path(path), kOptimizerMagic, out);
}

void read_checkpoint(const std::string& path, const ModelConfig& model_cfg, TrainState& st, Adam& adam) {
  MFliNetWeights w = load_weights(path, model_cfg);
  MFliNetWeights b = load_weights(best_path(path), model_cfg);
  // Copy values into the tensors the optimiser already tracks.
  auto dst = st.weights.tensors();
  auto src = w.tensors();
  for (std::size_t i = 0; i < dst.size(); ++i) {
    auto d = dst[i].tensor->mutable_data();
    auto s = src[i].tensor->data();
    std::copy(s.begin(), s.end(), d.begin());
  }
  st.best = std::move(b);

  std::map<std::string, StoredTensor> stored;
  for (auto& t : read_tensor_file(optimizer_path(path), kOptimizerMagic)) stored[t.name] = std::move(t);
  auto take = [&](const std::string& name) -> const StoredTensor& {
    const auto it = stored.find(name);
    if (it == stored.end()) throw FormatError(FormatErrorCode::missing_tensor, "tensor " + name + " not found in checkpoint");
    return it->second;
  };
  std::size_t i = 0;
  for (auto& t : st.weights.tensors()) {
    if (!t.trainable) continue;
    for (auto [prefix, moments] : {std::pair{"adam.m.", &adam.first_moments()}, std::pair{"adam.v.", &adam.second_moments()}}) {
      const auto& s = take(prefix + t.name);
      if (s.shape != t.tensor->shape())
        throw FormatError(FormatErrorCode::shape_mismatch, "tensor " + s.name + " has shape " + to_string(s.shape));
      (*moments)[i].assign(s.data.begin(), s.data.end());
    }
    ++i;
  }
  const auto& state = take("state");
  if (state.data.size() != 7) throw FormatError(FormatErrorCode::shape_mismatch, "tensor state has the wrong size");
  st.epoch = static_cast<std::size_t>(state.data[0]);
  adam.set_steps(static_cast<std::size_t>(state.data[1]));
  st.sched.reductions = static_cast<std::size_t>(state.data[3]);
  st.sched.wait = static_cast<std::size_t>(state.data[4]);
  st.sched.has_best = state.data[5] != 0.0f;
  st.sched.best = state.data[6];
  st.log.rows.clear();
  if (stored.count("log")) {
    const auto& log = stored.at("log");
    if (log.shape.size() != 2 || log.shape[1] != kLogColumns)
      throw FormatError(FormatErrorCode::shape_mismatch, "tensor log has shape " + to_string(log.shape));
    for (std::size_t r = 0; r < log.shape[0]; ++r) {
      const float* v = log.data.data() + r * kLogColumns;
      TrainLogRow row;
      row.epoch = static_cast<std::size_t>(v[0]);
      row.train_loss = v[1];
      row.train_heads = {v[2], v[3], v[4]};
      row.val_loss = v[5];
      row.val_heads = {v[6], v[7], v[8]};
      row.lr = v[9];
      row.seconds = v[10];
      if (v[11] != 0.0f) row.checkpoint = path;
      st.log.rows.push_back(row);
    }
  }
}

}  // namespace

void TrainConfig::validate() const {
  if (!(lr0 > 0) || !std::isfinite(lr0)) throw ConfigError("train.lr0", "must be positive");
  if (!(plateau_factor > 0 && plateau_factor <= 1)) throw ConfigError("train.plateau_factor", "must lie in (0, 1]");
  if (!(min_lr >= 0)) throw ConfigError("train.min_lr", "must be >= 0");
  if (batch_size == 0) throw ConfigError("train.batch_size", "must be positive");
  if (!(validation_fraction > 0 && validation_fraction < 1))
    throw ConfigError("train.validation_fraction", "must lie strictly between 0 and 1");
  for (double w : loss_weights)
    if (!(w >= 0) || !std::isfinite(w)) throw ConfigError("train.loss_weights", "weights must be finite and >= 0");
  if (checkpoint_every > 0 && checkpoint_path.empty())
    throw ConfigError("train.checkpoint_path", "required when checkpoint_every > 0");
}

LossTerms mse_multihead(const HeadOutputs& pred, const std::array<Tensor, 3>& truth, const Tensor& mask,
                        const std::array<double, 3>& weights) {
  const std::array<const Tensor*, 3> p{&pred.tau1, &pred.tau2, &pred.a_r};
  const Shape& s = mask.shape();
  if (s.size() != 1) throw DimensionError("mse_multihead: mask must be one-dimensional, got " + to_string(s));
  for (std::size_t h = 0; h < 3; ++h)
    if (p[h]->shape() != s || truth[h].shape() != s)
      throw DimensionError("mse_multihead: head " + std::to_string(h) + " shapes " + to_string(p[h]->shape()) + " / " +
                           to_string(truth[h].shape()) + " do not match mask " + to_string(s));
  double count = 0;
  for (double m : mask.data()) count += m > 0 ? 1.0 : 0.0;
  if (count == 0) throw UndefinedInputError("mse_multihead: mask selects no pixels");
  std::vector<double> sel(mask.size());
  for (std::size_t i = 0; i < sel.size(); ++i) sel[i] = mask.data()[i] > 0 ? 1.0 : 0.0;
  const Tensor selector(s, std::move(sel));

  LossTerms out;
  for (std::size_t h = 0; h < 3; ++h) {
    const Tensor d = sub(*p[h], truth[h]);
    const Tensor term = scale(sum(mul(mul(d, d), selector)), 1.0 / count);
    out.heads[h] = term.item();
    const Tensor weighted = scale(term, weights[h]);
    out.total = out.total.defined() ? add(out.total, weighted) : weighted;
  }
  return out;
}

Adam::Adam(std::vector<Tensor> params, double beta1, double beta2, double eps)
    : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& p : params_) {
    m_.emplace_back(p.size(), 0.0);
    v_.emplace_back(p.size(), 0.0);
  }
}

bool Adam::step(double lr) {
  for (const auto& p : params_) {
    if (!p.has_grad()) continue;
    for (double g : p.grad())
      if (!std::isfinite(g)) {
        ++skipped_;
        return false;
      }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    if (!p.has_grad()) continue;
    const auto g = p.grad();
    auto x = p.mutable_data();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < x.size(); ++j) {
      m[j] = as_float(beta1_ * m[j] + (1.0 - beta1_) * g[j]);
      v[j] = as_float(beta2_ * v[j] + (1.0 - beta2_) * g[j] * g[j]);
      const double mhat = m[j] / c1;
      const double vhat = v[j] / c2;
      x[j] = as_float(x[j] - lr * mhat / (std::sqrt(vhat) + eps_));
    }
  }
  return true;
}

PlateauScheduler::PlateauScheduler(double lr0, double factor, std::size_t patience, double min_lr)
    : lr0_(lr0), factor_(factor), min_lr_(min_lr), patience_(patience) {}

bool PlateauScheduler::observe(double loss) {
  if (!has_best || loss < best) {
    best = loss;
    has_best = true;
    wait = 0;
    return true;
  }
  if (++wait >= patience_) {
    ++reductions;
    wait = 0;
  }
  return false;
}

double PlateauScheduler::lr() const noexcept {
  // Rounded so the logged and checkpointed rate is exactly the one applied.
  return as_float(std::max(lr0_ * std::pow(factor_, static_cast<double>(reductions)), min_lr_));
}

void TrainLog::write_csv(std::ostream& os, bool include_time) const {
  os << "epoch,train_loss,train_tau1,train_tau2,train_a_r,val_loss,val_tau1,val_tau2,val_a_r,lr";
  if (include_time) os << ",seconds";
  os << ",checkpoint\n";
  for (const auto& r : rows) {
    os << r.epoch << ',' << fmt(r.train_loss);
    for (double h : r.train_heads) os << ',' << fmt(h);
    os << ',' << fmt(r.val_loss);
    for (double h : r.val_heads) os << ',' << fmt(h);
    os << ',' << fmt(r.lr);
    if (include_time) os << ',' << fmt(r.seconds);
    os << ',' << r.checkpoint << '\n';
  }
}

DataSplit split_pixels(const FliDataset& ds, double validation_fraction, std::uint64_t seed) {
  if (!(validation_fraction > 0 && validation_fraction < 1))
    throw ConfigError("train.validation_fraction", "must lie strictly between 0 and 1");
  std::vector<std::size_t> fg;
  for (std::size_t i = 0; i < ds.pixels(); ++i)
    if (ds.foreground(i)) fg.push_back(i);
  if (fg.size() < 2) throw UndefinedInputError("split_pixels: need at least two foreground pixels");
  CounterRng rng(seed, kSplitStream);
  for (std::size_t i = fg.size(); i-- > 1;) std::swap(fg[i], fg[static_cast<std::size_t>(rng() % (i + 1))]);
  auto n_val = static_cast<std::size_t>(std::llround(validation_fraction * static_cast<double>(fg.size())));
  n_val = std::clamp<std::size_t>(n_val, 1, fg.size() - 1);
  DataSplit s;
  s.validation.assign(fg.begin(), fg.begin() + static_cast<std::ptrdiff_t>(n_val));
  s.train.assign(fg.begin() + static_cast<std::ptrdiff_t>(n_val), fg.end());
  std::sort(s.validation.begin(), s.validation.end());
  std::sort(s.train.begin(), s.train.end());
  return s;
}

LossTerms evaluate_loss(const FliDataset& ds, const MFliNetWeights& w, const std::vector<std::size_t>& pixels,
                        const std::array<double, 3>& weights, std::size_t batch) {
  if (pixels.empty()) throw UndefinedInputError("evaluate_loss: no pixels");
  if (batch == 0) throw ConfigError("train.batch_size", "must be positive");
  std::array<double, 3> sse{};
  for (std::size_t b = 0; b < pixels.size(); b += batch) {
    const std::vector<std::size_t> idx(pixels.begin() + static_cast<std::ptrdiff_t>(b),
                                       pixels.begin() + static_cast<std::ptrdiff_t>(std::min(pixels.size(), b + batch)));
    const auto out = forward_pixels(normalized_batch(ds.tpsf, ds.gates(), idx), normalized_batch(ds.irf, ds.gates(), idx), w);
    const std::array<const Tensor*, 3> p{&out.tau1, &out.tau2, &out.a_r};
    const std::array<const std::vector<float>*, 3> t{&ds.tau1, &ds.tau2, &ds.a_r};
    for (std::size_t h = 0; h < 3; ++h) {
      const auto v = p[h]->data();
      for (std::size_t i = 0; i < idx.size(); ++i) {
        const double d = v[i] - static_cast<double>((*t[h])[idx[i]]);
        sse[h] += d * d;
      }
    }
  }
  LossTerms out;
  double total = 0;
  for (std::size_t h = 0; h < 3; ++h) {
    out.heads[h] = sse[h] / static_cast<double>(pixels.size());
    total += weights[h] * out.heads[h];
  }
  out.total = Tensor::scalar(total);
  return out;
}

TrainResult train(const FliDataset& ds, const ModelConfig& model_cfg, const TrainConfig& cfg,
                  const std::optional<std::string>& resume_from) {
  ds.validate();
  model_cfg.validate();
  cfg.validate();
  if (!ds.has_truth()) throw ConfigError("train.data", "dataset has no ground-truth maps");
  if (ds.gates() != model_cfg.gates)
    throw ConfigError("model.gates", "dataset has " + std::to_string(ds.gates()) + " gates, model expects " +
                                         std::to_string(model_cfg.gates));
  const DataSplit split = split_pixels(ds, cfg.validation_fraction, cfg.seed);

  TrainState st{0, PlateauScheduler(cfg.lr0, cfg.plateau_factor, cfg.patience, cfg.min_lr),
                MFliNetWeights::init(model_cfg), {}, {}};
  Adam adam(st.weights.parameters());

  auto epoch_row = [&](std::size_t epoch, double train_loss, const std::array<double, 3>& train_heads, double lr,
                       double seconds) {
    const LossTerms val = evaluate_loss(ds, st.weights, split.validation, cfg.loss_weights, cfg.batch_size);
    TrainLogRow row;
    row.epoch = epoch;
    row.train_loss = as_float(train_loss);
    for (std::size_t h = 0; h < 3; ++h) {
      row.train_heads[h] = as_float(train_heads[h]);
      row.val_heads[h] = as_float(val.heads[h]);
    }
    row.val_loss = as_float(val.total.item());
    row.lr = as_float(lr);
    row.seconds = as_float(seconds);
    if (st.sched.observe(row.val_loss)) st.best = st.weights.clone();
    return row;
  };

  if (resume_from) {
    read_checkpoint(*resume_from, model_cfg, st, adam);
  } else {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    st.log.rows.push_back(epoch_row(0, nan, {nan, nan, nan}, st.sched.lr(), 0.0));
  }

  const auto params = st.weights.parameters();
  for (std::size_t epoch = st.epoch + 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr = st.sched.lr();
    std::vector<std::size_t> order = split.train;
    CounterRng rng(cfg.seed, kEpochStream, epoch);
    for (std::size_t i = order.size(); i-- > 1;) std::swap(order[i], order[static_cast<std::size_t>(rng() % (i + 1))]);

    double loss_sum = 0;
    std::array<double, 3> head_sum{};
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(b),
                                         order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), b + cfg.batch_size)));
      for (auto p : params) p.zero_grad();
      Tape tape;
      const auto out = forward_pixels(normalized_batch(ds.tpsf, ds.gates(), idx), normalized_batch(ds.irf, ds.gates(), idx),
                                      st.weights);
      const LossTerms loss = mse_multihead(out, truth_batch(ds, idx), Tensor::full({idx.size()}, 1.0), cfg.loss_weights);
      tape.backward(loss.total);
      adam.step(lr);
      const double n = static_cast<double>(idx.size());
      loss_sum += loss.total.item() * n;
      for (std::size_t h = 0; h < 3; ++h) head_sum[h] += loss.heads[h] * n;
    }
    const double n = static_cast<double>(order.size());
    for (auto& h : head_sum) h /= n;
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    TrainLogRow row = epoch_row(epoch, loss_sum / n, head_sum, lr, seconds);
    st.epoch = epoch;
    const bool write = cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0;
    if (write) row.checkpoint = cfg.checkpoint_path;
    st.log.rows.push_back(row);
    if (write) write_checkpoint(cfg.checkpoint_path, st, adam);
  }
  return {st.best.clone(), st.weights.clone(), st.log};
}

}  // namespace flilab
