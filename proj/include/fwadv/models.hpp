#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <memory>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "fwadv/dataset.hpp"
#include "fwadv/error.hpp"
#include "fwadv/frank_wolfe.hpp"
#include "fwadv/random.hpp"
#include "fwadv/tensor.hpp"

namespace fwadv {

/// Untargeted attacks push away from `label`; targeted attacks pull toward it.
struct LossSpec {
  enum class Mode { Untargeted, Targeted };
  Mode mode = Mode::Untargeted;
  std::size_t label = 0;

  static LossSpec untargeted(std::size_t true_label) { return {Mode::Untargeted, true_label}; }
  static LossSpec targeted(std::size_t target) { return {Mode::Targeted, target}; }

  /// Whether a prediction counts as a successful attack.
  bool achieved_by(std::size_t prediction) const {
    return mode == Mode::Untargeted ? prediction != label : prediction == label;
  }
};

inline std::vector<double> softmax(std::span<const double> logits) {
  const double top = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double total = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    p[k] = std::exp(logits[k] - top);
    total += p[k];
  }
  for (auto& v : p) v /= total;
  return p;
}

struct CrossEntropy {
  double loss = 0.0;
  std::vector<double> dlogits;
};

/// -log softmax(logits)[label] and its gradient softmax - onehot.
inline CrossEntropy cross_entropy_and_grad(std::span<const double> logits, std::size_t label) {
  if (label >= logits.size()) throw ValidationError("cross entropy: label out of range");
  const double top = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (double z : logits) total += std::exp(z - top);
  CrossEntropy out;
  out.loss = std::log(total) - (logits[label] - top);
  out.dlogits.resize(logits.size());
  for (std::size_t k = 0; k < logits.size(); ++k) out.dlogits[k] = std::exp(logits[k] - top) / total;
  out.dlogits[label] -= 1.0;
  return out;
}

inline std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

/// A differentiable classifier with hand-written backpropagation.
///
/// Implementations keep all parameters in one flat buffer so the trainer and the
/// serializer can treat every model the same way.
class GradientModel {
public:
  struct ParameterBlock {
    std::string name;
    std::size_t size;
  };

  virtual ~GradientModel() = default;

  virtual std::string kind() const = 0;
  virtual Shape input_shape() const = 0;
  virtual std::size_t num_classes() const = 0;
  /// Width of the hidden layer (mlp) or number of filters (conv); 0 for linear.
  virtual std::size_t hidden() const = 0;
  virtual std::vector<ParameterBlock> parameter_blocks() const = 0;
  virtual std::unique_ptr<GradientModel> clone() const = 0;

  virtual std::vector<double> logits(const ImageTensor& x) const = 0;

  /// Backpropagates dlogits through the network. Writes d(loss)/dx into `dx` when it
  /// is non-null and accumulates parameter gradients into `dparams` when non-empty.
  virtual void backward(const ImageTensor& x, std::span<const double> dlogits, ImageTensor* dx,
                        std::span<double> dparams) const = 0;

  std::span<double> parameters() { return params_; }
  std::span<const double> parameters() const { return params_; }

  std::size_t predict(const ImageTensor& x) const {
    const auto z = logits(x);
    return argmax(z);
  }

  void check_input(const ImageTensor& x) const {
    if (!(x.shape() == input_shape()))
      throw ValidationError("model expects input " + to_string(input_shape()) + ", got " + to_string(x.shape()));
  }

protected:
  std::vector<double> params_;
};

/// Loss minimized by the attacker and its input gradient.
/// Targeted: CE(logits, target). Untargeted: -CE(logits, true_label).
inline LossAndGradient adversarial_objective(const GradientModel& model, const ImageTensor& x, const LossSpec& spec) {
  model.check_input(x);
  if (spec.label >= model.num_classes()) throw ValidationError("loss spec label out of range");
  const auto z = model.logits(x);
  auto ce = cross_entropy_and_grad(z, spec.label);
  const double sign = spec.mode == LossSpec::Mode::Untargeted ? -1.0 : 1.0;
  for (auto& g : ce.dlogits) g *= sign;
  LossAndGradient out{sign * ce.loss, ImageTensor(x.shape())};
  model.backward(x, ce.dlogits, &out.gradient, {});
  return out;
}

inline Objective make_objective(const GradientModel& model, const LossSpec& spec) {
  return [&model, spec](const ImageTensor& x) { return adversarial_objective(model, x, spec); };
}

// ---------------------------------------------------------------------------

namespace detail {

inline void fill_normal(std::span<double> xs, Rng& rng, double scale) {
  for (auto& x : xs) x = scale * rng.normal();
}

} // namespace detail

/// logits = W x + b.
class LinearSoftmax final : public GradientModel {
public:
  LinearSoftmax(Shape input, std::size_t classes, std::uint64_t seed = 0, double init_scale = 0.01)
      : input_(input), classes_(classes) {
    if (classes < 2) throw ValidationError("a classifier needs at least two classes");
    params_.assign(classes * input.size() + classes, 0.0);
    Rng rng(seed);
    detail::fill_normal(std::span<double>(params_).first(classes * input.size()), rng, init_scale);
  }

  std::string kind() const override { return "linear"; }
  Shape input_shape() const override { return input_; }
  std::size_t num_classes() const override { return classes_; }
  std::size_t hidden() const override { return 0; }
  std::vector<ParameterBlock> parameter_blocks() const override {
    return {{"W", classes_ * input_.size()}, {"b", classes_}};
  }
  std::unique_ptr<GradientModel> clone() const override { return std::make_unique<LinearSoftmax>(*this); }

  std::vector<double> logits(const ImageTensor& x) const override {
    check_input(x);
    const std::size_t d = input_.size();
    std::vector<double> z(classes_);
    for (std::size_t k = 0; k < classes_; ++k) {
      double acc = bias()[k];
      const double* w = params_.data() + k * d;
      for (std::size_t i = 0; i < d; ++i) acc += w[i] * x[i];
      z[k] = acc;
    }
    return z;
  }

  void backward(const ImageTensor& x, std::span<const double> dz, ImageTensor* dx,
                std::span<double> dparams) const override {
    const std::size_t d = input_.size();
    if (dx) {
      *dx = ImageTensor(input_);
      for (std::size_t k = 0; k < classes_; ++k) {
        const double* w = params_.data() + k * d;
        for (std::size_t i = 0; i < d; ++i) (*dx)[i] += dz[k] * w[i];
      }
    }
    if (!dparams.empty()) {
      for (std::size_t k = 0; k < classes_; ++k) {
        for (std::size_t i = 0; i < d; ++i) dparams[k * d + i] += dz[k] * x[i];
        dparams[classes_ * d + k] += dz[k];
      }
    }
  }

private:
  std::span<const double> bias() const { return std::span<const double>(params_).subspan(classes_ * input_.size()); }

  Shape input_;
  std::size_t classes_;
};

/// logits = W2 tanh(W1 x + b1) + b2.
class Mlp final : public GradientModel {
public:
  Mlp(Shape input, std::size_t hidden, std::size_t classes, std::uint64_t seed = 0)
      : input_(input), hidden_(hidden), classes_(classes) {
    if (classes < 2) throw ValidationError("a classifier needs at least two classes");
    if (hidden == 0) throw ValidationError("mlp needs a positive hidden width");
    const std::size_t d = input.size();
    params_.assign(hidden * d + hidden + classes * hidden + classes, 0.0);
    Rng rng(seed);
    std::span<double> all(params_);
    detail::fill_normal(all.subspan(w1_off(), hidden * d), rng, 1.0 / std::sqrt(static_cast<double>(d)));
    detail::fill_normal(all.subspan(w2_off(), classes * hidden), rng, 1.0 / std::sqrt(static_cast<double>(hidden)));
  }

  std::string kind() const override { return "mlp"; }
  Shape input_shape() const override { return input_; }
  std::size_t num_classes() const override { return classes_; }
  std::size_t hidden() const override { return hidden_; }
  std::vector<ParameterBlock> parameter_blocks() const override {
    return {{"W1", hidden_ * input_.size()}, {"b1", hidden_}, {"W2", classes_ * hidden_}, {"b2", classes_}};
  }
  std::unique_ptr<GradientModel> clone() const override { return std::make_unique<Mlp>(*this); }

  std::vector<double> logits(const ImageTensor& x) const override {
    const auto h = hidden_activations(x);
    return output(h);
  }

  void backward(const ImageTensor& x, std::span<const double> dz, ImageTensor* dx,
                std::span<double> dparams) const override {
    const std::size_t d = input_.size();
    const auto h = hidden_activations(x);
    std::vector<double> da(hidden_, 0.0);
    for (std::size_t k = 0; k < classes_; ++k) {
      const double* w2 = params_.data() + w2_off() + k * hidden_;
      for (std::size_t j = 0; j < hidden_; ++j) da[j] += dz[k] * w2[j];
    }
    for (std::size_t j = 0; j < hidden_; ++j) da[j] *= 1.0 - h[j] * h[j];

    if (dx) {
      *dx = ImageTensor(input_);
      for (std::size_t j = 0; j < hidden_; ++j) {
        const double* w1 = params_.data() + w1_off() + j * d;
        for (std::size_t i = 0; i < d; ++i) (*dx)[i] += da[j] * w1[i];
      }
    }
    if (!dparams.empty()) {
      for (std::size_t j = 0; j < hidden_; ++j) {
        for (std::size_t i = 0; i < d; ++i) dparams[w1_off() + j * d + i] += da[j] * x[i];
        dparams[b1_off() + j] += da[j];
      }
      for (std::size_t k = 0; k < classes_; ++k) {
        for (std::size_t j = 0; j < hidden_; ++j) dparams[w2_off() + k * hidden_ + j] += dz[k] * h[j];
        dparams[b2_off() + k] += dz[k];
      }
    }
  }

private:
  std::size_t w1_off() const { return 0; }
  std::size_t b1_off() const { return hidden_ * input_.size(); }
  std::size_t w2_off() const { return b1_off() + hidden_; }
  std::size_t b2_off() const { return w2_off() + classes_ * hidden_; }

  std::vector<double> hidden_activations(const ImageTensor& x) const {
    check_input(x);
    const std::size_t d = input_.size();
    std::vector<double> h(hidden_);
    for (std::size_t j = 0; j < hidden_; ++j) {
      double acc = params_[b1_off() + j];
      const double* w1 = params_.data() + w1_off() + j * d;
      for (std::size_t i = 0; i < d; ++i) acc += w1[i] * x[i];
      h[j] = std::tanh(acc);
    }
    return h;
  }

  std::vector<double> output(const std::vector<double>& h) const {
    std::vector<double> z(classes_);
    for (std::size_t k = 0; k < classes_; ++k) {
      double acc = params_[b2_off() + k];
      const double* w2 = params_.data() + w2_off() + k * hidden_;
      for (std::size_t j = 0; j < hidden_; ++j) acc += w2[j] * h[j];
      z[k] = acc;
    }
    return z;
  }

  Shape input_;
  std::size_t hidden_;
  std::size_t classes_;
};

/// 3x3 convolution (stride 1, zero padding) -> tanh -> 2x2 average pool -> affine.
/// Odd trailing rows or columns are dropped by the pool.
class TinyConv final : public GradientModel {
public:
  TinyConv(Shape input, std::size_t filters, std::size_t classes, std::uint64_t seed = 0)
      : input_(input), filters_(filters), classes_(classes) {
    if (classes < 2) throw ValidationError("a classifier needs at least two classes");
    if (filters == 0) throw ValidationError("conv needs at least one filter");
    if (input.height < 2 || input.width < 2) throw ValidationError("conv input must be at least 2x2");
    params_.assign(kernel_size() + filters + classes * pooled_size() + classes, 0.0);
    Rng rng(seed);
    std::span<double> all(params_);
    detail::fill_normal(all.subspan(0, kernel_size()), rng, 1.0 / std::sqrt(9.0 * static_cast<double>(input.channels)));
    detail::fill_normal(all.subspan(dense_off(), classes * pooled_size()), rng,
                        1.0 / std::sqrt(static_cast<double>(pooled_size())));
  }

  std::string kind() const override { return "conv"; }
  Shape input_shape() const override { return input_; }
  std::size_t num_classes() const override { return classes_; }
  std::size_t hidden() const override { return filters_; }
  std::vector<ParameterBlock> parameter_blocks() const override {
    return {{"kernels", kernel_size()}, {"conv_bias", filters_}, {"W", classes_ * pooled_size()}, {"b", classes_}};
  }
  std::unique_ptr<GradientModel> clone() const override { return std::make_unique<TinyConv>(*this); }

  std::vector<double> logits(const ImageTensor& x) const override {
    const auto act = activations(x);
    const auto pooled = pool(act);
    std::vector<double> z(classes_);
    for (std::size_t k = 0; k < classes_; ++k) {
      double acc = params_[bias_out_off() + k];
      const double* w = params_.data() + dense_off() + k * pooled_size();
      for (std::size_t p = 0; p < pooled_size(); ++p) acc += w[p] * pooled[p];
      z[k] = acc;
    }
    return z;
  }

  void backward(const ImageTensor& x, std::span<const double> dz, ImageTensor* dx,
                std::span<double> dparams) const override {
    const auto act = activations(x);
    const std::size_t H = input_.height, W = input_.width, ph = H / 2, pw = W / 2;

    std::vector<double> dpool(pooled_size(), 0.0);
    for (std::size_t k = 0; k < classes_; ++k) {
      const double* w = params_.data() + dense_off() + k * pooled_size();
      for (std::size_t p = 0; p < pooled_size(); ++p) dpool[p] += dz[k] * w[p];
    }
    // Gradient w.r.t. the pre-activation of the convolution.
    std::vector<double> dconv(filters_ * H * W, 0.0);
    for (std::size_t f = 0; f < filters_; ++f)
      for (std::size_t i = 0; i < 2 * ph; ++i)
        for (std::size_t j = 0; j < 2 * pw; ++j) {
          const std::size_t a = (f * H + i) * W + j;
          dconv[a] = 0.25 * dpool[(f * ph + i / 2) * pw + j / 2] * (1.0 - act[a] * act[a]);
        }

    if (!dparams.empty()) {
      if (dparams.size() != params_.size()) throw ValidationError("parameter gradient buffer has the wrong size");
      const auto pooled = pool(act);
      for (std::size_t k = 0; k < classes_; ++k) {
        for (std::size_t p = 0; p < pooled_size(); ++p) dparams[dense_off() + k * pooled_size() + p] += dz[k] * pooled[p];
        dparams[bias_out_off() + k] += dz[k];
      }
      for (std::size_t f = 0; f < filters_; ++f)
        for (std::size_t i = 0; i < H; ++i)
          for (std::size_t j = 0; j < W; ++j) {
            const double g = dconv[(f * H + i) * W + j];
            if (g == 0.0) continue;
            dparams[conv_bias_off() + f] += g;
            for (std::size_t c = 0; c < input_.channels; ++c)
              for (int ki = 0; ki < 3; ++ki)
                for (int kj = 0; kj < 3; ++kj) {
                  const auto [ok, xv] = pixel(x, c, i, j, ki, kj);
                  if (ok) dparams[kernel_index(f, c, ki, kj)] += g * xv;
                }
          }
    }

    if (dx) {
      *dx = ImageTensor(input_);
      for (std::size_t f = 0; f < filters_; ++f)
        for (std::size_t i = 0; i < H; ++i)
          for (std::size_t j = 0; j < W; ++j) {
            const double g = dconv[(f * H + i) * W + j];
            if (g == 0.0) continue;
            for (std::size_t c = 0; c < input_.channels; ++c)
              for (int ki = 0; ki < 3; ++ki)
                for (int kj = 0; kj < 3; ++kj) {
                  const long r = static_cast<long>(i) + ki - 1, col = static_cast<long>(j) + kj - 1;
                  if (r < 0 || col < 0 || r >= static_cast<long>(H) || col >= static_cast<long>(W)) continue;
                  (*dx)(c, static_cast<std::size_t>(r), static_cast<std::size_t>(col)) +=
                      g * params_[kernel_index(f, c, ki, kj)];
                }
          }
    }
  }

private:
  std::size_t kernel_size() const { return filters_ * input_.channels * 9; }
  std::size_t pooled_size() const { return filters_ * (input_.height / 2) * (input_.width / 2); }
  std::size_t conv_bias_off() const { return kernel_size(); }
  std::size_t dense_off() const { return kernel_size() + filters_; }
  std::size_t bias_out_off() const { return dense_off() + classes_ * pooled_size(); }
  std::size_t kernel_index(std::size_t f, std::size_t c, int ki, int kj) const {
    return ((f * input_.channels + c) * 3 + static_cast<std::size_t>(ki)) * 3 + static_cast<std::size_t>(kj);
  }

  std::pair<bool, double> pixel(const ImageTensor& x, std::size_t c, std::size_t i, std::size_t j, int ki, int kj) const {
    const long r = static_cast<long>(i) + ki - 1, col = static_cast<long>(j) + kj - 1;
    if (r < 0 || col < 0 || r >= static_cast<long>(input_.height) || col >= static_cast<long>(input_.width))
      return {false, 0.0};
    return {true, x(c, static_cast<std::size_t>(r), static_cast<std::size_t>(col))};
  }

  std::vector<double> activations(const ImageTensor& x) const {
    check_input(x);
    const std::size_t H = input_.height, W = input_.width;
    std::vector<double> act(filters_ * H * W);
    for (std::size_t f = 0; f < filters_; ++f)
      for (std::size_t i = 0; i < H; ++i)
        for (std::size_t j = 0; j < W; ++j) {
          double acc = params_[conv_bias_off() + f];
          for (std::size_t c = 0; c < input_.channels; ++c)
            for (int ki = 0; ki < 3; ++ki)
              for (int kj = 0; kj < 3; ++kj) {
                const auto [ok, xv] = pixel(x, c, i, j, ki, kj);
                if (ok) acc += params_[kernel_index(f, c, ki, kj)] * xv;
              }
          act[(f * H + i) * W + j] = std::tanh(acc);
        }
    return act;
  }

  std::vector<double> pool(const std::vector<double>& act) const {
    const std::size_t H = input_.height, W = input_.width, ph = H / 2, pw = W / 2;
    std::vector<double> out(pooled_size());
    for (std::size_t f = 0; f < filters_; ++f)
      for (std::size_t i = 0; i < ph; ++i)
        for (std::size_t j = 0; j < pw; ++j) {
          const std::size_t base = (f * H + 2 * i) * W + 2 * j;
          out[(f * ph + i) * pw + j] = 0.25 * (act[base] + act[base + 1] + act[base + W] + act[base + W + 1]);
        }
    return out;
  }

  Shape input_;
  std::size_t filters_;
  std::size_t classes_;
};

enum class ModelKind { Linear, Mlp, Conv };

inline ModelKind parse_model_kind(const std::string& s) {
  if (s == "linear") return ModelKind::Linear;
  if (s == "mlp") return ModelKind::Mlp;
  if (s == "conv") return ModelKind::Conv;
  throw ValidationError("unknown model kind '" + s + "' (expected linear, mlp or conv)");
}

inline std::unique_ptr<GradientModel> make_model(ModelKind kind, Shape input, std::size_t classes, std::size_t hidden,
                                                 std::uint64_t seed) {
  switch (kind) {
    case ModelKind::Linear: return std::make_unique<LinearSoftmax>(input, classes, seed);
    case ModelKind::Mlp: return std::make_unique<Mlp>(input, hidden, classes, seed);
    case ModelKind::Conv: return std::make_unique<TinyConv>(input, hidden, classes, seed);
  }
  throw ValidationError("unknown model kind");
}

// ---------------------------------------------------------------------------
// Training

struct TrainOptions {
  std::size_t epochs = 50;
  double learning_rate = 0.1;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
};

struct TrainReport {
  double train_accuracy = 0.0;
  double final_epoch_loss = 0.0;
  std::size_t epochs_run = 0;
};

inline double accuracy(const GradientModel& model, const Dataset& ds) {
  if (ds.empty()) return 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) correct += model.predict(ds.images[i]) == ds.labels[i];
  return static_cast<double>(correct) / static_cast<double>(ds.size());
}

/// Plain minibatch SGD on mean cross-entropy. Deterministic given the options.
inline TrainReport train_sgd(GradientModel& model, const Dataset& ds, const TrainOptions& opt) {
  if (ds.empty()) throw ValidationError("train_sgd: empty dataset");
  ds.validate();
  if (opt.batch_size == 0) throw ValidationError("train_sgd: batch size must be positive");
  if (ds.num_classes > model.num_classes()) throw ValidationError("train_sgd: dataset has more classes than the model");

  Rng rng(opt.seed);
  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> grad(model.parameters().size());
  TrainReport report;

  for (std::size_t epoch = 0; epoch < opt.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += opt.batch_size) {
      const std::size_t end = std::min(start + opt.batch_size, order.size());
      std::fill(grad.begin(), grad.end(), 0.0);
      for (std::size_t b = start; b < end; ++b) {
        const auto& x = ds.images[order[b]];
        const auto z = model.logits(x);
        const auto ce = cross_entropy_and_grad(z, ds.labels[order[b]]);
        if (!std::isfinite(ce.loss))
          throw RuntimeFailure("train_sgd: non-finite loss at epoch " + std::to_string(epoch) + " (learning rate " +
                               format_real(opt.learning_rate) + " too large?)");
        epoch_loss += ce.loss;
        model.backward(x, ce.dlogits, nullptr, grad);
      }
      const double scale = opt.learning_rate / static_cast<double>(end - start);
      auto params = model.parameters();
      for (std::size_t k = 0; k < params.size(); ++k) params[k] -= scale * grad[k];
      if (!std::all_of(params.begin(), params.end(), [](double v) { return std::isfinite(v); }))
        throw RuntimeFailure("train_sgd: parameters diverged at epoch " + std::to_string(epoch) + " (learning rate " +
                             format_real(opt.learning_rate) + " too large?)");
    }
    report.final_epoch_loss = epoch_loss / static_cast<double>(ds.size());
    report.epochs_run = epoch + 1;
  }
  report.train_accuracy = accuracy(model, ds);
  return report;
}

// ---------------------------------------------------------------------------
// Gradient checking

/// Max relative error between the analytic input gradient and central differences
/// at `probes` seeded coordinates. Denominator: max(|analytic|, |numeric|, 1e-8).
inline double finite_diff_check(const GradientModel& model, const ImageTensor& x, const LossSpec& spec, double h = 1e-4,
                                std::size_t probes = 20, std::uint64_t seed = 0) {
  const auto analytic = adversarial_objective(model, x, spec).gradient;
  Rng rng(seed);
  std::vector<std::size_t> coords(x.size());
  std::iota(coords.begin(), coords.end(), 0);
  rng.shuffle(coords);
  coords.resize(std::min(probes, coords.size()));

  double worst = 0.0;
  ImageTensor probe = x;
  for (std::size_t i : coords) {
    probe[i] = x[i] + h;
    const double up = adversarial_objective(model, probe, spec).loss;
    probe[i] = x[i] - h;
    const double down = adversarial_objective(model, probe, spec).loss;
    probe[i] = x[i];
    const double numeric = (up - down) / (2.0 * h);
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
    worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Serialization
//
//   fwadv-model 1
//   kind <linear|mlp|conv>
//   input <c> <h> <w>
//   classes <k>
//   hidden <n>
//   block <name> <size>
//   <size values, one per line>
//   ...
//   end

inline void save_model(const GradientModel& model, std::ostream& os) {
  const auto s = model.input_shape();
  os << "fwadv-model 1\n";
  os << "kind " << model.kind() << '\n';
  os << "input " << s.channels << ' ' << s.height << ' ' << s.width << '\n';
  os << "classes " << model.num_classes() << '\n';
  os << "hidden " << model.hidden() << '\n';
  const auto params = model.parameters();
  std::size_t offset = 0;
  for (const auto& block : model.parameter_blocks()) {
    os << "block " << block.name << ' ' << block.size << '\n';
    for (std::size_t k = 0; k < block.size; ++k) os << format_real(params[offset + k]) << '\n';
    offset += block.size;
  }
  os << "end\n";
}

inline std::unique_ptr<GradientModel> load_model(std::istream& is) {
  auto expect = [&is](const std::string& key) {
    std::string word;
    if (!(is >> word) || word != key) throw ValidationError("model file: expected '" + key + "'");
  };
  expect("fwadv-model");
  int version = 0;
  if (!(is >> version) || version != 1) throw ValidationError("model file: unsupported version");
  std::string kind;
  Shape s;
  std::size_t classes = 0, hidden = 0;
  expect("kind");
  is >> kind;
  expect("input");
  is >> s.channels >> s.height >> s.width;
  expect("classes");
  is >> classes;
  expect("hidden");
  is >> hidden;
  if (!is) throw ValidationError("model file: malformed header");

  auto model = make_model(parse_model_kind(kind), s, classes, hidden, 0);
  auto params = model->parameters();
  std::size_t offset = 0;
  for (const auto& block : model->parameter_blocks()) {
    expect("block");
    std::string name;
    std::size_t size = 0;
    is >> name >> size;
    if (name != block.name || size != block.size)
      throw ValidationError("model file: expected block " + block.name + " of size " + std::to_string(block.size));
    for (std::size_t k = 0; k < size; ++k) {
      std::string token;
      if (!(is >> token)) throw ValidationError("model file: truncated block " + name);
      params[offset + k] = parse_real(token);
    }
    offset += size;
  }
  expect("end");
  return model;
}

} // namespace fwadv
