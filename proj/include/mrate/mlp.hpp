#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace mrate {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// ReLU trunk with up to two scalar heads on the last hidden layer:
//   ps head       sigmoid(w'h + b), trained with binary cross-entropy on a
//   outcome head  w'h + w_a a + b,  trained with half squared error on y
// Loss = mean over the batch of the active head losses + l1 * sum |weights|.
struct MlpArchitecture {
  std::size_t inputs = 1;
  std::vector<std::size_t> hidden;
  bool ps_head = true;
  bool outcome_head = true;
};

struct AdamOptions {
  double learning_rate = 0.01;
  double beta1 = 0.95;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class Mlp {
 public:
  // Weights ~ U(-sqrt(6 / fan_in), sqrt(6 / fan_in)), biases 0.
  Mlp(MlpArchitecture arch, std::uint64_t seed);

  const MlpArchitecture& architecture() const noexcept { return arch_; }
  std::size_t parameter_count() const noexcept { return params_.size(); }
  std::span<double> parameters() noexcept { return params_; }
  std::span<const double> parameters() const noexcept { return params_; }

  double loss(const RowMatrix& x, std::span<const double> a, std::span<const double> y,
              std::span<const std::size_t> batch, double l1) const;
  // Returns the loss; grad is resized to parameter_count().
  double gradient(const RowMatrix& x, std::span<const double> a, std::span<const double> y,
                  std::span<const std::size_t> batch, double l1, std::vector<double>& grad) const;

  // Mini-batch Adam with a per-epoch shuffle drawn from `seed`.
  void train(const RowMatrix& x, std::span<const double> a, std::span<const double> y, std::size_t epochs,
             std::size_t batch_size, double l1, const AdamOptions& adam, std::uint64_t seed);

  struct Output {
    double ps_logit = 0.0;
    double outcome = 0.0;
  };
  Output forward(const double* input, double a) const;

 private:
  struct Layer {
    std::size_t in;
    std::size_t out;
    std::size_t weights;  // offset of the row-major out x in block
    std::size_t bias;     // offset of the out-length bias block
  };

  double sample_pass(const double* input, double a, double y, double scale, std::vector<double>* grad,
                     std::vector<std::vector<double>>& acts) const;

  MlpArchitecture arch_;
  std::vector<Layer> trunk_;
  Layer ps_head_{};
  Layer outcome_head_{};  // in = last width + 1; the final input is the treatment
  std::vector<double> params_;
};

}  // namespace mrate
