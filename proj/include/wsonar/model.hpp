#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <nlohmann/json_fwd.hpp>
#include <span>
#include <string>
#include <vector>

#include "wsonar/dataset.hpp"
#include "wsonar/pose.hpp"

namespace wsonar {

enum class HeadKind : std::uint8_t { pose60 = 0, wrist3 = 1, class12 = 2 };

std::size_t head_dim(HeadKind head);
HeadKind head_for(Task task);
const char* to_string(HeadKind head);
HeadKind head_from_string(const std::string& name);
inline bool is_regression(HeadKind head) { return head != HeadKind::class12; }

enum class Solver : std::uint8_t { closed_form = 0, adam = 1 };

struct TrainSpec {
  int pretrain_epochs = 10;
  int finetune_epochs = 5;
  double learning_rate = 0.0002;
  int batch_size = 30;
  std::uint64_t seed = 0;
  // Ridge strength per training window on standardized features.
  double ridge_lambda = 1e-3;
  // Weight of each user window relative to a pretraining window when the
  // pretraining statistics are available.
  double finetune_weight = 10.0;
  // Pull towards the pretrained weights (absolute) when they are not.
  double finetune_lambda = 30.0;
  // Regression heads may use the closed form; classification always uses Adam.
  Solver solver = Solver::closed_form;

  void validate() const;
};

// The window is split into `segments` equal runs of frames and each run into a
// grid_frames x grid_pixels grid; every cell contributes the mean and the max
// of |value| per channel.
struct FeatureConfig {
  int segments = 1;
  int grid_frames = 8;
  int grid_pixels = 24;

  void validate() const;
  std::size_t dim(std::size_t channels) const {
    return static_cast<std::size_t>(segments * grid_frames * grid_pixels) * 2 * channels;
  }
};

void pooled_features(const WindowSample& w, const FeatureConfig& cfg, std::span<double> out);
std::vector<double> pooled_features(const WindowSample& w, const FeatureConfig& cfg);

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct WindowShape {
  std::uint32_t frames = 0, pixels = 0, channels = 0;
  bool operator==(const WindowShape&) const = default;
};

// Pooled features and targets of a set of windows.
class FeatureSet {
 public:
  FeatureSet(HeadKind head, const FeatureConfig& cfg) : head_(head), cfg_(cfg) {}

  void add(const WindowSample& w);
  void add_stream(WindowStream& stream);
  void reserve(std::size_t n);

  HeadKind head() const { return head_; }
  const FeatureConfig& features() const { return cfg_; }
  const WindowShape& shape() const { return shape_; }
  std::size_t size() const { return sources_.size(); }
  std::size_t dim() const { return dim_; }
  bool empty() const { return sources_.empty(); }

  // Rows are windows.
  Eigen::Map<const RowMatrix> x() const;
  Eigen::Map<const RowMatrix> y() const;  // regression targets
  const std::vector<int>& classes() const { return classes_; }
  const std::vector<WindowSource>& sources() const { return sources_; }

  FeatureSet subset(std::span<const std::size_t> rows) const;
  void append(const FeatureSet& other);

 private:
  HeadKind head_;
  FeatureConfig cfg_;
  WindowShape shape_;
  std::size_t dim_ = 0;
  std::vector<double> x_;  // row-major windows x dim
  std::vector<double> y_;  // row-major windows x head_dim
  std::vector<int> classes_;
  std::vector<WindowSource> sources_;
};

// Additive sufficient statistics of a regression problem on raw features.
struct RidgeStats {
  Eigen::MatrixXd xtx;  // d x d
  Eigen::MatrixXd xty;  // d x k
  Eigen::VectorXd sx;   // d
  Eigen::VectorXd sy;   // k
  double n = 0.0;

  static RidgeStats of(const FeatureSet& set);
  RidgeStats& operator+=(const RidgeStats& other);
  RidgeStats& operator*=(double weight);
  bool operator==(const RidgeStats& other) const;
};

struct Prediction {
  HeadKind head = HeadKind::pose60;
  std::vector<float> values;  // regression output, or softmax scores
  int class_id = -1;

  HandPose pose() const;  // pose60: joints 1..20, wrist at the origin
  Vec3 v9() const;        // wrist3
};

// Wraps head outputs. For class12 `values` are class scores and class_id is
// their argmax, ties going to the lowest index.
Prediction make_prediction(HeadKind head, std::vector<float> values);

class BaselineModel {
 public:
  BaselineModel() = default;

  bool fitted() const { return fitted_; }
  HeadKind head() const { return head_; }
  const FeatureConfig& features() const { return features_; }
  const WindowShape& shape() const { return shape_; }
  const TrainSpec& spec() const { return spec_; }
  // Standardization of the raw features.
  const Eigen::VectorXd& feature_mean() const { return mean_; }
  const Eigen::VectorXd& feature_scale() const { return scale_; }
  // (dim + 1) x outputs; the last row is the intercept.
  const Eigen::MatrixXd& weights() const { return w_; }
  // Training loss after each epoch of gradient training.
  const std::vector<double>& loss_history() const { return history_; }
  // Sufficient statistics of the closed-form training set (n == 0 otherwise).
  const RidgeStats& training_stats() const { return stats_; }

  Prediction predict(const WindowSample& w) const;
  Prediction predict_features(std::span<const double> raw_features) const;
  std::vector<Prediction> predict(const FeatureSet& set) const;
  // Unregularized loss: mean squared error per output, or mean cross-entropy.
  double data_loss(const FeatureSet& set) const;

  bool operator==(const BaselineModel& other) const;

 private:
  friend BaselineModel fit(const FeatureSet&, const TrainSpec&);
  friend BaselineModel fit_ridge(const RidgeStats&, HeadKind, const FeatureConfig&, const WindowShape&,
                                 const TrainSpec&);
  friend BaselineModel finetune(const BaselineModel&, const FeatureSet&, const TrainSpec&);
  friend std::vector<std::uint8_t> encode_model(const BaselineModel&);
  friend BaselineModel decode_model(std::span<const std::uint8_t>);

  Eigen::MatrixXd standardized(const FeatureSet& set) const;

  bool fitted_ = false;
  HeadKind head_ = HeadKind::pose60;
  FeatureConfig features_;
  WindowShape shape_;
  TrainSpec spec_;
  Eigen::VectorXd mean_, scale_;
  Eigen::MatrixXd w_;
  std::vector<double> history_;
  RidgeStats stats_;
};

BaselineModel fit(const FeatureSet& train, const TrainSpec& spec);
BaselineModel fit_ridge(const RidgeStats& stats, HeadKind head, const FeatureConfig& features,
                        const WindowShape& shape, const TrainSpec& spec);
// Warm start from `pretrained`, which is left untouched. A closed-form
// regression model that carries its training statistics is refitted on them
// plus the user windows weighted by finetune_weight; other closed-form
// regression models solve the proximal least-squares problem towards the
// pretrained weights; Adam heads run finetune_epochs from the pretrained
// weights.
BaselineModel finetune(const BaselineModel& pretrained, const FeatureSet& user, const TrainSpec& spec);

// Objectives on standardized features Z (rows are samples) with weights W of
// shape (d + 1) x k, last row the intercept. Regression: half the mean over
// samples of the squared residual norm, plus 0.5 * lambda * |W without
// intercept|^2, which has the closed-form ridge solution as its minimizer.
// Classification: mean cross-entropy plus the same penalty. The gradient is
// written to `grad` when non-null.
double mse_objective(const Eigen::MatrixXd& w, const Eigen::MatrixXd& z, const Eigen::MatrixXd& y, double lambda,
                     Eigen::MatrixXd* grad);
double softmax_objective(const Eigen::MatrixXd& w, const Eigen::MatrixXd& z, std::span<const int> labels,
                         double lambda, Eigen::MatrixXd* grad);

inline constexpr std::uint32_t kModelVersion = 2;
std::vector<std::uint8_t> encode_model(const BaselineModel& model);
BaselineModel decode_model(std::span<const std::uint8_t> bytes);
void save_model(const std::filesystem::path& path, const BaselineModel& model);
BaselineModel load_model(const std::filesystem::path& path);

struct EvalReport {
  HeadKind head = HeadKind::pose60;
  std::size_t windows = 0;
  // pose60
  double mjede_m = 0.0;
  double mjae_deg = 0.0;
  std::vector<double> per_joint_error_m;   // joints 1..20
  std::vector<double> per_angle_error_deg;  // 15 interior joints
  std::vector<CdfPoint> joint_error_cdf;    // over every joint of every window
  double median_window_error_m = 0.0;
  // wrist3
  double mwae_deg = 0.0;
  std::vector<CdfPoint> wrist_error_cdf;
  // class12
  double accuracy = 0.0;
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]

  nlohmann::json to_json() const;
};

// Scores predictions against the targets in `truth` with the pose metric
// functions. Throws task-mismatch when the heads differ.
EvalReport evaluate_predictions(std::span<const Prediction> predictions, const FeatureSet& truth);
EvalReport evaluate(const BaselineModel& model, const FeatureSet& test);

}  // namespace wsonar
