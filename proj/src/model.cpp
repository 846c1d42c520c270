#include "wsonar/model.hpp"

#include <Eigen/Cholesky>
#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>
#include <numeric>
#include <random>

#include "wsonar/bytes.hpp"
#include "wsonar/error.hpp"

namespace wsonar {

std::size_t head_dim(HeadKind head) {
  switch (head) {
    case HeadKind::pose60: return 60;
    case HeadKind::wrist3: return 3;
    case HeadKind::class12: return kInteractionClasses;
  }
  return 0;
}

HeadKind head_for(Task task) {
  switch (task) {
    case Task::pose: return HeadKind::pose60;
    case Task::wrist: return HeadKind::wrist3;
    case Task::interaction: return HeadKind::class12;
  }
  return HeadKind::pose60;
}

const char* to_string(HeadKind head) {
  switch (head) {
    case HeadKind::pose60: return "pose60";
    case HeadKind::wrist3: return "wrist3";
    case HeadKind::class12: return "class12";
  }
  return "?";
}

HeadKind head_from_string(const std::string& name) {
  if (name == "pose60") return HeadKind::pose60;
  if (name == "wrist3") return HeadKind::wrist3;
  if (name == "class12") return HeadKind::class12;
  fail(Errc::invalid_config, "unknown head '" + name + "'");
}

void TrainSpec::validate() const {
  require(pretrain_epochs > 0 && finetune_epochs > 0 && batch_size > 0, Errc::invalid_config,
          "epochs and batch size must be positive");
  require(learning_rate > 0.0 && std::isfinite(learning_rate), Errc::invalid_config,
          "learning rate must be positive");
  require(ridge_lambda > 0.0 && finetune_lambda > 0.0 && finetune_weight > 0.0, Errc::invalid_config,
          "regularization constants must be positive");
}

void FeatureConfig::validate() const {
  require(segments > 0 && grid_frames > 0 && grid_pixels > 0, Errc::invalid_config,
          "feature grid sizes must be positive");
}

void pooled_features(const WindowSample& w, const FeatureConfig& cfg, std::span<double> out) {
  cfg.validate();
  const std::size_t nc = w.channels;
  require(out.size() == cfg.dim(nc), Errc::shape_mismatch, "feature buffer size");
  require(w.tensor.size() == w.frames * w.pixels * nc, Errc::shape_mismatch, "window tensor size");
  const auto segs = static_cast<std::size_t>(cfg.segments);
  const auto gf = static_cast<std::size_t>(cfg.grid_frames);
  const auto gp = static_cast<std::size_t>(cfg.grid_pixels);
  std::fill(out.begin(), out.end(), 0.0);
  std::size_t k = 0;
  for (std::size_t s = 0; s < segs; ++s) {
    const std::size_t s0 = s * w.frames / segs, s1 = (s + 1) * w.frames / segs;
    for (std::size_t a = 0; a < gf; ++a) {
      const std::size_t f0 = s0 + a * (s1 - s0) / gf, f1 = s0 + (a + 1) * (s1 - s0) / gf;
      for (std::size_t b = 0; b < gp; ++b) {
        const std::size_t p0 = b * w.pixels / gp, p1 = (b + 1) * w.pixels / gp;
        const double cells = static_cast<double>((f1 - f0) * (p1 - p0));
        for (std::size_t c = 0; c < nc; ++c, k += 2) {
          double sum = 0.0, peak = 0.0;
          for (std::size_t f = f0; f < f1; ++f)
            for (std::size_t p = p0; p < p1; ++p) {
              const double v = std::abs(static_cast<double>(w.tensor[(f * w.pixels + p) * nc + c]));
              sum += v;
              peak = std::max(peak, v);
            }
          out[k] = cells > 0.0 ? sum / cells : 0.0;
          out[k + 1] = peak;
        }
      }
    }
  }
}

std::vector<double> pooled_features(const WindowSample& w, const FeatureConfig& cfg) {
  std::vector<double> out(cfg.dim(w.channels));
  pooled_features(w, cfg, out);
  return out;
}

void FeatureSet::reserve(std::size_t n) {
  sources_.reserve(n);
  if (dim_) x_.reserve(n * dim_);
  if (is_regression(head_)) y_.reserve(n * head_dim(head_));
}

void FeatureSet::add(const WindowSample& w) {
  const WindowShape shape{static_cast<std::uint32_t>(w.frames), static_cast<std::uint32_t>(w.pixels),
                          static_cast<std::uint32_t>(w.channels)};
  if (sources_.empty()) {
    shape_ = shape;
    dim_ = cfg_.dim(w.channels);
  } else {
    require(shape == shape_, Errc::shape_mismatch, "window shape differs from the rest of the set");
  }
  if (is_regression(head_)) {
    require(w.label.size() == head_dim(head_), Errc::shape_mismatch,
            std::string("label size does not match head ") + to_string(head_));
    y_.insert(y_.end(), w.label.begin(), w.label.end());
  } else {
    require(w.class_id >= 0 && w.class_id < kInteractionClasses, Errc::shape_mismatch,
            "window has no interaction class");
    classes_.push_back(w.class_id);
  }
  const std::size_t at = x_.size();
  x_.resize(at + dim_);
  pooled_features(w, cfg_, std::span<double>(x_).subspan(at, dim_));
  sources_.push_back(w.source);
}

void FeatureSet::add_stream(WindowStream& stream) {
  while (auto w = stream.next()) add(*w);
}

Eigen::Map<const RowMatrix> FeatureSet::x() const {
  return {x_.data(), static_cast<Eigen::Index>(size()), static_cast<Eigen::Index>(dim_)};
}

Eigen::Map<const RowMatrix> FeatureSet::y() const {
  const std::size_t k = is_regression(head_) ? head_dim(head_) : 0;
  return {y_.data(), static_cast<Eigen::Index>(size()), static_cast<Eigen::Index>(k)};
}

FeatureSet FeatureSet::subset(std::span<const std::size_t> rows) const {
  FeatureSet out(head_, cfg_);
  out.shape_ = shape_;
  out.dim_ = dim_;
  const std::size_t k = is_regression(head_) ? head_dim(head_) : 0;
  for (std::size_t r : rows) {
    require(r < size(), Errc::shape_mismatch, "subset row out of range");
    out.x_.insert(out.x_.end(), x_.begin() + static_cast<std::ptrdiff_t>(r * dim_),
                  x_.begin() + static_cast<std::ptrdiff_t>((r + 1) * dim_));
    if (k)
      out.y_.insert(out.y_.end(), y_.begin() + static_cast<std::ptrdiff_t>(r * k),
                    y_.begin() + static_cast<std::ptrdiff_t>((r + 1) * k));
    else
      out.classes_.push_back(classes_[r]);
    out.sources_.push_back(sources_[r]);
  }
  return out;
}

void FeatureSet::append(const FeatureSet& other) {
  if (other.empty()) return;
  require(other.head_ == head_, Errc::head_mismatch, "cannot merge feature sets of different heads");
  if (empty()) {
    shape_ = other.shape_;
    dim_ = other.dim_;
  } else {
    require(other.shape_ == shape_, Errc::shape_mismatch, "cannot merge feature sets of different shapes");
  }
  x_.insert(x_.end(), other.x_.begin(), other.x_.end());
  y_.insert(y_.end(), other.y_.begin(), other.y_.end());
  classes_.insert(classes_.end(), other.classes_.begin(), other.classes_.end());
  sources_.insert(sources_.end(), other.sources_.begin(), other.sources_.end());
}

RidgeStats RidgeStats::of(const FeatureSet& set) {
  require(is_regression(set.head()), Errc::task_mismatch, "ridge statistics need a regression head");
  const auto x = set.x();
  const auto y = set.y();
  RidgeStats s;
  const auto d = static_cast<Eigen::Index>(set.dim());
  s.xtx = Eigen::MatrixXd::Zero(d, d);
  s.xtx.selfadjointView<Eigen::Lower>().rankUpdate(x.transpose());
  s.xtx = s.xtx.selfadjointView<Eigen::Lower>();
  s.xty = x.transpose() * y;
  s.sx = x.colwise().sum().transpose();
  s.sy = y.colwise().sum().transpose();
  s.n = static_cast<double>(set.size());
  return s;
}

RidgeStats& RidgeStats::operator+=(const RidgeStats& o) {
  if (o.n == 0.0) return *this;
  if (n == 0.0) return *this = o;
  require(xtx.rows() == o.xtx.rows() && xty.cols() == o.xty.cols(), Errc::shape_mismatch,
          "ridge statistics of different shapes");
  xtx += o.xtx;
  xty += o.xty;
  sx += o.sx;
  sy += o.sy;
  n += o.n;
  return *this;
}

RidgeStats& RidgeStats::operator*=(double weight) {
  xtx *= weight;
  xty *= weight;
  sx *= weight;
  sy *= weight;
  n *= weight;
  return *this;
}

bool RidgeStats::operator==(const RidgeStats& o) const {
  const auto same = [](const auto& a, const auto& b) {
    return a.rows() == b.rows() && a.cols() == b.cols() && (a.size() == 0 || a == b);
  };
  return n == o.n && same(xtx, o.xtx) && same(xty, o.xty) && same(sx, o.sx) && same(sy, o.sy);
}

HandPose Prediction::pose() const {
  require(head == HeadKind::pose60, Errc::task_mismatch, "prediction is not a pose");
  return pose_from_label60(values);
}

Vec3 Prediction::v9() const {
  require(head == HeadKind::wrist3 && values.size() == 3, Errc::task_mismatch, "prediction is not a wrist vector");
  return {values[0], values[1], values[2]};
}

Prediction make_prediction(HeadKind head, std::vector<float> values) {
  require(values.size() == head_dim(head), Errc::shape_mismatch,
          std::string("output size does not match head ") + to_string(head));
  Prediction p;
  p.head = head;
  p.values = std::move(values);
  if (head == HeadKind::class12)
    p.class_id = static_cast<int>(std::max_element(p.values.begin(), p.values.end()) - p.values.begin());
  return p;
}

namespace {

// Column-wise mean and standard deviation; constant columns get scale 1.
void column_stats(const Eigen::VectorXd& sx, const Eigen::VectorXd& sxx, double n, Eigen::VectorXd& mean,
                  Eigen::VectorXd& scale) {
  mean = sx / n;
  scale.resize(mean.size());
  for (Eigen::Index i = 0; i < mean.size(); ++i) {
    const double var = std::max(0.0, sxx[i] / n - mean[i] * mean[i]);
    const double sd = std::sqrt(var);
    scale[i] = sd > 1e-12 * (1.0 + std::abs(mean[i])) ? sd : 1.0;
  }
}

Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd p = logits;
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    p.row(i).array() -= p.row(i).maxCoeff();
    p.row(i) = p.row(i).array().exp().matrix();
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

Eigen::MatrixXd affine(const Eigen::MatrixXd& w, const Eigen::MatrixXd& z) {
  const Eigen::Index d = z.cols();
  return (z * w.topRows(d)).rowwise() + w.row(d);
}

struct Adam {
  Eigen::MatrixXd m, v;
  double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  long t = 0;

  explicit Adam(const Eigen::MatrixXd& like)
      : m(Eigen::MatrixXd::Zero(like.rows(), like.cols())), v(Eigen::MatrixXd::Zero(like.rows(), like.cols())) {}

  void step(Eigen::MatrixXd& w, const Eigen::MatrixXd& g, double lr) {
    ++t;
    m = b1 * m + (1.0 - b1) * g;
    v = b2 * v + (1.0 - b2) * g.cwiseProduct(g);
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t));
    w.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  }
};

// Minibatch Adam on the regularized objective; returns the loss per epoch.
std::vector<double> train_adam(Eigen::MatrixXd& w, const Eigen::MatrixXd& z, const FeatureSet& set,
                               const TrainSpec& spec, int epochs, std::uint64_t seed) {
  const auto n = static_cast<Eigen::Index>(z.rows());
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::mt19937_64 rng(seed);
  Adam opt(w);
  const bool regression = is_regression(set.head());
  const Eigen::MatrixXd y = regression ? Eigen::MatrixXd(set.y()) : Eigen::MatrixXd();
  std::vector<double> history;
  Eigen::MatrixXd grad;
  for (int e = 0; e < epochs; ++e) {
    std::shuffle(order.begin(), order.end(), rng);
    for (Eigen::Index start = 0; start < n; start += spec.batch_size) {
      const Eigen::Index len = std::min<Eigen::Index>(spec.batch_size, n - start);
      Eigen::MatrixXd zb(len, z.cols());
      Eigen::MatrixXd yb;
      std::vector<int> cb;
      if (regression) yb.resize(len, y.cols());
      for (Eigen::Index i = 0; i < len; ++i) {
        const Eigen::Index r = order[static_cast<std::size_t>(start + i)];
        zb.row(i) = z.row(r);
        if (regression)
          yb.row(i) = y.row(r);
        else
          cb.push_back(set.classes()[static_cast<std::size_t>(r)]);
      }
      if (regression)
        mse_objective(w, zb, yb, spec.ridge_lambda, &grad);
      else
        softmax_objective(w, zb, cb, spec.ridge_lambda, &grad);
      opt.step(w, grad, spec.learning_rate);
    }
    history.push_back(regression ? mse_objective(w, z, y, spec.ridge_lambda, nullptr)
                                 : softmax_objective(w, z, set.classes(), spec.ridge_lambda, nullptr));
  }
  return history;
}

}  // namespace

double mse_objective(const Eigen::MatrixXd& w, const Eigen::MatrixXd& z, const Eigen::MatrixXd& y, double lambda,
                     Eigen::MatrixXd* grad) {
  const Eigen::Index d = z.cols();
  require(w.rows() == d + 1 && w.cols() == y.cols() && y.rows() == z.rows() && z.rows() > 0, Errc::shape_mismatch,
          "objective shapes disagree");
  const double n = static_cast<double>(z.rows());
  const Eigen::MatrixXd r = affine(w, z) - y;
  const double loss = 0.5 * r.squaredNorm() / n + 0.5 * lambda * w.topRows(d).squaredNorm();
  if (grad) {
    grad->resize(w.rows(), w.cols());
    grad->topRows(d) = z.transpose() * r / n + lambda * w.topRows(d);
    grad->row(d) = r.colwise().sum() / n;
  }
  return loss;
}

double softmax_objective(const Eigen::MatrixXd& w, const Eigen::MatrixXd& z, std::span<const int> labels,
                         double lambda, Eigen::MatrixXd* grad) {
  const Eigen::Index d = z.cols();
  require(w.rows() == d + 1 && static_cast<std::size_t>(z.rows()) == labels.size() && z.rows() > 0,
          Errc::shape_mismatch, "objective shapes disagree");
  const double n = static_cast<double>(z.rows());
  const Eigen::MatrixXd logits = affine(w, z);
  Eigen::MatrixXd p = softmax_rows(logits);
  double loss = 0.0;
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    require(y >= 0 && y < w.cols(), Errc::shape_mismatch, "class label out of range");
    const double mx = logits.row(i).maxCoeff();
    const double lse = mx + std::log((logits.row(i).array() - mx).exp().sum());
    loss += lse - logits(i, y);
    p(i, y) -= 1.0;
  }
  loss = loss / n + 0.5 * lambda * w.topRows(d).squaredNorm();
  if (grad) {
    grad->resize(w.rows(), w.cols());
    grad->topRows(d) = z.transpose() * p / n + lambda * w.topRows(d);
    grad->row(d) = p.colwise().sum() / n;
  }
  return loss;
}

Eigen::MatrixXd BaselineModel::standardized(const FeatureSet& set) const {
  require(set.shape() == shape_ || set.empty(), Errc::shape_mismatch, "window shape differs from the model");
  Eigen::MatrixXd z = set.x();
  z.rowwise() -= mean_.transpose();
  z.array().rowwise() /= scale_.transpose().array();
  return z;
}

Prediction BaselineModel::predict_features(std::span<const double> raw) const {
  require(fitted_, Errc::not_fitted, "model is not fitted");
  require(raw.size() == static_cast<std::size_t>(mean_.size()), Errc::shape_mismatch, "feature size differs");
  const Eigen::Map<const Eigen::VectorXd> x(raw.data(), static_cast<Eigen::Index>(raw.size()));
  const Eigen::VectorXd z = (x - mean_).cwiseQuotient(scale_);
  const Eigen::Index d = z.size();
  Eigen::RowVectorXd out = z.transpose() * w_.topRows(d) + w_.row(d);
  if (head_ == HeadKind::class12) out = softmax_rows(out);
  std::vector<float> values(static_cast<std::size_t>(out.size()));
  for (Eigen::Index i = 0; i < out.size(); ++i) values[static_cast<std::size_t>(i)] = static_cast<float>(out[i]);
  return make_prediction(head_, std::move(values));
}

Prediction BaselineModel::predict(const WindowSample& w) const {
  require(fitted_, Errc::not_fitted, "model is not fitted");
  const WindowShape shape{static_cast<std::uint32_t>(w.frames), static_cast<std::uint32_t>(w.pixels),
                          static_cast<std::uint32_t>(w.channels)};
  require(shape == shape_, Errc::shape_mismatch, "window shape differs from the model");
  return predict_features(pooled_features(w, features_));
}

std::vector<Prediction> BaselineModel::predict(const FeatureSet& set) const {
  require(fitted_, Errc::not_fitted, "model is not fitted");
  std::vector<Prediction> out;
  out.reserve(set.size());
  const auto x = set.x();
  std::vector<double> row(set.dim());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    Eigen::Map<Eigen::RowVectorXd>(row.data(), x.cols()) = x.row(i);
    out.push_back(predict_features(row));
  }
  return out;
}

double BaselineModel::data_loss(const FeatureSet& set) const {
  require(fitted_, Errc::not_fitted, "model is not fitted");
  require(set.head() == head_, Errc::head_mismatch, "data head differs from the model");
  require(!set.empty(), Errc::empty_data, "loss of an empty set");
  const Eigen::MatrixXd out = affine(w_, standardized(set));
  if (is_regression(head_)) return (out - Eigen::MatrixXd(set.y())).squaredNorm() / static_cast<double>(out.size());
  return softmax_objective(w_, standardized(set), set.classes(), 0.0, nullptr);
}

bool BaselineModel::operator==(const BaselineModel& o) const {
  return fitted_ == o.fitted_ && head_ == o.head_ && features_.segments == o.features_.segments &&
         features_.grid_frames == o.features_.grid_frames && features_.grid_pixels == o.features_.grid_pixels &&
         shape_ == o.shape_ && mean_ == o.mean_ && scale_ == o.scale_ && w_ == o.w_ && history_ == o.history_ &&
         stats_ == o.stats_;
}

BaselineModel fit_ridge(const RidgeStats& stats, HeadKind head, const FeatureConfig& features,
                        const WindowShape& shape, const TrainSpec& spec) {
  spec.validate();
  require(is_regression(head), Errc::task_mismatch, "ridge fitting needs a regression head");
  require(stats.n > 0.0, Errc::empty_data, "no training windows");
  BaselineModel m;
  m.head_ = head;
  m.features_ = features;
  m.shape_ = shape;
  m.spec_ = spec;
  column_stats(stats.sx, stats.xtx.diagonal(), stats.n, m.mean_, m.scale_);
  const Eigen::VectorXd inv = m.scale_.cwiseInverse();
  // Gram matrix and cross products of the centered, scaled features.
  Eigen::MatrixXd g = stats.xtx - stats.n * m.mean_ * m.mean_.transpose();
  g = inv.asDiagonal() * g * inv.asDiagonal();
  const Eigen::MatrixXd zy = inv.asDiagonal() * (stats.xty - m.mean_ * stats.sy.transpose());
  g.diagonal().array() += spec.ridge_lambda * stats.n;
  const Eigen::Index d = g.rows();
  m.w_.resize(d + 1, zy.cols());
  m.w_.topRows(d) = g.ldlt().solve(zy);
  m.w_.row(d) = (stats.sy / stats.n).transpose();
  m.stats_ = stats;
  m.fitted_ = true;
  return m;
}

BaselineModel fit(const FeatureSet& train, const TrainSpec& spec) {
  spec.validate();
  require(!train.empty(), Errc::empty_data, "no training windows");
  if (is_regression(train.head()) && spec.solver == Solver::closed_form)
    return fit_ridge(RidgeStats::of(train), train.head(), train.features(), train.shape(), spec);

  BaselineModel m;
  m.head_ = train.head();
  m.features_ = train.features();
  m.shape_ = train.shape();
  m.spec_ = spec;
  const auto x = train.x();
  column_stats(x.colwise().sum().transpose(), x.colwise().squaredNorm().transpose(),
               static_cast<double>(train.size()), m.mean_, m.scale_);
  const Eigen::MatrixXd z = m.standardized(train);
  m.w_ = Eigen::MatrixXd::Zero(z.cols() + 1, static_cast<Eigen::Index>(head_dim(m.head_)));
  m.history_ = train_adam(m.w_, z, train, spec, spec.pretrain_epochs, spec.seed);
  m.fitted_ = true;
  return m;
}

BaselineModel finetune(const BaselineModel& pretrained, const FeatureSet& user, const TrainSpec& spec) {
  spec.validate();
  require(pretrained.fitted(), Errc::not_fitted, "fine-tuning needs a fitted model");
  require(user.head() == pretrained.head(), Errc::head_mismatch, "fine-tune data head differs from the model");
  BaselineModel m = pretrained;
  if (user.empty()) return m;
  require(user.shape() == pretrained.shape(), Errc::shape_mismatch, "window shape differs from the model");
  m.spec_ = spec;
  if (is_regression(m.head_) && spec.solver == Solver::closed_form && pretrained.stats_.n > 0.0) {
    RidgeStats joint = RidgeStats::of(user);
    joint *= spec.finetune_weight;
    joint += pretrained.stats_;
    m = fit_ridge(joint, m.head_, m.features_, m.shape_, spec);
    m.stats_ = pretrained.stats_;
    return m;
  }
  const Eigen::MatrixXd z = m.standardized(user);
  if (is_regression(m.head_) && spec.solver == Solver::closed_form) {
    // min |[Z 1] W - Y|^2 + mu |W - W0|^2
    Eigen::MatrixXd a(z.rows(), z.cols() + 1);
    a.leftCols(z.cols()) = z;
    a.col(z.cols()).setOnes();
    Eigen::MatrixXd g = a.transpose() * a;
    g.diagonal().array() += spec.finetune_lambda;
    const Eigen::MatrixXd rhs = a.transpose() * Eigen::MatrixXd(user.y()) + spec.finetune_lambda * pretrained.w_;
    m.w_ = g.ldlt().solve(rhs);
    m.history_.clear();
    return m;
  }
  m.history_ = train_adam(m.w_, z, user, spec, spec.finetune_epochs, spec.seed ^ 0x9E3779B97F4A7C15ull);
  return m;
}

std::vector<std::uint8_t> encode_model(const BaselineModel& m) {
  require(m.fitted_, Errc::not_fitted, "only fitted models can be saved");
  ByteWriter w;
  w.put_tag("WSMD");
  w.put<std::uint32_t>(kModelVersion);
  w.put<std::uint8_t>(static_cast<std::uint8_t>(m.head_));
  w.put<std::uint8_t>(static_cast<std::uint8_t>(m.spec_.solver));
  w.put<std::int32_t>(m.spec_.pretrain_epochs);
  w.put<std::int32_t>(m.spec_.finetune_epochs);
  w.put<std::int32_t>(m.spec_.batch_size);
  w.put<double>(m.spec_.learning_rate);
  w.put<std::uint64_t>(m.spec_.seed);
  w.put<double>(m.spec_.ridge_lambda);
  w.put<double>(m.spec_.finetune_lambda);
  w.put<double>(m.spec_.finetune_weight);
  w.put<std::int32_t>(m.features_.segments);
  w.put<std::int32_t>(m.features_.grid_frames);
  w.put<std::int32_t>(m.features_.grid_pixels);
  w.put<std::uint32_t>(m.shape_.frames);
  w.put<std::uint32_t>(m.shape_.pixels);
  w.put<std::uint32_t>(m.shape_.channels);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(m.mean_.size()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(m.w_.cols()));
  w.put_array<double>({m.mean_.data(), static_cast<std::size_t>(m.mean_.size())});
  w.put_array<double>({m.scale_.data(), static_cast<std::size_t>(m.scale_.size())});
  w.put_array<double>({m.w_.data(), static_cast<std::size_t>(m.w_.size())});
  w.put<std::uint32_t>(static_cast<std::uint32_t>(m.history_.size()));
  w.put_array<double>(m.history_);
  // Training statistics: n, sums, cross products, lower triangle of the Gram.
  const bool has_stats = m.stats_.n > 0.0;
  w.put<std::uint8_t>(has_stats ? 1 : 0);
  if (has_stats) {
    const auto& st = m.stats_;
    w.put<double>(st.n);
    w.put_array<double>({st.sx.data(), static_cast<std::size_t>(st.sx.size())});
    w.put_array<double>({st.sy.data(), static_cast<std::size_t>(st.sy.size())});
    w.put_array<double>({st.xty.data(), static_cast<std::size_t>(st.xty.size())});
    std::vector<double> tri;
    tri.reserve(static_cast<std::size_t>(st.xtx.rows() * (st.xtx.rows() + 1) / 2));
    for (Eigen::Index j = 0; j < st.xtx.cols(); ++j)
      for (Eigen::Index i = j; i < st.xtx.rows(); ++i) tri.push_back(st.xtx(i, j));
    w.put_array<double>(tri);
  }
  return std::move(w).bytes();
}

BaselineModel decode_model(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  require(r.tag_is("WSMD"), Errc::format, "not a model artifact");
  const auto version = r.get<std::uint32_t>();
  require(version == kModelVersion, Errc::format, "unsupported model version " + std::to_string(version));
  BaselineModel m;
  const auto head = r.get<std::uint8_t>();
  require(head <= 2, Errc::format, "unknown head in model artifact");
  m.head_ = static_cast<HeadKind>(head);
  const auto solver = r.get<std::uint8_t>();
  require(solver <= 1, Errc::format, "unknown solver in model artifact");
  m.spec_.solver = static_cast<Solver>(solver);
  m.spec_.pretrain_epochs = r.get<std::int32_t>();
  m.spec_.finetune_epochs = r.get<std::int32_t>();
  m.spec_.batch_size = r.get<std::int32_t>();
  m.spec_.learning_rate = r.get<double>();
  m.spec_.seed = r.get<std::uint64_t>();
  m.spec_.ridge_lambda = r.get<double>();
  m.spec_.finetune_lambda = r.get<double>();
  m.spec_.finetune_weight = r.get<double>();
  m.features_.segments = r.get<std::int32_t>();
  m.features_.grid_frames = r.get<std::int32_t>();
  m.features_.grid_pixels = r.get<std::int32_t>();
  m.features_.validate();
  m.shape_.frames = r.get<std::uint32_t>();
  m.shape_.pixels = r.get<std::uint32_t>();
  m.shape_.channels = r.get<std::uint32_t>();
  const auto d = r.get<std::uint32_t>();
  const auto k = r.get<std::uint32_t>();
  require(d == m.features_.dim(m.shape_.channels) && k == head_dim(m.head_), Errc::format,
          "model dimensions are inconsistent");
  const auto mean = r.get_array<double>(d);
  const auto scale = r.get_array<double>(d);
  const auto w = r.get_array<double>(static_cast<std::size_t>(d + 1) * k);
  m.mean_ = Eigen::Map<const Eigen::VectorXd>(mean.data(), d);
  m.scale_ = Eigen::Map<const Eigen::VectorXd>(scale.data(), d);
  m.w_ = Eigen::Map<const Eigen::MatrixXd>(w.data(), d + 1, k);
  m.history_ = r.get_array<double>(r.get<std::uint32_t>());
  const auto has_stats = r.get<std::uint8_t>();
  require(has_stats <= 1, Errc::format, "bad statistics flag in model artifact");
  if (has_stats) {
    auto& st = m.stats_;
    st.n = r.get<double>();
    const auto sx = r.get_array<double>(d);
    const auto sy = r.get_array<double>(k);
    const auto xty = r.get_array<double>(static_cast<std::size_t>(d) * k);
    const auto tri = r.get_array<double>(static_cast<std::size_t>(d) * (d + 1) / 2);
    st.sx = Eigen::Map<const Eigen::VectorXd>(sx.data(), d);
    st.sy = Eigen::Map<const Eigen::VectorXd>(sy.data(), k);
    st.xty = Eigen::Map<const Eigen::MatrixXd>(xty.data(), d, k);
    st.xtx.resize(d, d);
    std::size_t t = 0;
    for (Eigen::Index j = 0; j < d; ++j)
      for (Eigen::Index i = j; i < d; ++i) st.xtx(i, j) = st.xtx(j, i) = tri[t++];
  }
  require(r.remaining() == 0, Errc::format, "trailing bytes after model artifact");
  m.fitted_ = true;
  return m;
}

void save_model(const std::filesystem::path& path, const BaselineModel& model) {
  write_file_atomic(path, encode_model(model));
}

BaselineModel load_model(const std::filesystem::path& path) { return decode_model(read_file_bytes(path)); }

EvalReport evaluate_predictions(std::span<const Prediction> predictions, const FeatureSet& truth) {
  require(predictions.size() == truth.size(), Errc::shape_mismatch, "one prediction per window is required");
  require(!truth.empty(), Errc::empty_data, "nothing to evaluate");
  EvalReport rep;
  rep.head = truth.head();
  rep.windows = truth.size();
  for (const auto& p : predictions)
    require(p.head == truth.head(), Errc::task_mismatch, "prediction head differs from the test set");
  const auto y = truth.y();
  auto label = [&](std::size_t i) {
    std::vector<float> v(static_cast<std::size_t>(y.cols()));
    for (Eigen::Index c = 0; c < y.cols(); ++c) v[static_cast<std::size_t>(c)] = static_cast<float>(y(static_cast<Eigen::Index>(i), c));
    return v;
  };
  const double n = static_cast<double>(rep.windows);
  switch (rep.head) {
    case HeadKind::pose60: {
      rep.per_joint_error_m.assign(kJointCount - 1, 0.0);
      rep.per_angle_error_deg.assign(kInteriorJointCount, 0.0);
      std::vector<double> all, per_window;
      for (std::size_t i = 0; i < rep.windows; ++i) {
        const HandPose gt = pose_from_label60(label(i));
        const HandPose pred = predictions[i].pose();
        const auto errs = joint_errors(pred, gt);
        for (std::size_t j = 0; j < errs.size(); ++j) rep.per_joint_error_m[j] += errs[j] / n;
        all.insert(all.end(), errs.begin(), errs.end());
        const double e = mjede(pred, gt);
        per_window.push_back(e);
        rep.mjede_m += e / n;
        rep.mjae_deg += mjae(pred, gt) / n;
        const auto a = joint_angles_deg(pred), b = joint_angles_deg(gt);
        for (std::size_t j = 0; j < kInteriorJointCount; ++j) rep.per_angle_error_deg[j] += std::abs(a[j] - b[j]) / n;
      }
      rep.joint_error_cdf = error_cdf(all);
      std::sort(per_window.begin(), per_window.end());
      const std::size_t mid = per_window.size() / 2;
      rep.median_window_error_m =
          per_window.size() % 2 ? per_window[mid] : 0.5 * (per_window[mid - 1] + per_window[mid]);
      break;
    }
    case HeadKind::wrist3: {
      std::vector<double> errs;
      for (std::size_t i = 0; i < rep.windows; ++i) {
        const auto v = label(i);
        errs.push_back(mwae(predictions[i].v9(), Vec3(v[0], v[1], v[2])));
        rep.mwae_deg += errs.back() / n;
      }
      rep.wrist_error_cdf = error_cdf(errs);
      break;
    }
    case HeadKind::class12: {
      rep.confusion.assign(kInteractionClasses, std::vector<std::size_t>(kInteractionClasses, 0));
      std::size_t hits = 0;
      for (std::size_t i = 0; i < rep.windows; ++i) {
        const int t = truth.classes()[i];
        const int p = predictions[i].class_id;
        ++rep.confusion[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)];
        hits += t == p;
      }
      rep.accuracy = static_cast<double>(hits) / n;
      break;
    }
  }
  return rep;
}

EvalReport evaluate(const BaselineModel& model, const FeatureSet& test) {
  require(model.fitted(), Errc::not_fitted, "model is not fitted");
  require(model.head() == test.head(), Errc::task_mismatch, "test set head differs from the model");
  const auto preds = model.predict(test);
  return evaluate_predictions(preds, test);
}

nlohmann::json EvalReport::to_json() const {
  auto cdf = [](const std::vector<CdfPoint>& pts) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& p : pts) a.push_back({p.threshold, p.fraction});
    return a;
  };
  nlohmann::json j = {{"head", to_string(head)}, {"windows", windows}};
  switch (head) {
    case HeadKind::pose60: {
      j["mjede_mm"] = mjede_m * 1e3;
      j["mjae_deg"] = mjae_deg;
      j["median_window_error_mm"] = median_window_error_m * 1e3;
      nlohmann::json joints = nlohmann::json::object();
      for (std::size_t i = 0; i < per_joint_error_m.size(); ++i) joints[joint_name(i + 1)] = per_joint_error_m[i] * 1e3;
      j["per_joint_error_mm"] = joints;
      nlohmann::json angles = nlohmann::json::object();
      for (std::size_t i = 0; i < per_angle_error_deg.size(); ++i)
        angles[joint_name(interior_joints()[i])] = per_angle_error_deg[i];
      j["per_angle_error_deg"] = angles;
      j["joint_error_cdf_m"] = cdf(joint_error_cdf);
      break;
    }
    case HeadKind::wrist3:
      j["mwae_deg"] = mwae_deg;
      j["wrist_error_cdf_deg"] = cdf(wrist_error_cdf);
      break;
    case HeadKind::class12:
      j["accuracy"] = accuracy;
      j["confusion"] = confusion;
      break;
  }
  return j;
}

}  // namespace wsonar
