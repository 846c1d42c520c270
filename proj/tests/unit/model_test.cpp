#include <doctest.h>

#include <cmath>
#include <nlohmann/json.hpp>

#include "support.hpp"
#include "wsonar/error.hpp"
#include "wsonar/model.hpp"

using namespace wsonar;

namespace {

WindowSample random_window(std::mt19937_64& rng, std::size_t frames = 16, std::size_t pixels = 24) {
  std::normal_distribution<double> g;
  WindowSample w;
  w.frames = frames;
  w.pixels = pixels;
  w.channels = 1;
  w.tensor.resize(frames * pixels);
  for (auto& v : w.tensor) v = static_cast<float>(g(rng));
  return w;
}

// Regression targets that are an exact affine function of the pooled features.
FeatureSet realizable(std::size_t n, HeadKind head, std::uint64_t seed, const Eigen::MatrixXd* coeffs = nullptr) {
  std::mt19937_64 rng(seed);
  const FeatureConfig cfg;
  const std::size_t d = cfg.dim(1), k = head_dim(head);
  Eigen::MatrixXd a;
  if (coeffs) {
    a = *coeffs;
  } else {
    std::mt19937_64 crng(99);
    std::normal_distribution<double> g(0.0, 0.05);
    a.resize(static_cast<Eigen::Index>(d + 1), static_cast<Eigen::Index>(k));
    for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = g(crng);
  }
  FeatureSet set(head, cfg);
  for (std::size_t i = 0; i < n; ++i) {
    auto w = random_window(rng);
    const auto f = pooled_features(w, cfg);
    w.label.resize(k);
    for (std::size_t j = 0; j < k; ++j) {
      double y = a(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(j));
      for (std::size_t q = 0; q < d; ++q) y += f[q] * a(static_cast<Eigen::Index>(q), static_cast<Eigen::Index>(j));
      w.label[j] = static_cast<float>(y);
    }
    w.source = {"P01", "S01", i, i + 16};
    set.add(w);
  }
  return set;
}

// Classes decided by which third of the window carries the most energy.
FeatureSet separable(std::size_t n, std::uint64_t seed, int classes = 3) {
  std::mt19937_64 rng(seed);
  FeatureSet set(HeadKind::class12, FeatureConfig{});
  for (std::size_t i = 0; i < n; ++i) {
    auto w = random_window(rng);
    const int c = static_cast<int>(i % static_cast<std::size_t>(classes));
    for (std::size_t f = 0; f < w.frames; ++f)
      for (std::size_t p = static_cast<std::size_t>(c) * 8; p < static_cast<std::size_t>(c + 1) * 8; ++p)
        w.tensor[f * w.pixels + p] *= 4.0f;
    w.class_id = c;
    set.add(w);
  }
  return set;
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8}); }

}  // namespace

TEST_SUITE("model") {

TEST_CASE("head helpers") {
  CHECK(head_dim(HeadKind::pose60) == 60);
  CHECK(head_dim(HeadKind::wrist3) == 3);
  CHECK(head_dim(HeadKind::class12) == 12);
  CHECK(head_for(Task::interaction) == HeadKind::class12);
  CHECK(head_from_string(to_string(HeadKind::wrist3)) == HeadKind::wrist3);
  CHECK_THROWS_AS(head_from_string("tail"), Error);
}

TEST_CASE("pooled features") {
  WindowSample w;
  w.frames = 4;
  w.pixels = 4;
  w.channels = 2;
  for (int i = 0; i < 32; ++i) w.tensor.push_back(static_cast<float>(i % 2 ? -i : i));
  const FeatureConfig cfg{2, 1, 2};
  const auto f = pooled_features(w, cfg);
  REQUIRE(f.size() == cfg.dim(2));
  // Segment 0, pixel cell 0, channel 0: frames 0-1, pixels 0-1 -> values 0, 2, 8, 10.
  CHECK(f[0] == doctest::Approx(5.0));
  CHECK(f[1] == 10.0);
  // Channel 1 of the same cell: |-1|, |-3|, |-9|, |-11|.
  CHECK(f[2] == doctest::Approx(6.0));
  CHECK(f[3] == 11.0);
  CHECK(f.back() == 31.0);
}

TEST_CASE("closed form recovers a realizable target") {
  const auto train = realizable(800, HeadKind::wrist3, 1);
  TrainSpec spec;
  spec.ridge_lambda = 1e-12;
  const auto m = fit(train, spec);
  const auto test = realizable(50, HeadKind::wrist3, 2);
  const auto preds = m.predict(test);
  const auto y = test.y();
  double worst = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i)
    for (std::size_t j = 0; j < 3; ++j)
      worst = std::max(worst, std::abs(preds[i].values[j] - y(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j))) /
                                  std::max(1.0, std::abs(y(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)))));
  CHECK(worst < 1e-6);
  CHECK(m.training_stats().n == 800.0);
}

TEST_CASE("ridge statistics add up") {
  const auto a = realizable(30, HeadKind::wrist3, 3), b = realizable(20, HeadKind::wrist3, 4);
  auto ab = a;
  ab.append(b);
  auto s = RidgeStats::of(a);
  s += RidgeStats::of(b);
  const auto whole = RidgeStats::of(ab);
  CHECK(s.n == 50.0);
  CHECK((s.xtx - whole.xtx).cwiseAbs().maxCoeff() < 1e-9);
  CHECK((s.xty - whole.xty).cwiseAbs().maxCoeff() < 1e-9);
  auto twice = RidgeStats::of(a);
  twice *= 2.0;
  auto sum = RidgeStats::of(a);
  sum += RidgeStats::of(a);
  CHECK((twice.xtx - sum.xtx).cwiseAbs().maxCoeff() < 1e-9);
  CHECK_THROWS_AS(RidgeStats::of(separable(3, 1)), Error);
}

TEST_CASE("objective gradients match central differences") {
  std::mt19937_64 rng(17);
  std::normal_distribution<double> g;
  std::uniform_int_distribution<int> dims(2, 6);
  for (int trial = 0; trial < 20; ++trial) {
    const int d = dims(rng), k = dims(rng), n = dims(rng) + 3;
    Eigen::MatrixXd w(d + 1, k), z(n, d), y(n, k);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = g(rng);
    for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = g(rng);
    for (Eigen::Index i = 0; i < y.size(); ++i) y.data()[i] = g(rng);
    std::vector<int> labels(static_cast<std::size_t>(n));
    for (auto& l : labels) l = std::uniform_int_distribution<int>(0, k - 1)(rng);
    const double lambda = 0.1;
    Eigen::MatrixXd ga, gb;
    mse_objective(w, z, y, lambda, &ga);
    softmax_objective(w, z, labels, lambda, &gb);
    const double h = 1e-5;
    for (Eigen::Index i = 0; i < w.size(); ++i) {
      Eigen::MatrixXd wp = w, wm = w;
      wp.data()[i] += h;
      wm.data()[i] -= h;
      const double fa = (mse_objective(wp, z, y, lambda, nullptr) - mse_objective(wm, z, y, lambda, nullptr)) / (2 * h);
      const double fb = (softmax_objective(wp, z, labels, lambda, nullptr) - softmax_objective(wm, z, labels, lambda, nullptr)) / (2 * h);
      CHECK(rel_err(ga.data()[i], fa) < 1e-4);
      CHECK(rel_err(gb.data()[i], fb) < 1e-4);
    }
  }
}

TEST_CASE("the closed form minimises the objective") {
  const auto train = realizable(200, HeadKind::wrist3, 5);
  TrainSpec spec;
  spec.ridge_lambda = 0.05;
  const auto m = fit(train, spec);
  // Standardize with the model's own statistics and check the gradient vanishes.
  Eigen::MatrixXd z = train.x();
  z.rowwise() -= m.feature_mean().transpose();
  z.array().rowwise() /= m.feature_scale().transpose().array();
  Eigen::MatrixXd grad;
  mse_objective(m.weights(), z, train.y(), spec.ridge_lambda, &grad);
  CHECK(grad.cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("classification") {
  const auto train = separable(240, 1);
  TrainSpec spec;
  spec.pretrain_epochs = 30;
  spec.learning_rate = 0.01;
  spec.seed = 3;
  const auto m = fit(train, spec);
  REQUIRE(m.loss_history().size() == 30);
  CHECK(m.loss_history().front() < std::log(12.0));
  CHECK(m.loss_history().back() < 0.1);
  const auto report = evaluate(m, separable(60, 2));
  CHECK(report.accuracy > 0.9);
  CHECK(fit(train, spec) == m);

  FeatureSet one(HeadKind::class12, FeatureConfig{});
  std::mt19937_64 rng(4);
  for (int i = 0; i < 20; ++i) {
    auto w = random_window(rng);
    w.class_id = 7;
    one.add(w);
  }
  spec.pretrain_epochs = 200;
  const auto only = fit(one, spec);
  for (const auto& p : only.predict(separable(10, 5))) CHECK(p.class_id == 7);
}

TEST_CASE("fine-tuning") {
  const auto pre = realizable(300, HeadKind::wrist3, 6);
  TrainSpec spec;
  const auto base = fit(pre, spec);

  SUBCASE("no data returns the model unchanged") {
    const FeatureSet none(HeadKind::wrist3, FeatureConfig{});
    CHECK(finetune(base, none, spec) == base);
  }
  SUBCASE("fine-tuning on the training set does not increase its loss") {
    const auto tuned = finetune(base, pre, spec);
    CHECK(tuned.data_loss(pre) <= base.data_loss(pre) * (1 + 1e-9));
    CHECK(tuned.training_stats() == base.training_stats());
  }
  SUBCASE("user data pulls the model towards the user") {
    Eigen::MatrixXd shifted(static_cast<Eigen::Index>(FeatureConfig{}.dim(1) + 1), 3);
    std::mt19937_64 crng(123);
    std::normal_distribution<double> g(0.0, 0.05);
    for (Eigen::Index i = 0; i < shifted.size(); ++i) shifted.data()[i] = g(crng);
    const auto user = realizable(400, HeadKind::wrist3, 7, &shifted);
    const auto test = realizable(60, HeadKind::wrist3, 8, &shifted);
    const auto tuned = finetune(base, user, spec);
    CHECK(tuned.data_loss(test) < base.data_loss(test));
    CHECK(base.data_loss(pre) < 1e-3);
  }
  SUBCASE("without training statistics the proximal solve stays near the start") {
    TrainSpec adam = spec;
    adam.solver = Solver::adam;
    adam.pretrain_epochs = 3;
    const auto start = fit(pre, adam);
    CHECK(start.training_stats().n == 0.0);
    TrainSpec prox = spec;
    prox.finetune_lambda = 1e9;
    const auto tuned = finetune(start, realizable(40, HeadKind::wrist3, 9), prox);
    CHECK((tuned.weights() - start.weights()).cwiseAbs().maxCoeff() < 1e-4);
  }
  SUBCASE("Adam fine-tuning of a classifier") {
    const auto cls = separable(90, 10);
    TrainSpec c = spec;
    c.pretrain_epochs = 5;
    c.learning_rate = 0.005;
    const auto m = fit(cls, c);
    const auto tuned = finetune(m, cls, c);
    CHECK(tuned.data_loss(cls) <= m.data_loss(cls));
    CHECK(finetune(m, cls, c) == tuned);
  }
  SUBCASE("mismatched data is rejected") {
    CHECK_THROWS_AS(finetune(base, separable(5, 1), spec), Error);
    CHECK_THROWS_AS(finetune(BaselineModel{}, pre, spec), Error);
  }
}

TEST_CASE("model artifacts round trip") {
  const auto m = fit(realizable(120, HeadKind::pose60, 11), TrainSpec{});
  const auto bytes = encode_model(m);
  const auto back = decode_model(bytes);
  CHECK(back == m);
  const auto test = realizable(5, HeadKind::pose60, 12);
  const auto a = m.predict(test), b = back.predict(test);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].values == b[i].values);

  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(decode_model(bad), Error);
  bad = bytes;
  bad.push_back(0);
  CHECK_THROWS_AS(decode_model(bad), Error);
  bad = bytes;
  bad.resize(bytes.size() / 2);
  CHECK_THROWS_AS(decode_model(bad), Error);
  bad = bytes;
  bad[4] = 99;
  CHECK_THROWS_AS(decode_model(bad), Error);

  const auto dir = wsonar::testing::scratch_dir("model");
  save_model(dir / "m.wsm", m);
  CHECK(load_model(dir / "m.wsm") == m);
  CHECK_THROWS_AS(save_model(dir / "n.wsm", BaselineModel{}), Error);
  CHECK_THROWS_AS(load_model(dir / "missing.wsm"), Error);
}

TEST_CASE("predictions") {
  const auto p = make_prediction(HeadKind::class12, {0.1f, 0.5f, 0.5f, 0, 0, 0, 0, 0, 0, 0, 0, 0.2f});
  CHECK(p.class_id == 1);
  CHECK_THROWS_AS(make_prediction(HeadKind::wrist3, {1.0f}), Error);
  const auto v = make_prediction(HeadKind::wrist3, {1.0f, 2.0f, 3.0f});
  CHECK(v.v9() == Vec3(1, 2, 3));
  CHECK_THROWS_AS(v.pose(), Error);
  const BaselineModel empty;
  WindowSample w;
  CHECK_THROWS_AS(empty.predict(w), Error);
}

TEST_CASE("evaluation") {
  std::mt19937_64 rng(13);
  const ReferencePose ref(wsonar::testing::random_pose(rng));
  FeatureSet truth(HeadKind::pose60, FeatureConfig{});
  std::vector<Prediction> exact, off;
  for (int i = 0; i < 8; ++i) {
    auto w = random_window(rng);
    const auto pose = normalize(wsonar::testing::random_pose(rng), ref, 0.08);
    w.label = pose_to_label60(pose);
    truth.add(w);
    exact.push_back(make_prediction(HeadKind::pose60, w.label));
    auto moved = w.label;
    moved[3 * 4 + 1] += 0.004f;  // joint 5 moves 4 mm
    off.push_back(make_prediction(HeadKind::pose60, moved));
  }
  const auto perfect = evaluate_predictions(exact, truth);
  CHECK(perfect.windows == 8);
  CHECK(perfect.mjede_m == 0.0);
  CHECK(perfect.mjae_deg == 0.0);
  CHECK(perfect.median_window_error_m == 0.0);
  const auto shifted = evaluate_predictions(off, truth);
  CHECK(shifted.mjede_m == doctest::Approx(0.0002).epsilon(1e-4));
  CHECK(shifted.per_joint_error_m[4] == doctest::Approx(0.004).epsilon(1e-4));
  CHECK(shifted.per_joint_error_m[0] == 0.0);
  CHECK(shifted.joint_error_cdf.back().fraction == 1.0);
  CHECK(shifted.to_json().at("head") == "pose60");

  FeatureSet cls(HeadKind::class12, FeatureConfig{});
  std::vector<Prediction> guesses;
  for (int c = 0; c < 4; ++c) {
    auto w = random_window(rng);
    w.class_id = c;
    cls.add(w);
    std::vector<float> scores(12, 0.0f);
    scores[c == 3 ? 1 : static_cast<std::size_t>(c)] = 1.0f;
    guesses.push_back(make_prediction(HeadKind::class12, scores));
  }
  const auto r = evaluate_predictions(guesses, cls);
  CHECK(r.accuracy == 0.75);
  CHECK(r.confusion[3][1] == 1);
  CHECK(r.confusion[2][2] == 1);
  CHECK_THROWS_AS(evaluate_predictions(guesses, truth), Error);

  FeatureSet wrist(HeadKind::wrist3, FeatureConfig{});
  auto w = random_window(rng);
  w.label = {0.0f, 1.0f, 0.0f};
  wrist.add(w);
  const std::vector<Prediction> tilt{make_prediction(HeadKind::wrist3, {1.0f, 1.0f, 0.0f})};
  CHECK(evaluate_predictions(tilt, wrist).mwae_deg == doctest::Approx(45.0));
}

}
