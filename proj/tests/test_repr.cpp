#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "test_support.hpp"
#include "wpcl/envsim.hpp"
#include "wpcl/error.hpp"
#include "wpcl/repr.hpp"

using namespace wpcl;

namespace {

GridEnvironment labeled_room(const std::vector<std::pair<std::string, Cell>>& placements) {
  std::vector<std::uint8_t> walk(49, 1);
  std::vector<ObjectInstance> objects;
  int id = 0;
  for (const auto& [label, cell] : placements) objects.push_back({id++, label, cell});
  return GridEnvironment(7, 7, std::move(walk), std::move(objects), 3);
}

Eigen::VectorXd random_vec(int n, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v[i] = gauss(rng);
  return v;
}

}  // namespace

TEST_CASE("split_obj_dim rounds and validates") {
  CHECK(split_obj_dim(512, 0.2) == 102);  // flex segment gets the remaining 410
  CHECK(512 - split_obj_dim(512, 0.2) == 410);
  CHECK(split_obj_dim(64, 0.2) == 13);
  CHECK(split_obj_dim(10, 0.25) == 3);  // lround: half away from zero
  CHECK(split_obj_dim(2, 0.5) == 1);

  CHECK_THROWS_AS(split_obj_dim(0, 0.2), ConfigError);
  CHECK_THROWS_AS(split_obj_dim(-4, 0.2), ConfigError);
  CHECK_THROWS_AS(split_obj_dim(64, 0.0), ConfigError);
  CHECK_THROWS_AS(split_obj_dim(64, 1.0), ConfigError);
  CHECK_THROWS_AS(split_obj_dim(64, -0.2), ConfigError);
  CHECK_THROWS_AS(split_obj_dim(4, 0.05), ConfigError);  // rounds to empty obj segment
  CHECK_THROWS_AS(split_obj_dim(4, 0.99), ConfigError);  // rounds to empty flex segment
}

TEST_CASE("object embeddings are unit, per-label, and instance-independent") {
  ObjectEmbeddingTable table(48, 11);
  const std::vector<std::string> labels = {"sofa",  "desk",   "chair", "lamp",
                                           "fruits", "coffee table"};
  for (const auto& l : labels) {
    CHECK(table.embedding(l).size() == 48);
    CHECK(std::abs(table.embedding(l).norm() - 1.0) < 1e-12);
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    for (std::size_t j = i + 1; j < labels.size(); ++j) {
      CHECK((table.embedding(labels[i]) - table.embedding(labels[j])).norm() > 1e-3);
    }
  }

  SUBCASE("repeat lookups are stable") {
    Eigen::VectorXd first = table.embedding("sofa");
    CHECK((table.embedding("sofa") - first).norm() == 0.0);
  }
  SUBCASE("same seed agrees across instances, different seed does not") {
    ObjectEmbeddingTable twin(48, 11);
    ObjectEmbeddingTable other(48, 12);
    CHECK((twin.embedding("sofa") - table.embedding("sofa")).norm() == 0.0);
    CHECK((other.embedding("sofa") - table.embedding("sofa")).norm() > 1e-3);
  }
  SUBCASE("invalid dimension") { CHECK_THROWS_AS(ObjectEmbeddingTable(0, 1), ConfigError); }
}

TEST_CASE("backbone mixers are orthogonal and heading-specific") {
  Backbone backbone({32, 0.0, 5});
  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(32, 32);
  for (int heading : {0, 90, 180, 270}) {
    const Eigen::MatrixXd& m = backbone.mixer(heading);
    REQUIRE(m.rows() == 32);
    REQUIRE(m.cols() == 32);
    CHECK((m.transpose() * m - eye).cwiseAbs().maxCoeff() < 1e-10);
    // Spectral norm 1: orthogonal maps preserve length.
    Eigen::VectorXd v = random_vec(32, 99);
    CHECK(std::abs((m * v).norm() - v.norm()) < 1e-10);
  }
  CHECK((backbone.mixer(0) - backbone.mixer(90)).cwiseAbs().maxCoeff() > 1e-3);
  CHECK((backbone.mixer(90) - backbone.mixer(180)).cwiseAbs().maxCoeff() > 1e-3);
  CHECK((backbone.mixer(180) - backbone.mixer(270)).cwiseAbs().maxCoeff() > 1e-3);

  Backbone twin({32, 0.0, 5});
  CHECK((twin.mixer(90) - backbone.mixer(90)).cwiseAbs().maxCoeff() == 0.0);
  Backbone reseeded({32, 0.0, 6});
  CHECK((reseeded.mixer(90) - backbone.mixer(90)).cwiseAbs().maxCoeff() > 1e-3);

  CHECK_THROWS_AS(Backbone({0, 0.0, 5}), ConfigError);
  CHECK_THROWS_AS(Backbone({32, -0.1, 5}), ConfigError);
}

TEST_CASE("noise-free render is the mixed sum of visible label embeddings") {
  GridEnvironment env = labeled_room({{"sofa", {1, 1}}, {"desk", {3, 2}}, {"lamp", {5, 5}}});
  Backbone backbone({24, 0.0, 21});

  Observation obs;
  obs.index = 4;
  obs.pose = {{2, 2}, 90};
  obs.visible_ids = {0, 1};

  Eigen::VectorXd expected = backbone.mixer(90) * (backbone.table().embedding("sofa") +
                                                   backbone.table().embedding("desk"));
  CHECK((backbone.render(env, obs) - expected).norm() == 0.0);
  CHECK((backbone.render(env, obs) -
         backbone.mix_labels({"sofa", "desk"}, 90)).norm() == 0.0);
  CHECK((render_raw_feature(backbone, env, obs) - expected).norm() == 0.0);

  SUBCASE("label order only reassociates the sum") {
    CHECK((backbone.mix_labels({"sofa", "desk"}, 90) -
           backbone.mix_labels({"desk", "sofa"}, 90)).cwiseAbs().maxCoeff() < 1e-12);
  }
  SUBCASE("empty view renders to zero") {
    Observation blank;
    blank.index = 9;
    blank.pose = {{2, 2}, 0};
    CHECK(backbone.render(env, blank).norm() == 0.0);
  }
  SUBCASE("heading changes the mixer, not the content") {
    Observation turned = obs;
    turned.pose.heading_deg = 270;
    Eigen::VectorXd sum = backbone.table().embedding("sofa") + backbone.table().embedding("desk");
    CHECK((backbone.render(env, turned) - backbone.mixer(270) * sum).norm() == 0.0);
  }
}

TEST_CASE("render noise is keyed by (seed, observation index) only") {
  GridEnvironment env = labeled_room({{"sofa", {1, 1}}, {"desk", {3, 2}}});
  BackboneConfig clean_cfg{24, 0.0, 21};
  BackboneConfig noisy_cfg{24, 0.3, 21};
  Backbone clean(clean_cfg);
  Backbone noisy(noisy_cfg);

  Observation a;
  a.index = 7;
  a.pose = {{2, 2}, 90};
  a.visible_ids = {0, 1};

  SUBCASE("deterministic across calls and instances") {
    Backbone twin(noisy_cfg);
    CHECK((noisy.render(env, a) - noisy.render(env, a)).norm() == 0.0);
    CHECK((twin.render(env, a) - noisy.render(env, a)).norm() == 0.0);
  }
  SUBCASE("index selects the noise draw") {
    Observation b = a;
    b.index = 8;
    CHECK((noisy.render(env, a) - noisy.render(env, b)).norm() > 1e-3);
  }
  SUBCASE("pose does not touch the noise stream") {
    Observation turned = a;
    turned.pose = {{4, 4}, 270};
    turned.visible_ids = {1};
    Eigen::VectorXd delta_a = noisy.render(env, a) - clean.render(env, a);
    Eigen::VectorXd delta_b = noisy.render(env, turned) - clean.render(env, turned);
    CHECK((delta_a - delta_b).cwiseAbs().maxCoeff() < 1e-12);
  }
  SUBCASE("backbone seed reseeds the noise") {
    Backbone other({24, 0.3, 22});
    Backbone other_clean({24, 0.0, 22});
    Eigen::VectorXd delta_a = noisy.render(env, a) - clean.render(env, a);
    Eigen::VectorXd delta_b = other.render(env, a) - other_clean.render(env, a);
    CHECK((delta_a - delta_b).norm() > 1e-3);
  }
  SUBCASE("noise magnitude tracks sigma") {
    const double sigma = 0.3;
    double sq = 0.0;
    int n = 0;
    for (int idx = 0; idx < 40; ++idx) {
      Observation o = a;
      o.index = idx;
      Eigen::VectorXd delta = noisy.render(env, o) - clean.render(env, o);
      sq += delta.squaredNorm();
      n += static_cast<int>(delta.size());
    }
    const double rms = std::sqrt(sq / n);
    CHECK(rms > sigma * 0.85);
    CHECK(rms < sigma * 1.15);
  }
}

TEST_CASE("feature split views") {
  VisualFeature h;
  h.values = Eigen::VectorXd(5);
  h.values << 1, 2, 3, 4, 5;
  h.obj_dim = 2;

  auto [objs, flex] = split_features(h);
  REQUIRE(objs.size() == 2);
  REQUIRE(flex.size() == 3);
  CHECK(objs[0] == 1.0);
  CHECK(objs[1] == 2.0);
  CHECK(flex[0] == 3.0);
  CHECK(flex[2] == 5.0);
  CHECK((h_objs(h) - objs).norm() == 0.0);
  CHECK((h_flex(h) - flex).norm() == 0.0);

  VisualFeature bad = h;
  bad.obj_dim = 0;
  CHECK_THROWS_AS(split_features(bad), ConfigError);
  bad.obj_dim = 5;
  CHECK_THROWS_AS(split_features(bad), ConfigError);
}

TEST_CASE("head construction, init, and shapes") {
  SUBCASE("single affine layer") {
    Head head({6, 10, 0.2, 0, 3});
    CHECK(head.in_dim() == 6);
    CHECK(head.out_dim() == 10);
    CHECK(head.obj_dim() == 2);
    CHECK_FALSE(head.two_layer());
    REQUIRE(head.W1.rows() == 10);
    REQUIRE(head.W1.cols() == 6);
    CHECK(head.b1.size() == 10);
    CHECK(head.W2.size() == 0);
    CHECK(head.b2.size() == 0);
    CHECK(head.param_count() == 10 * 6 + 10);
    CHECK(head.b1.cwiseAbs().maxCoeff() == 0.0);
    const double bound = std::sqrt(6.0 / (10 + 6));
    CHECK(head.W1.cwiseAbs().maxCoeff() <= bound);
    CHECK(head.W1.cwiseAbs().maxCoeff() > 0.0);
  }
  SUBCASE("two-layer MLP") {
    Head head({6, 10, 0.2, 8, 3});
    CHECK(head.two_layer());
    REQUIRE(head.W1.rows() == 8);
    REQUIRE(head.W1.cols() == 6);
    REQUIRE(head.W2.rows() == 10);
    REQUIRE(head.W2.cols() == 8);
    CHECK(head.b1.size() == 8);
    CHECK(head.b2.size() == 10);
    CHECK(head.param_count() == 8 * 6 + 8 + 10 * 8 + 10);
  }
  SUBCASE("determinism and seed sensitivity") {
    Head a({6, 10, 0.2, 0, 3});
    Head b({6, 10, 0.2, 0, 3});
    Head c({6, 10, 0.2, 0, 4});
    CHECK((a.param_vector() - b.param_vector()).norm() == 0.0);
    CHECK((a.param_vector() - c.param_vector()).norm() > 1e-6);
  }
  SUBCASE("paper-scale split") {
    Head head({64, 512, 0.2, 0, 0});
    CHECK(head.obj_dim() == 102);
    CHECK(head.encode(Eigen::VectorXd::Zero(64)).obj_dim == 102);
  }
  SUBCASE("invalid configs") {
    CHECK_THROWS_AS(Head({0, 10, 0.2, 0, 3}), ConfigError);
    CHECK_THROWS_AS(Head({6, 0, 0.2, 0, 3}), ConfigError);
    CHECK_THROWS_AS(Head({6, 10, 0.2, -1, 3}), ConfigError);
    CHECK_THROWS_AS(Head({6, 10, 0.01, 0, 3}), ConfigError);  // obj segment empty
  }
}

TEST_CASE("head forward matches hand computation") {
  SUBCASE("single layer") {
    Head head({2, 2, 0.5, 0, 1});
    head.W1 << 1, 2, 3, 4;
    head.b1 << 0.5, -1;
    Eigen::VectorXd z(2);
    z << 1, -1;
    Eigen::VectorXd out = head.forward(z);
    CHECK(out[0] == doctest::Approx(-0.5).epsilon(1e-14));
    CHECK(out[1] == doctest::Approx(-2.0).epsilon(1e-14));
  }
  SUBCASE("two-layer with tanh") {
    Head head({1, 2, 0.5, 1, 1});
    head.W1 << 2;
    head.b1 << 0.1;
    head.W2 << 1, -1;
    head.b2 << 0, 1;
    Eigen::VectorXd z(1);
    z << 0.3;
    Eigen::VectorXd out = head.forward(z);
    const double t = std::tanh(0.7);
    CHECK(out[0] == doctest::Approx(t).epsilon(1e-14));
    CHECK(out[1] == doctest::Approx(1.0 - t).epsilon(1e-14));
  }
  SUBCASE("input dimension is checked") {
    Head head({4, 6, 0.5, 0, 1});
    CHECK_THROWS_AS(head.forward(Eigen::VectorXd::Zero(3)), ConfigError);
    CHECK_THROWS_AS(head.backward(Eigen::VectorXd::Zero(4), Eigen::VectorXd::Zero(5), nullptr),
                    ConfigError);
  }
}

TEST_CASE("head backward agrees with finite differences") {
  for (int hidden : {0, 5}) {
    CAPTURE(hidden);
    Head head({7, 9, 0.3, hidden, 13});
    Eigen::VectorXd z = random_vec(7, 31);
    Eigen::VectorXd c = random_vec(9, 32);  // fixed linear readout: L = c . head(z)

    HeadGrads grads = head.zero_grads();
    Eigen::VectorXd dz = head.backward(z, c, &grads);

    Head probe({7, 9, 0.3, hidden, 13});
    auto loss_at_params = [&](const Eigen::VectorXd& p) {
      probe.set_param_vector(p);
      return c.dot(probe.forward(z));
    };
    CHECK(wpcl_test::fd_check(loss_at_params, head.param_vector(), grads.to_vector()) < 1e-6);

    auto loss_at_input = [&](const Eigen::VectorXd& x) { return c.dot(head.forward(x)); };
    CHECK(wpcl_test::fd_check(loss_at_input, z, dz) < 1e-6);
  }
}

TEST_CASE("head gradients accumulate and scale") {
  Head head({5, 8, 0.25, 4, 2});
  Eigen::VectorXd z = random_vec(5, 41);
  Eigen::VectorXd dout = random_vec(8, 42);

  HeadGrads once = head.zero_grads();
  head.backward(z, dout, &once);
  HeadGrads twice = head.zero_grads();
  head.backward(z, dout, &twice);
  head.backward(z, dout, &twice);
  CHECK((twice.to_vector() - 2.0 * once.to_vector()).cwiseAbs().maxCoeff() < 1e-12);

  HeadGrads mixed = head.zero_grads();
  mixed.add_scaled(once, 3.0);
  CHECK((mixed.to_vector() - 3.0 * once.to_vector()).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(once.to_vector().size() == head.param_count());
}

TEST_CASE("head parameters round-trip through the flat vector") {
  for (int hidden : {0, 6}) {
    CAPTURE(hidden);
    Head head({5, 8, 0.25, hidden, 2});
    Eigen::VectorXd v = random_vec(head.param_count(), 71 + hidden);
    head.set_param_vector(v);
    CHECK((head.param_vector() - v).norm() == 0.0);

    // The flat order is W1, b1, W2, b2 in Eigen column-major storage.
    CHECK(head.W1(0, 0) == v[0]);
    CHECK(head.b1[0] == v[head.W1.size()]);

    Head twin({5, 8, 0.25, hidden, 2});
    twin.set_param_vector(v);
    Eigen::VectorXd z = random_vec(5, 73);
    CHECK((twin.forward(z) - head.forward(z)).norm() == 0.0);
  }
  Head head({5, 8, 0.25, 0, 2});
  CHECK_THROWS_AS(head.set_param_vector(Eigen::VectorXd::Zero(3)), ConfigError);
}
