#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <memory>
#include <random>
#include <vector>

#include "test_support.hpp"
#include "wpcl/envsim.hpp"
#include "wpcl/error.hpp"
#include "wpcl/metrics.hpp"
#include "wpcl/vocab.hpp"

using namespace wpcl;

namespace {

// 7x7 room with a short wall segment so geodesics differ from Manhattan.
std::shared_ptr<const GridEnvironment> walled_room() {
  std::vector<std::uint8_t> walk(49, 1);
  for (int y = 0; y <= 3; ++y) walk[static_cast<std::size_t>(y) * 7 + 3] = 0;  // x == 3 partial
  std::vector<ObjectInstance> objects = {{0, "sofa", {6, 6}}};
  return std::make_shared<GridEnvironment>(7, 7, std::move(walk), std::move(objects), 2);
}

EpisodeResult make_result(std::shared_ptr<const GridEnvironment> env,
                          std::vector<Cell> visited, Cell goal, int shortest_len,
                          int threshold = 1) {
  EpisodeResult r;
  r.env = std::move(env);
  r.stop_cell = visited.back();
  r.visited_cells = std::move(visited);
  r.goal_cell = goal;
  r.shortest_len = shortest_len;
  r.success_threshold = threshold;
  return r;
}

std::vector<int> oracle_field(const GridEnvironment& env, Cell from) {
  std::vector<int> dist(static_cast<std::size_t>(env.width()) * env.height());
  for (int y = 0; y < env.height(); ++y) {
    for (int x = 0; x < env.width(); ++x) {
      dist[static_cast<std::size_t>(y) * env.width() + x] =
          wpcl_test::dijkstra_distance(env, from, {x, y});
    }
  }
  return dist;
}

}  // namespace

TEST_CASE("trajectory length counts cell-to-cell moves only") {
  auto env = walled_room();
  // Turn-in-place steps repeat the cell and must not count.
  EpisodeResult r = make_result(env, {{0, 0}, {0, 0}, {1, 0}, {1, 0}, {1, 0}, {2, 0}}, {2, 0}, 2);
  CHECK(trajectory_length(r) == 2);

  EpisodeResult stay = make_result(env, {{4, 4}}, {4, 4}, 0);
  CHECK(trajectory_length(stay) == 0);

  EpisodeResult back = make_result(env, {{0, 0}, {1, 0}, {0, 0}}, {5, 5}, 1);
  CHECK(trajectory_length(back) == 2);  // revisits still count as moves
}

TEST_CASE("nav error is the geodesic stop-goal distance") {
  auto env = walled_room();
  // (2,0) -> (4,0) must detour around the x==3 wall segment (open at y >= 4).
  EpisodeResult r = make_result(env, {{2, 0}}, {4, 0}, 0);
  CHECK(nav_error(r) == 10);

  EpisodeResult at_goal = make_result(env, {{4, 0}}, {4, 0}, 0);
  CHECK(nav_error(at_goal) == 0);

  SUBCASE("disconnected stop throws") {
    std::vector<std::uint8_t> walk(9, 1);
    walk[1] = walk[3] = 0;  // isolate (0,0) in a 3x3 room
    auto boxed = std::make_shared<GridEnvironment>(
        3, 3, std::move(walk), std::vector<ObjectInstance>{{0, "desk", {2, 2}}}, 1);
    EpisodeResult trapped = make_result(boxed, {{0, 0}}, {2, 2}, 0);
    CHECK_THROWS_AS(nav_error(trapped), NoPathError);
  }
}

TEST_CASE("success compares nav error with the threshold") {
  auto env = walled_room();
  CHECK(success(make_result(env, {{5, 5}}, {5, 5}, 0)));
  CHECK(success(make_result(env, {{5, 4}}, {5, 5}, 0)));        // NE 1 <= 1
  CHECK_FALSE(success(make_result(env, {{5, 3}}, {5, 5}, 0)));  // NE 2

  EpisodeResult strict = make_result(env, {{5, 4}}, {5, 5}, 0, /*threshold=*/0);
  CHECK_FALSE(success(strict));
}

TEST_CASE("oracle success scans every visited cell") {
  auto env = walled_room();
  // Walks through (5,4) (adjacent to the goal) then wanders away.
  EpisodeResult r =
      make_result(env, {{5, 2}, {5, 3}, {5, 4}, {5, 3}, {5, 2}, {5, 1}}, {5, 5}, 3);
  CHECK_FALSE(success(r));
  CHECK(oracle_success(r));

  EpisodeResult never = make_result(env, {{0, 0}, {1, 0}}, {5, 5}, 3);
  CHECK_FALSE(oracle_success(never));

  SUBCASE("unreachable visited cells are skipped, not fatal") {
    std::vector<std::uint8_t> walk(9, 1);
    walk[1] = walk[3] = 0;
    auto boxed = std::make_shared<GridEnvironment>(
        3, 3, std::move(walk), std::vector<ObjectInstance>{{0, "desk", {2, 2}}}, 1);
    EpisodeResult trapped = make_result(boxed, {{0, 0}}, {2, 2}, 0);
    CHECK_FALSE(oracle_success(trapped));
  }
}

TEST_CASE("SPL term weights success by path efficiency") {
  auto env = walled_room();
  // Success with a detour: l = 2, p = 4 -> 0.5.
  EpisodeResult detour =
      make_result(env, {{4, 4}, {4, 3}, {4, 4}, {4, 5}, {4, 6}}, {4, 6}, 2);
  CHECK(spl_term(detour) == doctest::Approx(0.5).epsilon(1e-14));

  // Efficient success: p == l -> 1.
  EpisodeResult direct = make_result(env, {{4, 4}, {4, 5}, {4, 6}}, {4, 6}, 2);
  CHECK(spl_term(direct) == doctest::Approx(1.0).epsilon(1e-14));

  // Failure zeroes the term regardless of efficiency.
  EpisodeResult miss = make_result(env, {{0, 0}, {1, 0}}, {4, 6}, 2);
  CHECK(spl_term(miss) == 0.0);

  // Degenerate l == 0 (start == goal): term is the bare success bit.
  EpisodeResult trivial = make_result(env, {{4, 4}}, {4, 4}, 0);
  CHECK(spl_term(trivial) == 1.0);
  EpisodeResult trivial_miss = make_result(env, {{0, 0}}, {4, 4}, 0);
  CHECK(spl_term(trivial_miss) == 0.0);

  // Shorter-than-shortest walks cannot exceed 1 thanks to max(p, l).
  EpisodeResult teleportish = make_result(env, {{4, 5}, {4, 6}}, {4, 6}, 5);
  CHECK(spl_term(teleportish) == 1.0);
}

TEST_CASE("episode results are validated") {
  auto env = walled_room();
  EpisodeResult no_env;
  no_env.visited_cells = {{0, 0}};
  no_env.stop_cell = {0, 0};
  CHECK_THROWS_AS(trajectory_length(no_env), ConfigError);

  EpisodeResult empty;
  empty.env = env;
  CHECK_THROWS_AS(nav_error(empty), ConfigError);

  EpisodeResult mismatched = make_result(env, {{0, 0}, {1, 0}}, {5, 5}, 1);
  mismatched.stop_cell = {0, 0};  // not the last visited cell
  CHECK_THROWS_AS(success(mismatched), ConfigError);
}

TEST_CASE("metrics agree with an independent oracle on random walks") {
  std::mt19937_64 rng(404);
  Vocabulary vocab(default_vocab());
  int checked = 0;
  for (int trial = 0; trial < 25; ++trial) {
    EnvConfig cfg;
    cfg.seed = 9000 + trial;
    cfg.width = 9;
    cfg.height = 8;
    cfg.num_objects = 4;
    cfg.vocab = vocab.labels();
    cfg.wall_density = 0.2;
    auto env = std::make_shared<const GridEnvironment>(generate_environment(cfg));

    const auto cells = env->walkable_cells();
    std::uniform_int_distribution<std::size_t> pick(0, cells.size() - 1);
    for (int walk = 0; walk < 8; ++walk) {
      Cell goal = cells[pick(rng)];
      std::vector<Cell> visited = {cells[pick(rng)]};
      std::uniform_int_distribution<int> len(0, 14);
      std::uniform_int_distribution<int> dir(0, 3);
      const int steps = len(rng);
      for (int s = 0; s < steps; ++s) {
        static const int dx[] = {0, 1, 0, -1};
        static const int dy[] = {1, 0, -1, 0};
        const int d = dir(rng);
        Cell next{visited.back().x + dx[d], visited.back().y + dy[d]};
        visited.push_back(env->in_bounds(next) && env->walkable(next) ? next : visited.back());
      }
      EpisodeResult r = make_result(env, visited, goal, 0);

      const std::vector<int> dist = oracle_field(*env, goal);
      auto at = [&](Cell c) { return dist[static_cast<std::size_t>(c.y) * env->width() + c.x]; };

      int expected_tl = 0;
      for (std::size_t t = 0; t + 1 < visited.size(); ++t) {
        if (visited[t] != visited[t + 1]) ++expected_tl;
      }
      CHECK(trajectory_length(r) == expected_tl);

      if (at(r.stop_cell) < 0) {
        CHECK_THROWS_AS(nav_error(r), NoPathError);
        continue;
      }
      CHECK(nav_error(r) == at(r.stop_cell));
      CHECK(success(r) == (at(r.stop_cell) <= r.success_threshold));
      bool expect_osr = false;
      for (Cell c : visited) {
        expect_osr = expect_osr || (at(c) >= 0 && at(c) <= r.success_threshold);
      }
      CHECK(oracle_success(r) == expect_osr);
      ++checked;
    }
  }
  CHECK(checked >= 150);
}

TEST_CASE("summary obeys SPL <= SR <= OSR") {
  std::mt19937_64 rng(77);
  auto env = walled_room();
  const auto cells = env->walkable_cells();
  std::uniform_int_distribution<std::size_t> pick(0, cells.size() - 1);

  std::vector<EpisodeResult> batch;
  for (int e = 0; e < 40; ++e) {
    std::vector<Cell> visited = {cells[pick(rng)]};
    std::uniform_int_distribution<int> len(0, 10);
    const int steps = len(rng);
    for (int s = 0; s < steps; ++s) {
      Cell c = cells[pick(rng)];
      // Jump walks are fine here; the chain invariant holds regardless.
      visited.push_back(c);
    }
    batch.push_back(make_result(env, visited, cells[pick(rng)],
                                1 + static_cast<int>(e % 4)));
  }
  MetricsSummary m = summarize(batch);
  CHECK(m.num_episodes == 40);
  CHECK(m.spl <= m.sr + 1e-12);
  CHECK(m.sr <= m.osr + 1e-12);
  CHECK(m.spl == doctest::Approx(spl(batch)).epsilon(1e-12));
  CHECK(m.osr == doctest::Approx(osr(batch)).epsilon(1e-12));
  CHECK(m.ne >= 0.0);
  CHECK(m.tl >= 0.0);
}

TEST_CASE("expert replays score perfect SR and SPL") {
  Vocabulary vocab(default_vocab());
  ObservationSpec spec;
  EpisodeConfig ecfg;
  ecfg.min_path_len = 2;
  ecfg.max_path_len = 7;

  std::vector<EpisodeResult> batch;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    EnvConfig cfg;
    cfg.seed = 500 + seed;
    cfg.width = 10;
    cfg.height = 10;
    cfg.num_objects = 5;
    cfg.vocab = vocab.labels();
    cfg.wall_density = 0.15;
    auto env = std::make_shared<const GridEnvironment>(generate_environment(cfg));
    Episode ep = make_episode(seed, env, spec, ecfg, vocab);

    EpisodeResult r;
    r.env = env;
    Pose pose = ep.start;
    r.visited_cells = {pose.cell};
    for (Action a : ep.expert_actions) {
      if (a == Action::Stop) break;
      StepResult sr = step(*env, pose, a);
      REQUIRE_FALSE(sr.blocked);
      pose = sr.pose;
      r.visited_cells.push_back(pose.cell);
    }
    r.stop_cell = r.visited_cells.back();
    r.goal_cell = ep.goal_cell;
    r.shortest_len = static_cast<int>(ep.expert_cells.size()) - 1;
    batch.push_back(std::move(r));
  }

  MetricsSummary m = summarize(batch);
  CHECK(m.sr == 1.0);
  CHECK(m.spl == 1.0);
  CHECK(m.osr == 1.0);
  CHECK(m.ne == 0.0);
  CHECK(m.tl >= 2.0);
}

TEST_CASE("empty batches summarize to zeros") {
  MetricsSummary m = summarize({});
  CHECK(m.num_episodes == 0);
  CHECK(m.tl == 0.0);
  CHECK(m.ne == 0.0);
  CHECK(m.sr == 0.0);
  CHECK(m.spl == 0.0);
  CHECK(m.osr == 0.0);
  CHECK(spl({}) == 0.0);
  CHECK(osr({}) == 0.0);
}
