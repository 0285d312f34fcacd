#include "wpcl/envsim.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <set>

#include "wpcl/nav.hpp"
#include "wpcl/rng.hpp"

namespace wpcl {

GridEnvironment::GridEnvironment(int width, int height, std::vector<std::uint8_t> walkable,
                                 std::vector<ObjectInstance> objects, std::uint64_t seed)
    : width_(width), height_(height), walkable_(std::move(walkable)),
      objects_(std::move(objects)), seed_(seed) {
  if (width_ <= 0 || height_ <= 0) throw ConfigError("grid dimensions must be positive");
  if (walkable_.size() != static_cast<std::size_t>(width_) * height_) {
    throw ConfigError("walkable bitmap size mismatch");
  }
  std::set<int> ids;
  for (const auto& o : objects_) {
    if (o.label.empty()) throw ConfigError("object label must be non-empty");
    if (!ids.insert(o.id).second) throw ConfigError("duplicate object id");
    bool placed_ok = this->walkable(o.cell);
    for (Cell d : {Cell{0, 1}, Cell{1, 0}, Cell{0, -1}, Cell{-1, 0}}) {
      placed_ok = placed_ok || this->walkable({o.cell.x + d.x, o.cell.y + d.y});
    }
    if (!placed_ok) throw ConfigError("object cell is neither walkable nor adjacent to walkable");
  }
}

const ObjectInstance& GridEnvironment::object(int id) const {
  for (const auto& o : objects_) {
    if (o.id == id) return o;
  }
  throw ConfigError("no object with id " + std::to_string(id));
}

std::vector<std::string> GridEnvironment::label_set() const {
  std::set<std::string> s;
  for (const auto& o : objects_) s.insert(o.label);
  return {s.begin(), s.end()};
}

std::vector<Cell> GridEnvironment::walkable_cells() const {
  std::vector<Cell> cells;
  for (int y = 0; y < height_; ++y) {
    for (int x = 0; x < width_; ++x) {
      if (walkable({x, y})) cells.push_back({x, y});
    }
  }
  return cells;
}

namespace {

// N, E, S, W.
constexpr Cell kNeighborOrder[4] = {{0, 1}, {1, 0}, {0, -1}, {-1, 0}};

std::vector<int> component_labels(int width, int height,
                                  const std::vector<std::uint8_t>& walkable, int* num_comps) {
  std::vector<int> comp(static_cast<std::size_t>(width) * height, -1);
  int next = 0;
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      std::size_t at = static_cast<std::size_t>(y) * width + x;
      if (!walkable[at] || comp[at] >= 0) continue;
      std::deque<Cell> frontier{{x, y}};
      comp[at] = next;
      while (!frontier.empty()) {
        Cell c = frontier.front();
        frontier.pop_front();
        for (Cell d : kNeighborOrder) {
          Cell n{c.x + d.x, c.y + d.y};
          if (n.x < 0 || n.x >= width || n.y < 0 || n.y >= height) continue;
          std::size_t ni = static_cast<std::size_t>(n.y) * width + n.x;
          if (walkable[ni] && comp[ni] < 0) {
            comp[ni] = next;
            frontier.push_back(n);
          }
        }
      }
      ++next;
    }
  }
  *num_comps = next;
  return comp;
}

}  // namespace

GridEnvironment generate_environment(const EnvConfig& cfg) {
  if (cfg.vocab.empty()) throw ConfigError("vocab must be non-empty");
  if (cfg.wall_density < 0.0 || cfg.wall_density > 0.4) {
    throw ConfigError("wall_density must be in [0, 0.4]");
  }
  if (cfg.num_objects < 0 ||
      cfg.num_objects > static_cast<int>(cfg.vocab.size()) * kMaxLabelCopies) {
    throw ConfigError("num_objects exceeds vocab size times allowed duplicates");
  }

  const int min_region = std::max(4 * cfg.num_objects, 1);
  constexpr int kAttempts = 64;
  for (int attempt = 0; attempt < kAttempts; ++attempt) {
    std::mt19937_64 rng(mix_seed(cfg.seed, 0x6e76u, attempt));
    std::vector<std::uint8_t> walkable(static_cast<std::size_t>(cfg.width) * cfg.height, 1);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (auto& w : walkable) {
      if (unit(rng) < cfg.wall_density) w = 0;
    }

    int num_comps = 0;
    std::vector<int> comp = component_labels(cfg.width, cfg.height, walkable, &num_comps);
    if (num_comps == 0) continue;
    std::vector<int> sizes(num_comps, 0);
    for (int c : comp) {
      if (c >= 0) ++sizes[c];
    }
    int best = static_cast<int>(std::max_element(sizes.begin(), sizes.end()) - sizes.begin());
    if (sizes[best] < min_region) continue;

    // Keep only the largest component walkable.
    for (std::size_t i = 0; i < walkable.size(); ++i) {
      if (comp[i] != best) walkable[i] = 0;
    }

    std::vector<Cell> open;
    for (int y = 0; y < cfg.height; ++y) {
      for (int x = 0; x < cfg.width; ++x) {
        if (walkable[static_cast<std::size_t>(y) * cfg.width + x]) open.push_back({x, y});
      }
    }
    std::shuffle(open.begin(), open.end(), rng);

    std::vector<std::string> pool;
    for (int copy = 0; copy < kMaxLabelCopies; ++copy) {
      for (const auto& l : cfg.vocab) pool.push_back(l);
    }
    std::shuffle(pool.begin(), pool.end(), rng);

    std::vector<ObjectInstance> objects;
    objects.reserve(cfg.num_objects);
    for (int i = 0; i < cfg.num_objects; ++i) {
      objects.push_back({i, pool[i], open[i]});
    }
    return GridEnvironment(cfg.width, cfg.height, std::move(walkable), std::move(objects),
                           cfg.seed);
  }
  throw GenerationError("could not carve a connected walkable region of size >= " +
                        std::to_string(min_region));
}

GridEnvironment generate_environment(std::uint64_t seed, int width, int height, int num_objects,
                                     const std::vector<std::string>& vocab,
                                     double wall_density) {
  return generate_environment({seed, width, height, num_objects, vocab, wall_density});
}

namespace {

// True when a wall interrupts the segment between cell centers a and b.
// Supercover traversal with exact integer tie detection: when the segment
// passes through a grid corner, either flanking wall blocks it.
bool line_blocked(const GridEnvironment& env, Cell a, Cell b) {
  const int adx = std::abs(b.x - a.x);
  const int ady = std::abs(b.y - a.y);
  const int sx = b.x > a.x ? 1 : -1;
  const int sy = b.y > a.y ? 1 : -1;
  int x = a.x, y = a.y;
  int i = 0, j = 0;  // consumed x / y boundary crossings
  auto blocked = [&](int cx, int cy) {
    Cell c{cx, cy};
    return c != a && c != b && env.wall(c);
  };
  while (i < adx || j < ady) {
    bool step_x;
    bool corner = false;
    if (j >= ady) {
      step_x = true;
    } else if (i >= adx) {
      step_x = false;
    } else {
      // Next crossing times: (2i+1)/(2*adx) vs (2j+1)/(2*ady).
      const long long lhs = (2LL * i + 1) * ady;
      const long long rhs = (2LL * j + 1) * adx;
      if (lhs == rhs) {
        corner = true;
        step_x = true;
      } else {
        step_x = lhs < rhs;
      }
    }
    if (corner) {
      if (blocked(x + sx, y) || blocked(x, y + sy)) return true;
      x += sx;
      y += sy;
      ++i;
      ++j;
    } else if (step_x) {
      x += sx;
      ++i;
    } else {
      y += sy;
      ++j;
    }
    if (blocked(x, y)) return true;
  }
  return false;
}

}  // namespace

std::vector<int> visible_objects(const GridEnvironment& env, const Pose& pose,
                                 const ObservationSpec& spec) {
  if (!env.walkable(pose.cell)) throw ConfigError("pose cell is not walkable");
  if (spec.fov_degrees <= 0.0 || spec.fov_degrees > 360.0) {
    throw ConfigError("fov_degrees must be in (0, 360]");
  }
  if (spec.range < 1) throw ConfigError("range must be >= 1");

  std::vector<int> ids;
  constexpr double kRad2Deg = 180.0 / 3.14159265358979323846;
  for (const auto& obj : env.objects()) {
    if (obj.cell == pose.cell) {
      ids.push_back(obj.id);
      continue;
    }
    if (chebyshev(pose.cell, obj.cell) > spec.range) continue;
    const double angle =
        std::atan2(static_cast<double>(obj.cell.y - pose.cell.y),
                   static_cast<double>(obj.cell.x - pose.cell.x)) * kRad2Deg;
    double diff = std::fmod(angle - pose.heading_deg + 540.0, 360.0) - 180.0;
    if (std::abs(diff) > spec.fov_degrees / 2.0 + 1e-9) continue;
    if (line_blocked(env, pose.cell, obj.cell)) continue;
    ids.push_back(obj.id);
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

bool Observation::sees(int object_id) const {
  return std::binary_search(visible_ids.begin(), visible_ids.end(), object_id);
}

StepResult step(const GridEnvironment& env, const Pose& pose, Action action) {
  if (!env.walkable(pose.cell)) throw ConfigError("pose cell is not walkable");
  switch (action) {
    case Action::TurnLeft:
      return {{pose.cell, turn_left(pose.heading_deg)}, false};
    case Action::TurnRight:
      return {{pose.cell, turn_right(pose.heading_deg)}, false};
    case Action::MoveForward: {
      Cell d = heading_delta(pose.heading_deg);
      Cell next{pose.cell.x + d.x, pose.cell.y + d.y};
      if (env.walkable(next)) return {{next, pose.heading_deg}, false};
      return {pose, true};
    }
    case Action::Stop:
      return {pose, false};
  }
  return {pose, false};
}

std::vector<int> bfs_distances(const GridEnvironment& env, Cell from) {
  std::vector<int> dist(static_cast<std::size_t>(env.width()) * env.height(), -1);
  if (!env.walkable(from)) return dist;
  auto at = [&](Cell c) -> int& {
    return dist[static_cast<std::size_t>(c.y) * env.width() + c.x];
  };
  std::deque<Cell> frontier{from};
  at(from) = 0;
  while (!frontier.empty()) {
    Cell c = frontier.front();
    frontier.pop_front();
    for (Cell d : kNeighborOrder) {
      Cell n{c.x + d.x, c.y + d.y};
      if (env.walkable(n) && at(n) < 0) {
        at(n) = at(c) + 1;
        frontier.push_back(n);
      }
    }
  }
  return dist;
}

int bfs_distance(const GridEnvironment& env, Cell from, Cell to) {
  if (!env.in_bounds(to)) return -1;
  return bfs_distances(env, from)[static_cast<std::size_t>(to.y) * env.width() + to.x];
}

std::vector<Cell> shortest_path(const GridEnvironment& env, Cell from, Cell to) {
  if (!env.walkable(from) || !env.walkable(to)) {
    throw NoPathError("endpoints must be walkable cells");
  }
  if (from == to) return {from};

  const std::size_t n = static_cast<std::size_t>(env.width()) * env.height();
  std::vector<int> parent(n, -2);  // -2 unvisited, -1 root
  auto idx = [&](Cell c) { return static_cast<std::size_t>(c.y) * env.width() + c.x; };
  std::deque<Cell> frontier{from};
  parent[idx(from)] = -1;
  while (!frontier.empty()) {
    Cell c = frontier.front();
    frontier.pop_front();
    if (c == to) break;
    for (Cell d : kNeighborOrder) {
      Cell next{c.x + d.x, c.y + d.y};
      if (env.walkable(next) && parent[idx(next)] == -2) {
        parent[idx(next)] = static_cast<int>(idx(c));
        frontier.push_back(next);
      }
    }
  }
  if (parent[idx(to)] == -2) throw NoPathError("goal unreachable from start");

  std::vector<Cell> path;
  Cell c = to;
  while (true) {
    path.push_back(c);
    int p = parent[idx(c)];
    if (p < 0) break;
    c = {p % env.width(), p / env.width()};
  }
  std::reverse(path.begin(), path.end());
  return path;
}

std::vector<Observation> collect_history(const GridEnvironment& env,
                                         const std::vector<Pose>& poses,
                                         const ObservationSpec& spec) {
  std::vector<Observation> history;
  history.reserve(poses.size());
  for (int i = 0; i < static_cast<int>(poses.size()); ++i) {
    history.push_back({i, poses[i], visible_objects(env, poses[i], spec)});
  }
  return history;
}

std::vector<Action> actions_for_path(const std::vector<Cell>& cells, int start_heading_deg) {
  std::vector<Action> actions;
  int heading = start_heading_deg;
  for (std::size_t i = 0; i + 1 < cells.size(); ++i) {
    Cell d{cells[i + 1].x - cells[i].x, cells[i + 1].y - cells[i].y};
    int target = -1;
    for (int h : kHeadings) {
      if (heading_delta(h) == d) target = h;
    }
    if (target < 0) throw ConfigError("path cells are not 4-adjacent");
    int delta = (target - heading + 360) % 360;
    if (delta == 90) {
      actions.push_back(Action::TurnLeft);
    } else if (delta == 270) {
      actions.push_back(Action::TurnRight);
    } else if (delta == 180) {
      actions.push_back(Action::TurnLeft);
      actions.push_back(Action::TurnLeft);
    }
    heading = target;
    actions.push_back(Action::MoveForward);
  }
  actions.push_back(Action::Stop);
  return actions;
}

std::vector<Pose> expert_pose_sequence(const Episode& episode) {
  std::vector<Pose> poses;
  Pose p = episode.start;
  for (Action a : episode.expert_actions) {
    poses.push_back(p);
    p = step(*episode.env, p, a).pose;
  }
  return poses;
}

Episode make_episode(std::uint64_t seed, std::shared_ptr<const GridEnvironment> env,
                     const ObservationSpec& spec, const EpisodeConfig& cfg,
                     const Vocabulary& vocab) {
  if (env->objects().empty()) throw ConfigError("environment has no objects");
  if (cfg.min_path_len < 0 || cfg.max_path_len < cfg.min_path_len) {
    throw ConfigError("invalid episode path length band");
  }

  std::vector<Cell> open = env->walkable_cells();
  std::mt19937_64 rng(mix_seed(env->seed(), seed, 0x657070u));
  std::uniform_int_distribution<std::size_t> pick_cell(0, open.size() - 1);
  std::uniform_int_distribution<int> pick_heading(0, 3);

  for (int attempt = 0; attempt < cfg.max_retries; ++attempt) {
    Cell start_cell = open[pick_cell(rng)];
    Pose start{start_cell, kHeadings[pick_heading(rng)]};

    std::vector<int> dist = bfs_distances(*env, start_cell);
    std::vector<Cell> goals;
    for (Cell c : open) {
      int d = dist[static_cast<std::size_t>(c.y) * env->width() + c.x];
      if (d >= cfg.min_path_len && d <= cfg.max_path_len) goals.push_back(c);
    }
    if (goals.empty()) continue;
    Cell goal = goals[std::uniform_int_distribution<std::size_t>(0, goals.size() - 1)(rng)];

    std::vector<Cell> cells = shortest_path(*env, start_cell, goal);
    std::vector<Action> actions = actions_for_path(cells, start.heading_deg);

    // Final expert pose; the target must be visible from it.
    Pose final_pose = start;
    for (Action a : actions) final_pose = step(*env, final_pose, a).pose;
    std::vector<int> candidates = visible_objects(*env, final_pose, spec);
    if (candidates.empty()) continue;
    int target =
        candidates[std::uniform_int_distribution<std::size_t>(0, candidates.size() - 1)(rng)];

    Episode ep;
    ep.env = env;
    ep.seed = seed;
    ep.start = start;
    ep.goal_cell = goal;
    ep.target_object_id = target;
    ep.expert_actions = std::move(actions);
    ep.expert_cells = std::move(cells);
    ep.instruction = make_instruction(ep, cfg.instruction, vocab, spec, rng);
    return ep;
  }
  throw GenerationError("no (start, goal) pair satisfies the path length band after " +
                        std::to_string(cfg.max_retries) + " retries");
}

}  // namespace wpcl
