#ifndef WPCL_ENVSIM_HPP_
#define WPCL_ENVSIM_HPP_

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "wpcl/geometry.hpp"
#include "wpcl/vocab.hpp"

namespace wpcl {

struct ObjectInstance {
  int id = 0;
  std::string label;
  Cell cell;
};

// Static world: walkable cells plus labeled objects. Objects never move;
// actions only change the agent's pose.
class GridEnvironment {
 public:
  GridEnvironment(int width, int height, std::vector<std::uint8_t> walkable,
                  std::vector<ObjectInstance> objects, std::uint64_t seed);

  int width() const { return width_; }
  int height() const { return height_; }
  std::uint64_t seed() const { return seed_; }

  bool in_bounds(Cell c) const {
    return c.x >= 0 && c.x < width_ && c.y >= 0 && c.y < height_;
  }
  bool walkable(Cell c) const {
    return in_bounds(c) && walkable_[static_cast<std::size_t>(c.y) * width_ + c.x];
  }
  bool wall(Cell c) const { return in_bounds(c) && !walkable(c); }

  const std::vector<ObjectInstance>& objects() const { return objects_; }
  const ObjectInstance& object(int id) const;

  // Distinct labels in ascending order.
  std::vector<std::string> label_set() const;
  std::vector<Cell> walkable_cells() const;

 private:
  int width_;
  int height_;
  std::vector<std::uint8_t> walkable_;
  std::vector<ObjectInstance> objects_;
  std::uint64_t seed_;
};

// View cone: angular width around the heading plus a Chebyshev range cap.
struct ObservationSpec {
  double fov_degrees = 90.0;
  int range = 4;
};

struct Observation {
  int index = 0;
  Pose pose;
  std::vector<int> visible_ids;  // ascending

  bool sees(int object_id) const;
};

struct EnvConfig {
  std::uint64_t seed = 0;
  int width = 10;
  int height = 10;
  int num_objects = 6;
  std::vector<std::string> vocab;
  double wall_density = 0.1;
};

// Each label may be placed at most this many times per world.
inline constexpr int kMaxLabelCopies = 3;

// Deterministic world generation. Walls are carved at `wall_density`, then
// walkability is restricted to the largest connected component so every
// generated pose pair is connected. Throws GenerationError when no component
// of at least 4*num_objects cells exists after bounded retries.
GridEnvironment generate_environment(const EnvConfig& cfg);
GridEnvironment generate_environment(std::uint64_t seed, int width, int height,
                                     int num_objects, const std::vector<std::string>& vocab,
                                     double wall_density);

// Object ids visible from `pose`: within Chebyshev `range`, inside the
// +-fov/2 cone around the heading (own-cell objects always count), and not
// cut by a wall on the cell-to-cell line of sight. Lines through a grid
// corner are blocked if either flanking cell is a wall.
std::vector<int> visible_objects(const GridEnvironment& env, const Pose& pose,
                                 const ObservationSpec& spec);

struct StepResult {
  Pose pose;
  bool blocked = false;  // MoveForward into a wall; pose is unchanged
};

StepResult step(const GridEnvironment& env, const Pose& pose, Action action);

// BFS shortest path inclusive of both endpoints; neighbor expansion order is
// N, E, S, W, which fixes tie-breaking. Throws NoPathError when disconnected.
std::vector<Cell> shortest_path(const GridEnvironment& env, Cell from, Cell to);

// BFS distance field from `from`; -1 marks unreachable cells.
std::vector<int> bfs_distances(const GridEnvironment& env, Cell from);
int bfs_distance(const GridEnvironment& env, Cell from, Cell to);

std::vector<Observation> collect_history(const GridEnvironment& env,
                                         const std::vector<Pose>& poses,
                                         const ObservationSpec& spec);

struct Episode {
  std::shared_ptr<const GridEnvironment> env;
  std::uint64_t seed = 0;
  Pose start;
  Cell goal_cell;
  int target_object_id = -1;
  Instruction instruction;
  std::vector<Action> expert_actions;  // turns + forwards + final Stop
  std::vector<Cell> expert_cells;      // shortest walkable path, start..goal
};

struct EpisodeConfig {
  int min_path_len = 2;
  int max_path_len = 8;
  int max_retries = 200;
  InstructionConfig instruction;
};

// Sampled (start, goal) with BFS distance in [min,max]; target object chosen
// among objects visible from the expert's final pose so object grounding has
// a well-defined label. Throws GenerationError after max_retries.
Episode make_episode(std::uint64_t seed, std::shared_ptr<const GridEnvironment> env,
                     const ObservationSpec& spec, const EpisodeConfig& cfg,
                     const Vocabulary& vocab);

// Poses occupied while replaying `expert_actions` from `start`, one per
// action step (the state each action was taken from).
std::vector<Pose> expert_pose_sequence(const Episode& episode);

// Action sequence realizing `cells` as turns + forwards + final Stop.
// 180-degree turns resolve as two TurnLefts.
std::vector<Action> actions_for_path(const std::vector<Cell>& cells, int start_heading_deg);

}  // namespace wpcl

#endif  // WPCL_ENVSIM_HPP_
