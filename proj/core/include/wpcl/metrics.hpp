#ifndef WPCL_METRICS_HPP_
#define WPCL_METRICS_HPP_

#include <memory>
#include <vector>

#include "wpcl/envsim.hpp"

namespace wpcl {

// Outcome of one evaluation rollout. visited_cells records the cell at every
// step in order (turns repeat the cell); the last entry is the stop cell.
struct EpisodeResult {
  std::shared_ptr<const GridEnvironment> env;
  std::vector<Cell> visited_cells;
  Cell stop_cell{0, 0};
  Cell goal_cell{0, 0};
  int shortest_len = 0;       // BFS distance start -> goal
  int success_threshold = 1;  // cells
};

struct MetricsSummary {
  double tl = 0.0;   // mean trajectory length (cells moved)
  double ne = 0.0;   // mean geodesic stop -> goal distance
  double sr = 0.0;   // success rate
  double spl = 0.0;  // success weighted by path length
  double osr = 0.0;  // oracle success rate
  int num_episodes = 0;
};

// Number of cell-to-cell moves (consecutive distinct cells); turns add 0.
int trajectory_length(const EpisodeResult& r);

// Geodesic stop -> goal distance. Throws NoPathError when disconnected.
int nav_error(const EpisodeResult& r);

bool success(const EpisodeResult& r);

// Any visited cell within the success threshold of the goal.
bool oracle_success(const EpisodeResult& r);

// Per-episode SPL term: S * l / max(p, l); l == 0 contributes S.
double spl_term(const EpisodeResult& r);

double spl(const std::vector<EpisodeResult>& results);
double osr(const std::vector<EpisodeResult>& results);

MetricsSummary summarize(const std::vector<EpisodeResult>& results);

}  // namespace wpcl

#endif  // WPCL_METRICS_HPP_
