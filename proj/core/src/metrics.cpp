#include "wpcl/metrics.hpp"

#include "wpcl/error.hpp"

namespace wpcl {

namespace {

void validate(const EpisodeResult& r) {
  if (!r.env) throw ConfigError("episode result has no environment");
  if (r.visited_cells.empty()) throw ConfigError("episode result has no visited cells");
  if (r.visited_cells.back() != r.stop_cell) {
    throw ConfigError("stop cell must be the last visited cell");
  }
}

}  // namespace

int trajectory_length(const EpisodeResult& r) {
  validate(r);
  int moves = 0;
  for (std::size_t t = 0; t + 1 < r.visited_cells.size(); ++t) {
    if (r.visited_cells[t] != r.visited_cells[t + 1]) ++moves;
  }
  return moves;
}

int nav_error(const EpisodeResult& r) {
  validate(r);
  int d = bfs_distance(*r.env, r.stop_cell, r.goal_cell);
  if (d < 0) throw NoPathError("stop cell disconnected from goal");
  return d;
}

bool success(const EpisodeResult& r) { return nav_error(r) <= r.success_threshold; }

bool oracle_success(const EpisodeResult& r) {
  validate(r);
  std::vector<int> dist = bfs_distances(*r.env, r.goal_cell);
  for (Cell c : r.visited_cells) {
    int d = dist[static_cast<std::size_t>(c.y) * r.env->width() + c.x];
    if (d >= 0 && d <= r.success_threshold) return true;
  }
  return false;
}

double spl_term(const EpisodeResult& r) {
  const double s = success(r) ? 1.0 : 0.0;
  if (r.shortest_len == 0) return s;
  const double p = static_cast<double>(trajectory_length(r));
  const double l = static_cast<double>(r.shortest_len);
  return s * l / std::max(p, l);
}

double spl(const std::vector<EpisodeResult>& results) {
  if (results.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& r : results) sum += spl_term(r);
  return sum / static_cast<double>(results.size());
}

double osr(const std::vector<EpisodeResult>& results) {
  if (results.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& r : results) sum += oracle_success(r) ? 1.0 : 0.0;
  return sum / static_cast<double>(results.size());
}

MetricsSummary summarize(const std::vector<EpisodeResult>& results) {
  MetricsSummary m;
  m.num_episodes = static_cast<int>(results.size());
  if (results.empty()) return m;
  for (const auto& r : results) {
    m.tl += trajectory_length(r);
    m.ne += nav_error(r);
    m.sr += success(r) ? 1.0 : 0.0;
    m.spl += spl_term(r);
    m.osr += oracle_success(r) ? 1.0 : 0.0;
  }
  const double n = static_cast<double>(results.size());
  m.tl /= n;
  m.ne /= n;
  m.sr /= n;
  m.spl /= n;
  m.osr /= n;
  return m;
}

}  // namespace wpcl
