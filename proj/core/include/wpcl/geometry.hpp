#ifndef WPCL_GEOMETRY_HPP_
#define WPCL_GEOMETRY_HPP_

#include <array>
#include <compare>
#include <cstdint>
#include <cstdlib>
#include <string>

#include "wpcl/error.hpp"

namespace wpcl {

struct Cell {
  int x = 0;
  int y = 0;

  friend auto operator<=>(const Cell&, const Cell&) = default;
};

inline int chebyshev(Cell a, Cell b) {
  return std::max(std::abs(a.x - b.x), std::abs(a.y - b.y));
}

// Headings are degrees counterclockwise from +x: 0=E, 90=N, 180=W, 270=S.
inline constexpr std::array<int, 4> kHeadings = {0, 90, 180, 270};

inline int heading_index(int heading_deg) { return (heading_deg % 360) / 90; }

inline int turn_left(int heading_deg) { return (heading_deg + 90) % 360; }
inline int turn_right(int heading_deg) { return (heading_deg + 270) % 360; }

// Unit step for a heading.
inline Cell heading_delta(int heading_deg) {
  switch (heading_index(heading_deg)) {
    case 0: return {1, 0};
    case 1: return {0, 1};
    case 2: return {-1, 0};
    default: return {0, -1};
  }
}

struct Pose {
  Cell cell;
  int heading_deg = 0;

  friend auto operator<=>(const Pose&, const Pose&) = default;
};

enum class Action : int { MoveForward = 0, TurnLeft = 1, TurnRight = 2, Stop = 3 };

inline constexpr int kNumActions = 4;

inline const char* action_name(Action a) {
  switch (a) {
    case Action::MoveForward: return "MoveForward";
    case Action::TurnLeft: return "TurnLeft";
    case Action::TurnRight: return "TurnRight";
    case Action::Stop: return "Stop";
  }
  return "?";
}

inline Action action_from_name(const std::string& s) {
  for (int i = 0; i < kNumActions; ++i) {
    if (s == action_name(static_cast<Action>(i))) return static_cast<Action>(i);
  }
  throw ConfigError("unknown action name: " + s);
}

}  // namespace wpcl

#endif  // WPCL_GEOMETRY_HPP_
