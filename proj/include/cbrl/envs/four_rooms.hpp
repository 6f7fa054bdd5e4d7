#pragma once

#include <string>
#include <vector>

#include "cbrl/problem.hpp"

namespace cbrl {

// 11x11 gridworld with four rooms. The follower navigates from S to a
// context-dependent goal under slippy dynamics; the leader spends a penalty
// budget B across cells (softmax allocation over the 104 real cells plus one
// sink coordinate) to shape the follower's route through s^{+1}.
struct FourRoomsSpec {
    double gamma = 0.99;
    double lambda = 0.001;
    double beta = 1.0;   // leader's weight on deployed budget cost
    double budget = 0.2; // B, total penalty mass
    double slip = 1.0 / 3.0;
    std::string map;  // ASCII layout; empty = built-in default
};

// Legend: '#' wall, '.' free, 'S' start, '1'/'2' context goals, '+' the
// leader's preferred cell s^{+1}. Grid is 11x11; 104 free cells.
const std::string& four_rooms_default_map();

struct FourRoomsLayout {
    int rows = 0, cols = 0;
    std::vector<int> cell_of_rc;  // rows*cols -> state index or -1 for walls
    std::vector<int> rc_of_cell;  // state -> r*cols + c
    int n_cells = 0;
    int start = 0;
    std::vector<int> goals;  // one per context
    int plus_cell = 0;
};

FourRoomsLayout parse_four_rooms_map(const std::string& map);

// Shortest-path distances from `from` over free cells (4-neighbor moves).
std::vector<int> four_rooms_bfs(const FourRoomsLayout& lay, int from);

TabularCmdp make_four_rooms_cmdp(const FourRoomsSpec& spec, const Vec& x, int ctx);

// d = n_cells + 1 (softmax budget allocation incl. sink); x0 = 0.
BilevelProblem make_four_rooms_problem(const FourRoomsSpec& spec);

// Fraction of the budget deployed on real cells, 1 - softmax(x)_sink.
double four_rooms_deployed_fraction(const Vec& x);

}  // namespace cbrl
