#include "cbrl/envs/four_rooms.hpp"

#include <cmath>
#include <deque>
#include <stdexcept>

#include "cbrl/cmdp_core.hpp"
#include "cbrl/hypergrad.hpp"

namespace cbrl {

const std::string& four_rooms_default_map() {
    // 11x11, 104 free cells; interior walls on column 5 and row 5 with
    // doorways at (3,5), (5,1), (7,5), (5,9). The direct S->G1 route (length
    // 10, through the top doorway) is four steps shorter than the detour
    // through the bottom rooms (length 14), so only a leader spending nearly
    // the whole penalty budget on the top doorway diverts the task-1 follower
    // past the marked cell; partial penalties leave the route unchanged. The
    // marked cell sits on the sole approach to the lower doorway, so all
    // bottom-route traffic for either goal passes through it.
    static const std::string kMap =
        ".....#.....\n"
        ".....#.....\n"
        ".....#.....\n"
        "...........\n"
        ".S...#...1.\n"
        "#.#######.#\n"
        ".....#.....\n"
        "....+......\n"
        ".....#.....\n"
        ".....#.....\n"
        ".....#...2.\n";
    return kMap;
}

FourRoomsLayout parse_four_rooms_map(const std::string& map) {
    std::vector<std::string> lines;
    std::string cur;
    for (char ch : map) {
        if (ch == '\n') {
            if (!cur.empty()) lines.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(ch);
        }
    }
    if (!cur.empty()) lines.push_back(cur);
    if (lines.empty()) throw std::invalid_argument("four rooms map: empty");
    FourRoomsLayout lay;
    lay.rows = int(lines.size());
    lay.cols = int(lines[0].size());
    for (const auto& l : lines)
        if (int(l.size()) != lay.cols)
            throw std::invalid_argument("four rooms map: ragged rows");
    lay.cell_of_rc.assign(std::size_t(lay.rows) * lay.cols, -1);
    int start = -1, plus = -1;
    std::vector<std::pair<int, int>> goal_digits;  // (digit, cell)
    for (int r = 0; r < lay.rows; ++r)
        for (int c = 0; c < lay.cols; ++c) {
            char ch = lines[r][c];
            if (ch == '#') continue;
            int cell = lay.n_cells++;
            lay.cell_of_rc[std::size_t(r) * lay.cols + c] = cell;
            lay.rc_of_cell.push_back(r * lay.cols + c);
            if (ch == 'S') {
                if (start >= 0) throw std::invalid_argument("four rooms map: multiple starts");
                start = cell;
            } else if (ch == '+') {
                if (plus >= 0) throw std::invalid_argument("four rooms map: multiple '+' cells");
                plus = cell;
            } else if (ch >= '1' && ch <= '9') {
                goal_digits.emplace_back(ch - '0', cell);
            } else if (ch != '.') {
                throw std::invalid_argument("four rooms map: bad character");
            }
        }
    if (start < 0) throw std::invalid_argument("four rooms map: no start");
    if (plus < 0) throw std::invalid_argument("four rooms map: no '+' cell");
    if (goal_digits.empty()) throw std::invalid_argument("four rooms map: no goals");
    lay.start = start;
    lay.plus_cell = plus;
    int max_digit = 0;
    for (auto& g : goal_digits) max_digit = std::max(max_digit, g.first);
    lay.goals.assign(max_digit, -1);
    for (auto& g : goal_digits) {
        if (lay.goals[g.first - 1] >= 0)
            throw std::invalid_argument("four rooms map: duplicate goal digit");
        lay.goals[g.first - 1] = g.second;
    }
    for (int g : lay.goals)
        if (g < 0) throw std::invalid_argument("four rooms map: missing goal digit");
    return lay;
}

std::vector<int> four_rooms_bfs(const FourRoomsLayout& lay, int from) {
    std::vector<int> dist(lay.n_cells, -1);
    std::deque<int> q;
    dist[from] = 0;
    q.push_back(from);
    const int dr[4] = {-1, 0, 1, 0};
    const int dc[4] = {0, 1, 0, -1};
    while (!q.empty()) {
        int s = q.front();
        q.pop_front();
        int r = lay.rc_of_cell[s] / lay.cols, c = lay.rc_of_cell[s] % lay.cols;
        for (int k = 0; k < 4; ++k) {
            int r2 = r + dr[k], c2 = c + dc[k];
            if (r2 < 0 || r2 >= lay.rows || c2 < 0 || c2 >= lay.cols) continue;
            int t = lay.cell_of_rc[std::size_t(r2) * lay.cols + c2];
            if (t < 0 || dist[t] >= 0) continue;
            dist[t] = dist[s] + 1;
            q.push_back(t);
        }
    }
    return dist;
}

namespace {

// softmax over the n_cells + 1 budget coordinates
Vec budget_softmax(const Vec& x) {
    int n = int(x.size());
    Vec p(n);
    double lse = logsumexp(x.data(), n);
    for (int i = 0; i < n; ++i) p[i] = std::exp(x[i] - lse);
    return p;
}

}  // namespace

double four_rooms_deployed_fraction(const Vec& x) {
    Vec p = budget_softmax(x);
    return 1.0 - p.back();
}

TabularCmdp make_four_rooms_cmdp(const FourRoomsSpec& spec, const Vec& x, int ctx) {
    FourRoomsLayout lay =
        parse_four_rooms_map(spec.map.empty() ? four_rooms_default_map() : spec.map);
    if (ctx < 0 || ctx >= int(lay.goals.size()))
        throw std::invalid_argument("four rooms: context out of range");
    const int S = lay.n_cells, A = 4, d = S + 1;
    if (int(x.size()) != d) throw std::invalid_argument("four rooms: x has wrong dimension");
    const int goal = lay.goals[ctx];

    TabularCmdp m;
    m.S = S;
    m.A = A;
    m.d = d;
    m.gamma = spec.gamma;
    m.lambda = spec.lambda;
    m.transition.assign(std::size_t(S) * A * S, 0.0);
    const int dr4[4] = {-1, 0, 1, 0};
    const int dc4[4] = {0, 1, 0, -1};
    for (int s = 0; s < S; ++s) {
        int r = lay.rc_of_cell[s] / lay.cols, c = lay.rc_of_cell[s] % lay.cols;
        if (s == goal) {
            // reaching the goal resets the follower to the start
            for (int a = 0; a < A; ++a)
                m.transition[(std::size_t(m.sa(s, a))) * S + lay.start] = 1.0;
            continue;
        }
        int target[4];
        for (int k = 0; k < 4; ++k) {
            int r2 = r + dr4[k], c2 = c + dc4[k];
            int t = -1;
            if (r2 >= 0 && r2 < lay.rows && c2 >= 0 && c2 < lay.cols)
                t = lay.cell_of_rc[std::size_t(r2) * lay.cols + c2];
            target[k] = t < 0 ? s : t;  // bump: stay in place
        }
        for (int a = 0; a < A; ++a) {
            double* row = &m.transition[std::size_t(m.sa(s, a)) * S];
            for (int k = 0; k < 4; ++k) row[target[k]] += spec.slip / 4.0;
            row[target[a]] += 1.0 - spec.slip;
        }
    }
    m.init.assign(S, 0.0);
    m.init[lay.start] = 1.0;

    Vec p = budget_softmax(x);
    m.reward.resize(std::size_t(S) * A);
    m.d_reward.assign(std::size_t(S) * A * d, 0.0);
    for (int s = 0; s < S; ++s) {
        double rwd = (s == goal ? 1.0 : 0.0) - spec.budget * p[s];
        for (int a = 0; a < A; ++a) {
            m.reward[m.sa(s, a)] = rwd;
            double* dr = &m.d_reward[std::size_t(m.sa(s, a)) * d];
            // d/dx_j of -B softmax(x)_s = -B p_s (1{j=s} - p_j)
            for (int j = 0; j < d; ++j) dr[j] = spec.budget * p[s] * p[j];
            dr[s] -= spec.budget * p[s];
        }
    }
    return m;
}

BilevelProblem make_four_rooms_problem(const FourRoomsSpec& spec) {
    FourRoomsLayout lay =
        parse_four_rooms_map(spec.map.empty() ? four_rooms_default_map() : spec.map);
    const int S = lay.n_cells, A = 4, d = S + 1;
    BilevelProblem p;
    p.d = d;
    p.context_weights.assign(lay.goals.size(), 1.0 / double(lay.goals.size()));
    FourRoomsSpec sp = spec;
    p.make_cmdp = [sp](const Vec& x, int ctx) { return make_four_rooms_cmdp(sp, x, ctx); };
    int plus = lay.plus_cell;
    std::vector<int> goals = lay.goals;
    double beta = spec.beta, budget = spec.budget;
    p.leader_reward = [S, A, plus, goals, beta, budget](const Vec& x, int ctx) {
        Vec rbar(std::size_t(S) * A, 0.0);
        double deployed_cost = -beta * budget * four_rooms_deployed_fraction(x);
        int goal = goals[ctx];
        for (int a = 0; a < A; ++a) {
            rbar[std::size_t(plus) * A + a] += 1.0;
            rbar[std::size_t(goal) * A + a] += deployed_cost;
        }
        return rbar;
    };
    p.d_leader_reward = [S, A, goals, beta, budget, d](const Vec& x, int ctx) {
        Vec out(std::size_t(S) * A * d, 0.0);
        Vec prob = budget_softmax(x);
        double psink = prob[d - 1];
        // d/dx_j of -beta B (1 - p_sink) = -beta B p_sink (p_j - 1{j=sink})
        Vec grad(d);
        for (int j = 0; j < d; ++j) grad[j] = -beta * budget * psink * prob[j];
        grad[d - 1] += beta * budget * psink;
        int goal = goals[ctx];
        for (int a = 0; a < A; ++a) {
            double* dst = &out[(std::size_t(goal) * A + a) * d];
            for (int j = 0; j < d; ++j) dst[j] = grad[j];
        }
        return out;
    };
    p.x0.assign(d, 0.0);
    p.upper = induced_upper_loss(p, 1e-9);
    return p;
}

}  // namespace cbrl
