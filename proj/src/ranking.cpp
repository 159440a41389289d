#include "triad/ranking.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numeric>
#include <unordered_map>

#include <Eigen/Eigenvalues>

#include "csv.hpp"
#include "triad/rng.hpp"

namespace triad {

namespace {

std::uint64_t edge_key(std::size_t i, std::size_t j) {
  return (static_cast<std::uint64_t>(i) << 32) | static_cast<std::uint64_t>(j);
}

}  // namespace

PairComparisonGraph::PairComparisonGraph(std::size_t n_items, std::vector<PairEdge> edges)
    : n_items_(n_items), edges_(std::move(edges)) {
  const std::size_t N = n_pairs();
  node_wins_.assign(N, 0);
  node_comparisons_.assign(N, 0);
  for (auto& e : edges_) {
    if (e.i > e.j) {
      std::swap(e.i, e.j);
      std::swap(e.wins_i, e.wins_j);
    }
    if (e.i == e.j || e.j >= N) throw Error(ErrorCode::input, "invalid pair comparison edge");
    node_wins_[e.i] += e.wins_i;
    node_wins_[e.j] += e.wins_j;
    node_comparisons_[e.i] += e.total();
    node_comparisons_[e.j] += e.total();
    total_ += e.total();
  }
  std::sort(edges_.begin(), edges_.end(),
            [](const PairEdge& a, const PairEdge& b) { return std::tie(a.i, a.j) < std::tie(b.i, b.j); });
  for (std::size_t k = 1; k < edges_.size(); ++k) {
    if (edges_[k].i == edges_[k - 1].i && edges_[k].j == edges_[k - 1].j) {
      throw Error(ErrorCode::input, "duplicate pair comparison edge");
    }
  }
}

std::uint32_t PairComparisonGraph::wins(std::size_t winner, std::size_t loser) const {
  const std::size_t i = std::min(winner, loser), j = std::max(winner, loser);
  const auto it = std::lower_bound(edges_.begin(), edges_.end(), std::pair{i, j},
                                   [](const PairEdge& e, const std::pair<std::size_t, std::size_t>& k) {
                                     return std::tie(e.i, e.j) < std::tie(k.first, k.second);
                                   });
  if (it == edges_.end() || it->i != i || it->j != j) return 0;
  return winner == i ? it->wins_i : it->wins_j;
}

PairComparisonGraph build_graph(const AnswerSet& records) {
  const std::size_t n = records.n_items();
  std::vector<PairEdge> edges;
  std::unordered_map<std::uint64_t, std::size_t> index;
  index.reserve(records.size());
  for (const auto& r : records.records()) {
    const std::size_t win = pair_flat_index(r.triplet.anchor, r.nearer(), n);
    const std::size_t lose = pair_flat_index(r.triplet.anchor, r.farther(), n);
    const std::size_t i = std::min(win, lose), j = std::max(win, lose);
    auto [it, inserted] = index.try_emplace(edge_key(i, j), edges.size());
    if (inserted) edges.push_back({i, j, 0, 0});
    auto& e = edges[it->second];
    if (win == i) {
      ++e.wins_i;
    } else {
      ++e.wins_j;
    }
  }
  return PairComparisonGraph(n, std::move(edges));
}

std::string to_string(RankMethod m) {
  switch (m) {
    case RankMethod::counting: return "counting";
    case RankMethod::rank_centrality: return "RC";
    case RankMethod::serial_rank: return "SR";
  }
  return "counting";
}

RankMethod rank_method_from_string(const std::string& s) {
  std::string k;
  for (char c : s) {
    if (c != '-' && c != '_' && c != ' ') k += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  if (k == "counting" || k == "count") return RankMethod::counting;
  if (k == "rc" || k == "rankcentrality") return RankMethod::rank_centrality;
  if (k == "sr" || k == "serialrank") return RankMethod::serial_rank;
  throw Error(ErrorCode::input, "unknown ranking method '" + s + "'");
}

PairScoreTable rank_counting(const PairComparisonGraph& g) {
  PairScoreTable t;
  t.n_items = g.n_items();
  t.method = to_string(RankMethod::counting);
  t.scores.resize(g.n_pairs());
  for (std::size_t p = 0; p < g.n_pairs(); ++p) {
    const auto c = g.comparisons_of(p);
    t.scores[p] = c == 0 ? 0.5 : static_cast<double>(g.wins_of(p)) / static_cast<double>(c);
  }
  return t;
}

namespace {

struct Transition {
  std::size_t from;
  std::size_t to;
  double p;
};

struct Chain {
  std::vector<Transition> moves;  // off-diagonal, both directions of each edge
  std::vector<double> stay;       // self-loop probability
};

Chain build_chain(const PairComparisonGraph& g, double epsilon) {
  const std::size_t N = g.n_pairs();
  std::vector<std::size_t> degree(N, 0);
  for (const auto& e : g.edges()) {
    ++degree[e.i];
    ++degree[e.j];
  }
  const double d_max = static_cast<double>(std::max<std::size_t>(1, *std::max_element(degree.begin(), degree.end())));
  Chain c;
  c.stay.assign(N, 1.0);
  c.moves.reserve(2 * g.edges().size());
  for (const auto& e : g.edges()) {
    const double denom = d_max * (static_cast<double>(e.total()) + 2.0 * epsilon);
    // Walk from the loser towards the winner.
    const double i_to_j = (static_cast<double>(e.wins_j) + epsilon) / denom;
    const double j_to_i = (static_cast<double>(e.wins_i) + epsilon) / denom;
    c.moves.push_back({e.i, e.j, i_to_j});
    c.moves.push_back({e.j, e.i, j_to_i});
    c.stay[e.i] -= i_to_j;
    c.stay[e.j] -= j_to_i;
  }
  return c;
}

std::size_t count_components(const PairComparisonGraph& g) {
  std::vector<std::size_t> parent(g.n_pairs());
  std::iota(parent.begin(), parent.end(), std::size_t{0});
  auto find = [&](std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  std::size_t comps = g.n_pairs();
  for (const auto& e : g.edges()) {
    const auto a = find(e.i), b = find(e.j);
    if (a != b) {
      parent[a] = b;
      --comps;
    }
  }
  return comps;
}

}  // namespace

std::vector<double> rank_centrality_transitions(const PairComparisonGraph& g, double epsilon) {
  const std::size_t N = g.n_pairs();
  if (N > 2000) throw Error(ErrorCode::size, "dense transition matrix refused for N > 2000");
  const auto chain = build_chain(g, epsilon);
  std::vector<double> P(N * N, 0.0);
  for (std::size_t i = 0; i < N; ++i) P[i * N + i] = chain.stay[i];
  for (const auto& m : chain.moves) P[m.from * N + m.to] += m.p;
  return P;
}

PairScoreTable rank_centrality(const PairComparisonGraph& g, const RankCentralityOptions& opt) {
  const std::size_t N = g.n_pairs();
  const auto chain = build_chain(g, opt.epsilon);
  // Starting uniform, mass never crosses components, so each component
  // converges to its own stationary law scaled by |component| / N.
  std::vector<double> pi(N, 1.0 / static_cast<double>(N)), next(N);
  std::size_t it = 0;
  for (;; ++it) {
    if (it >= opt.max_iters) {
      throw Error(ErrorCode::iteration_limit,
                  "rank centrality did not converge in " + std::to_string(opt.max_iters) + " iterations");
    }
    for (std::size_t i = 0; i < N; ++i) next[i] = pi[i] * chain.stay[i];
    for (const auto& m : chain.moves) next[m.to] += pi[m.from] * m.p;
    double change = 0.0;
    for (std::size_t i = 0; i < N; ++i) change += std::abs(next[i] - pi[i]);
    pi.swap(next);
    if (change < opt.tolerance) break;
  }
  PairScoreTable t;
  t.n_items = g.n_items();
  t.method = to_string(RankMethod::rank_centrality);
  t.scores = std::move(pi);
  t.components = count_components(g);
  return t;
}

MajorityMatrix::MajorityMatrix(const PairComparisonGraph& g) : n_(g.n_pairs()) {
  std::vector<std::size_t> count(n_, 0);
  for (const auto& e : g.edges()) {
    if (e.wins_i != e.wins_j) {
      ++count[e.i];
      ++count[e.j];
    }
  }
  row_start_.assign(n_ + 1, 0);
  for (std::size_t i = 0; i < n_; ++i) row_start_[i + 1] = row_start_[i] + count[i];
  col_.resize(row_start_[n_]);
  val_.resize(row_start_[n_]);
  std::vector<std::size_t> fill(row_start_.begin(), row_start_.end() - 1);
  for (const auto& e : g.edges()) {
    if (e.wins_i == e.wins_j) continue;
    const double s = e.wins_i > e.wins_j ? 1.0 : -1.0;
    col_[fill[e.i]] = e.j;
    val_[fill[e.i]++] = s;
    col_[fill[e.j]] = e.i;
    val_[fill[e.j]++] = -s;
  }
}

void MajorityMatrix::apply(std::span<const double> v, std::span<double> out) const {
  for (std::size_t i = 0; i < n_; ++i) {
    double s = 0.0;
    for (std::size_t k = row_start_[i]; k < row_start_[i + 1]; ++k) s += val_[k] * v[col_[k]];
    out[i] = s;
  }
}

void MajorityMatrix::apply_transposed(std::span<const double> v, std::span<double> out) const {
  apply(v, out);
  for (auto& x : out) x = -x;
}

double MajorityMatrix::at(std::size_t i, std::size_t j) const {
  for (std::size_t k = row_start_[i]; k < row_start_[i + 1]; ++k) {
    if (col_[k] == j) return val_[k];
  }
  return 0.0;
}

std::vector<double> serial_similarity_apply(const MajorityMatrix& c, std::span<const double> v) {
  const std::size_t N = c.size();
  std::vector<double> tmp(N), out(N);
  c.apply_transposed(v, tmp);
  c.apply(tmp, out);
  const double sum = std::accumulate(v.begin(), v.end(), 0.0);
  const double base = static_cast<double>(N) * sum;
  for (auto& x : out) x = 0.5 * (base + x);
  return out;
}

std::vector<double> serial_similarity_dense(const MajorityMatrix& c) {
  const std::size_t N = c.size();
  if (N > 2000) throw Error(ErrorCode::size, "dense similarity refused for N > 2000");
  std::vector<double> C(N * N, 0.0);
  for (std::size_t i = 0; i < N; ++i) {
    for (std::size_t j = 0; j < N; ++j) C[i * N + j] = c.at(i, j);
  }
  std::vector<double> S(N * N, 0.0);
  for (std::size_t i = 0; i < N; ++i) {
    for (std::size_t j = 0; j < N; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < N; ++k) s += C[i * N + k] * C[j * N + k];
      S[i * N + j] = 0.5 * (static_cast<double>(N) + s);
    }
  }
  return S;
}

namespace {

// On the complement of the constant vector the Laplacian of S equals
// (N^2/2) I + B with B v = (r o v - C C^T v) / 2 and r = C C^T 1, so the
// Fiedler vector is the lowest eigenvector of B there. Working with B drops
// the N^2/2 shift that would otherwise swamp the spectral gap.
class ShiftedLaplacian {
 public:
  explicit ShiftedLaplacian(const MajorityMatrix& c) : c_(c), tmp_(c.size()) {
    const std::vector<double> ones(c.size(), 1.0);
    r_.resize(c.size());
    gram(ones, r_);
  }

  void apply(std::span<const double> v, std::span<double> out) {
    gram(v, out);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = 0.5 * (r_[i] * v[i] - out[i]);
  }

 private:
  void gram(std::span<const double> v, std::span<double> out) {
    c_.apply_transposed(v, tmp_);
    c_.apply(tmp_, out);
  }

  const MajorityMatrix& c_;
  std::vector<double> r_;
  std::vector<double> tmp_;
};

void project_out_mean(std::vector<double>& v) {
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  for (auto& x : v) x -= mean;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm(const std::vector<double>& a) { return std::sqrt(dot(a, a)); }

// Restarted Lanczos with full reorthogonalization for the lowest eigenpair
// of `op` restricted to the complement of the constant vector.
std::vector<double> lowest_eigenvector(ShiftedLaplacian& op, std::vector<double> start,
                                       const SerialRankOptions& opt) {
  const std::size_t N = start.size();
  const std::size_t max_dim = std::max<std::size_t>(2, std::min(opt.krylov_dim, N - 1));
  std::vector<double> w(N), u(N), residual(N);
  double scale = 0.0;
  for (std::size_t restart = 0; restart < opt.max_restarts; ++restart) {
    project_out_mean(start);
    double nrm = norm(start);
    if (nrm == 0.0) throw Error(ErrorCode::iteration_limit, "Lanczos start vector vanished");
    for (auto& x : start) x /= nrm;

    std::vector<std::vector<double>> Q{start};
    std::vector<double> alpha, beta;
    for (std::size_t k = 0; k < max_dim; ++k) {
      op.apply(Q[k], w);
      const double a = dot(Q[k], w);
      alpha.push_back(a);
      for (int pass = 0; pass < 2; ++pass) {
        for (const auto& q : Q) {
          const double h = dot(q, w);
          for (std::size_t i = 0; i < N; ++i) w[i] -= h * q[i];
        }
        project_out_mean(w);
      }
      const double b = norm(w);
      if (k + 1 == max_dim || b <= 1e-14 * std::max(1.0, std::abs(a))) break;
      beta.push_back(b);
      std::vector<double> next(N);
      for (std::size_t i = 0; i < N; ++i) next[i] = w[i] / b;
      Q.push_back(std::move(next));
    }

    const auto K = alpha.size();
    Eigen::VectorXd diag = Eigen::Map<Eigen::VectorXd>(alpha.data(), static_cast<Eigen::Index>(K));
    Eigen::VectorXd sub(K > 1 ? K - 1 : 0);
    for (std::size_t k = 0; k + 1 < K; ++k) sub[static_cast<Eigen::Index>(k)] = beta[k];
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> tri;
    tri.computeFromTridiagonal(diag, sub, Eigen::ComputeEigenvectors);
    const double theta = tri.eigenvalues()[0];
    scale = std::max({scale, std::abs(tri.eigenvalues()[0]),
                      std::abs(tri.eigenvalues()[static_cast<Eigen::Index>(K - 1)])});

    std::fill(u.begin(), u.end(), 0.0);
    for (std::size_t k = 0; k < K; ++k) {
      const double y = tri.eigenvectors()(static_cast<Eigen::Index>(k), 0);
      for (std::size_t i = 0; i < N; ++i) u[i] += y * Q[k][i];
    }
    project_out_mean(u);
    nrm = norm(u);
    for (auto& x : u) x /= nrm;
    op.apply(u, residual);
    for (std::size_t i = 0; i < N; ++i) residual[i] -= theta * u[i];
    if (norm(residual) <= opt.tolerance * std::max(1.0, scale)) return u;
    start = u;
  }
  throw Error(ErrorCode::iteration_limit, "SerialRank eigen-solver did not converge after " +
                                              std::to_string(opt.max_restarts) + " restarts");
}

}  // namespace

PairScoreTable rank_serial(const PairComparisonGraph& g, const SerialRankOptions& opt) {
  const std::size_t N = g.n_pairs();
  if (N < 2) throw Error(ErrorCode::input, "SerialRank needs at least 2 pairs");
  if (N > opt.max_pairs) {
    throw Error(ErrorCode::size, "SerialRank refuses " + std::to_string(N) + " pairs (ceiling " +
                                     std::to_string(opt.max_pairs) + ")");
  }
  PairScoreTable t;
  t.n_items = g.n_items();
  t.method = to_string(RankMethod::serial_rank);
  const MajorityMatrix C(g);
  if (C.empty()) {
    t.no_signal = true;
    t.scores.assign(N, 0.0);
    return t;
  }
  ShiftedLaplacian op(C);

  // Start from centred win fractions plus a small fixed perturbation.
  std::vector<double> start = rank_counting(g).scores;
  Rng rng(0x5e81a1ULL, Stream::init);
  for (auto& x : start) x += 1e-3 * (rng.uniform() - 0.5);
  auto v = lowest_eigenvector(op, std::move(start), opt);

  // Orient so that observed majority winners score higher.
  long agree = 0;
  for (const auto& e : g.edges()) {
    if (e.wins_i == e.wins_j) continue;
    const double diff = v[e.i] - v[e.j];
    const bool i_won = e.wins_i > e.wins_j;
    if (diff != 0.0) agree += ((diff > 0.0) == i_won) ? 1 : -1;
  }
  if (agree < 0) {
    for (auto& x : v) x = -x;
  }
  t.scores = std::move(v);
  return t;
}

PairScoreTable rank(const PairComparisonGraph& g, RankMethod method) {
  switch (method) {
    case RankMethod::counting: return rank_counting(g);
    case RankMethod::rank_centrality: return rank_centrality(g);
    case RankMethod::serial_rank: return rank_serial(g);
  }
  return rank_counting(g);
}

std::uint8_t predict_from_scores(const PairScoreTable& s, const Triplet& t) {
  if (t.anchor >= s.n_items || t.left >= s.n_items || t.right >= s.n_items) {
    throw Error(ErrorCode::coverage, "triplet references an item outside the score table");
  }
  const double l = s.score(t.anchor, t.left);
  const double r = s.score(t.anchor, t.right);
  if (l > r) return 1;
  if (r > l) return 0;
  return tie_answer(t, s.n_items);
}

void export_scores(const std::string& path, const PairScoreTable& s) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::io, "cannot write " + path);
  out << "item_a,item_b,score,method\n";
  for (std::size_t p = 0; p < s.scores.size(); ++p) {
    const auto [a, b] = pair_from_flat(p, s.n_items);
    out << a << ',' << b << ',' << csv::format_double(s.scores[p]) << ',' << csv::quote(s.method) << '\n';
  }
  if (!out) throw Error(ErrorCode::io, "write failed: " + path);
}

PairScoreTable import_scores(const std::string& path, std::size_t n_items) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io, "cannot open " + path);
  PairScoreTable t;
  t.n_items = n_items;
  t.scores.assign(pair_count(n_items), 0.5);
  std::string line;
  std::getline(in, line);
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (csv::trim(line).empty()) continue;
    const auto f = csv::split(line);
    const auto where = path + ":" + std::to_string(lineno) + ": ";
    if (f.size() != 4) throw Error(ErrorCode::parse, where + "expected 4 fields");
    const auto a = csv::parse_int(f[0]), b = csv::parse_int(f[1]);
    const auto v = csv::parse_double(f[2]);
    if (!a || !b || !v || *a < 0 || *b < 0) throw Error(ErrorCode::parse, where + "bad row");
    t.scores[pair_flat_index(static_cast<ItemId>(*a), static_cast<ItemId>(*b), n_items)] = *v;
    t.method = f[3];
  }
  return t;
}

}  // namespace triad
