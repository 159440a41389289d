#include "triad/embedding.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "csv.hpp"
#include "triad/rng.hpp"

namespace triad {

std::string to_string(EmbedMethod m) {
  switch (m) {
    case EmbedMethod::gnmds: return "GNMDS";
    case EmbedMethod::ste: return "STE";
    case EmbedMethod::tste: return "tSTE";
    case EmbedMethod::soe: return "SOE";
  }
  return "SOE";
}

EmbedMethod embed_method_from_string(const std::string& s) {
  std::string k;
  for (char c : s) {
    if (c != '-' && c != '_') k += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  if (k == "gnmds") return EmbedMethod::gnmds;
  if (k == "ste") return EmbedMethod::ste;
  if (k == "tste") return EmbedMethod::tste;
  if (k == "soe") return EmbedMethod::soe;
  throw Error(ErrorCode::input, "unknown embedding method '" + s + "'");
}

double EmbedConfig::dof() const {
  if (alpha) return *alpha;
  return d > 1 ? static_cast<double>(d - 1) : 1.0;
}

void EmbedConfig::validate() const {
  if (d < 1) throw Error(ErrorCode::input, "embedding dimension must be >= 1");
  if (!(margin > 0.0)) throw Error(ErrorCode::input, "margin must be > 0");
  if (!(dof() > 0.0)) throw Error(ErrorCode::input, "t-STE alpha must be > 0");
  if (restarts < 1) throw Error(ErrorCode::input, "restarts must be >= 1");
  if (!(learning_rate > 0.0)) throw Error(ErrorCode::input, "learning rate must be > 0");
  if (!(tolerance >= 0.0)) throw Error(ErrorCode::input, "tolerance must be >= 0");
  if (!(init_scale > 0.0)) throw Error(ErrorCode::input, "init scale must be > 0");
}

std::size_t default_restarts(std::size_t n) { return n <= 20 ? 10 : 3; }

namespace {

struct Constraint {
  ItemId a, near, far;
};

std::vector<Constraint> constraints_of(const AnswerSet& records) {
  std::vector<Constraint> out;
  out.reserve(records.size());
  for (const auto& r : records.records()) {
    out.push_back({r.triplet.anchor, r.nearer(), r.farther()});
  }
  return out;
}

double softplus(double u) { return u > 0.0 ? u + std::log1p(std::exp(-u)) : std::log1p(std::exp(u)); }
double sigmoid(double u) {
  if (u >= 0.0) return 1.0 / (1.0 + std::exp(-u));
  const double e = std::exp(u);
  return e / (1.0 + e);
}

class Objective {
 public:
  Objective(EmbedMethod method, const EmbedConfig& cfg, std::size_t d,
            std::vector<Constraint> constraints)
      : method_(method),
        d_(d),
        margin_(cfg.margin),
        alpha_(cfg.dof()),
        constraints_(std::move(constraints)),
        dn_(d),
        df_(d) {}

  /// Loss, plus gradient into `grad` (already sized n*d) when non-null.
  double operator()(const double* x, double* grad) {
    if (grad) std::fill(grad, grad + n_cached_, 0.0);
    double loss = 0.0;
    for (const auto& c : constraints_) {
      const double* xa = x + std::size_t{c.a} * d_;
      const double* xn = x + std::size_t{c.near} * d_;
      const double* xf = x + std::size_t{c.far} * d_;
      double Dn = 0.0, Df = 0.0;
      for (std::size_t k = 0; k < d_; ++k) {
        dn_[k] = xa[k] - xn[k];
        df_[k] = xa[k] - xf[k];
        Dn += dn_[k] * dn_[k];
        Df += df_[k] * df_[k];
      }
      // cn = dL/dD_n, cf = dL/dD_f
      double cn = 0.0, cf = 0.0;
      switch (method_) {
        case EmbedMethod::gnmds: {
          const double u = Dn - Df + margin_;
          if (u > 0.0) {
            loss += u;
            cn = 1.0;
            cf = -1.0;
          }
          break;
        }
        case EmbedMethod::ste: {
          const double u = Dn - Df;
          loss += softplus(u);
          const double s = sigmoid(u);
          cn = s;
          cf = -s;
          break;
        }
        case EmbedMethod::tste: {
          const double c = 0.5 * (alpha_ + 1.0);
          const double v = -c * std::log1p(Df / alpha_) + c * std::log1p(Dn / alpha_);
          loss += softplus(v);
          const double s = sigmoid(v);
          cn = s * c / (alpha_ + Dn);
          cf = -s * c / (alpha_ + Df);
          break;
        }
        case EmbedMethod::soe: {
          const double rn = std::sqrt(Dn), rf = std::sqrt(Df);
          const double h = margin_ + rn - rf;
          if (h > 0.0) {
            loss += h * h;
            // d(h^2)/dD = 2h * dr/dD = h / r; zero subgradient at r = 0.
            cn = rn > 0.0 ? h / rn : 0.0;
            cf = rf > 0.0 ? -h / rf : 0.0;
          }
          break;
        }
      }
      if (grad && (cn != 0.0 || cf != 0.0)) {
        double* ga = grad + std::size_t{c.a} * d_;
        double* gn = grad + std::size_t{c.near} * d_;
        double* gf = grad + std::size_t{c.far} * d_;
        for (std::size_t k = 0; k < d_; ++k) {
          const double tn = 2.0 * cn * dn_[k];
          const double tf = 2.0 * cf * df_[k];
          ga[k] += tn + tf;
          gn[k] -= tn;
          gf[k] -= tf;
        }
      }
    }
    return loss;
  }

  void set_size(std::size_t n) { n_cached_ = n * d_; }

 private:
  EmbedMethod method_;
  std::size_t d_;
  double margin_;
  double alpha_;
  std::vector<Constraint> constraints_;
  std::vector<double> dn_, df_;
  std::size_t n_cached_ = 0;
};

bool all_finite(const std::vector<double>& v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

struct RunResult {
  std::vector<double> coords;
  double loss;
  std::size_t iterations;
  std::vector<double> trace;
};

RunResult descend(Objective& f, std::vector<double> x, const EmbedConfig& cfg) {
  std::vector<double> grad(x.size()), trial(x.size());
  double loss = f(x.data(), grad.data());
  if (!std::isfinite(loss) || !all_finite(grad)) {
    throw Error(ErrorCode::divergence, "non-finite loss at iteration 0");
  }
  RunResult out{{}, loss, 0, {loss}};
  for (std::size_t it = 1; it <= cfg.max_iters && loss > 0.0; ++it) {
    double step = cfg.learning_rate;
    double trial_loss = loss;
    bool accepted = false;
    for (std::size_t h = 0; h <= cfg.max_halvings; ++h, step *= 0.5) {
      for (std::size_t i = 0; i < x.size(); ++i) trial[i] = x[i] - step * grad[i];
      trial_loss = f(trial.data(), nullptr);
      if (std::isfinite(trial_loss) && trial_loss < loss) {
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
    const double rel = (loss - trial_loss) / std::max(std::abs(loss), std::numeric_limits<double>::min());
    x.swap(trial);
    loss = f(x.data(), grad.data());
    if (!std::isfinite(loss) || !all_finite(grad)) {
      throw Error(ErrorCode::divergence, "non-finite loss at iteration " + std::to_string(it));
    }
    out.trace.push_back(loss);
    out.iterations = it;
    if (rel < cfg.tolerance) break;
  }
  out.coords = std::move(x);
  out.loss = loss;
  return out;
}

}  // namespace

double loss_and_gradient(EmbedMethod method, std::span<const double> coords, std::size_t d,
                         const AnswerSet& records, const EmbedConfig& cfg,
                         std::vector<double>* gradient) {
  const std::size_t n = records.n_items();
  if (coords.size() != n * d) throw Error(ErrorCode::input, "coordinate count does not match n * d");
  Objective f(method, cfg, d, constraints_of(records));
  f.set_size(n);
  if (gradient) {
    gradient->assign(n * d, 0.0);
    return f(coords.data(), gradient->data());
  }
  return f(coords.data(), nullptr);
}

Embedding embed(const AnswerSet& records, EmbedMethod method, const EmbedConfig& cfg,
                std::uint64_t seed) {
  cfg.validate();
  if (records.empty()) throw Error(ErrorCode::input, "cannot embed an empty answer set");
  const std::size_t n = records.n_items();
  const std::size_t d = cfg.d;

  Objective f(method, cfg, d, constraints_of(records));
  f.set_size(n);

  std::optional<RunResult> best;
  for (std::size_t r = 0; r < cfg.restarts; ++r) {
    Rng rng(seed, Stream::init, r);
    std::vector<double> x(n * d);
    for (auto& v : x) v = cfg.init_scale * rng.normal();
    auto run = descend(f, std::move(x), cfg);
    if (!best || run.loss < best->loss) best = std::move(run);
  }

  Embedding e;
  e.n = n;
  e.d = d;
  e.coords = std::move(best->coords);
  e.method = method;
  e.final_loss = best->loss;
  e.seed = seed;
  e.iterations_used = best->iterations;
  e.loss_trace = std::move(best->trace);
  e.provenance = records.provenance();
  std::vector<bool> used(n, false);
  for (const auto& r : records.records()) {
    used[r.triplet.anchor] = used[r.triplet.left] = used[r.triplet.right] = true;
  }
  for (ItemId i = 0; i < n; ++i) {
    if (!used[i]) e.unconstrained.push_back(i);
  }
  return e;
}

std::uint8_t predict(const Embedding& e, const Triplet& t) {
  if (t.anchor >= e.n || t.left >= e.n || t.right >= e.n) {
    throw Error(ErrorCode::coverage, "triplet references an item outside the embedding");
  }
  const auto a = e.point(t.anchor), y = e.point(t.left), z = e.point(t.right);
  double Dl = 0.0, Dr = 0.0;
  for (std::size_t k = 0; k < e.d; ++k) {
    Dl += (a[k] - y[k]) * (a[k] - y[k]);
    Dr += (a[k] - z[k]) * (a[k] - z[k]);
  }
  if (Dl < Dr) return 1;
  if (Dr < Dl) return 0;
  return tie_answer(t, e.n);
}

double satisfied_fraction(const Embedding& e, const AnswerSet& records) {
  if (records.empty()) return 1.0;
  std::size_t ok = 0;
  for (const auto& r : records.records()) ok += predict(e, r.triplet) == r.answer.value;
  return static_cast<double>(ok) / static_cast<double>(records.size());
}

void export_embedding(const std::string& path, const Embedding& e) {
  {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::io, "cannot write " + path);
    out << "item_id";
    for (std::size_t k = 0; k < e.d; ++k) out << ",c" << k;
    out << '\n';
    for (ItemId i = 0; i < e.n; ++i) {
      out << i;
      for (double v : e.point(i)) out << ',' << csv::format_double(v);
      out << '\n';
    }
    if (!out) throw Error(ErrorCode::io, "write failed: " + path);
  }
  nlohmann::json meta = {
      {"method", to_string(e.method)},
      {"n", e.n},
      {"d", e.d},
      {"seed", e.seed},
      {"final_loss", e.final_loss},
      {"iterations", e.iterations_used},
      {"unconstrained_items", e.unconstrained},
      {"provenance", e.provenance},
  };
  std::ofstream out(path + ".json", std::ios::binary);
  if (!out) throw Error(ErrorCode::io, "cannot write " + path + ".json");
  out << meta.dump(2) << '\n';
}

Embedding import_embedding(const std::string& path) {
  std::ifstream meta_in(path + ".json", std::ios::binary);
  if (!meta_in) throw Error(ErrorCode::io, "cannot open " + path + ".json");
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(meta_in);
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorCode::parse, path + ".json: " + ex.what());
  }
  Embedding e;
  try {
    e.method = embed_method_from_string(meta.at("method").get<std::string>());
    e.n = meta.at("n").get<std::size_t>();
    e.d = meta.at("d").get<std::size_t>();
    e.seed = meta.at("seed").get<std::uint64_t>();
    e.final_loss = meta.at("final_loss").get<double>();
    e.iterations_used = meta.at("iterations").get<std::size_t>();
    e.unconstrained = meta.value("unconstrained_items", std::vector<ItemId>{});
    e.provenance = meta.value("provenance", std::string{});
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorCode::parse, path + ".json: " + ex.what());
  }

  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io, "cannot open " + path);
  std::string line;
  std::getline(in, line);
  e.coords.assign(e.n * e.d, 0.0);
  std::vector<bool> seen(e.n, false);
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (csv::trim(line).empty()) continue;
    const auto f = csv::split(line);
    const auto where = path + ":" + std::to_string(lineno) + ": ";
    if (f.size() != e.d + 1) throw Error(ErrorCode::parse, where + "expected " + std::to_string(e.d + 1) + " fields");
    const auto id = csv::parse_int(f[0]);
    if (!id || *id < 0 || static_cast<std::size_t>(*id) >= e.n) throw Error(ErrorCode::parse, where + "bad item id");
    for (std::size_t k = 0; k < e.d; ++k) {
      const auto v = csv::parse_double(f[k + 1]);
      if (!v || !std::isfinite(*v)) throw Error(ErrorCode::parse, where + "bad coordinate");
      e.coords[static_cast<std::size_t>(*id) * e.d + k] = *v;
    }
    seen[static_cast<std::size_t>(*id)] = true;
  }
  if (std::find(seen.begin(), seen.end(), false) != seen.end()) {
    throw Error(ErrorCode::parse, path + ": missing rows for some items");
  }
  return e;
}

}  // namespace triad
