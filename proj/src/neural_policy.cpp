#include "p3o/neural_policy.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "p3o/errors.hpp"
#include "p3o/numeric.hpp"

namespace p3o {

using Eigen::Map;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using CMat = Map<const MatrixXd>;
using CVec = Map<const VectorXd>;
using MMat = Map<MatrixXd>;
using MVec = Map<VectorXd>;

namespace {

constexpr double kLayerNormEps = 1e-5;

std::string join(const std::vector<std::size_t>& v) {
  if (v.empty()) return "-";
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

std::vector<std::size_t> split_sizes(const std::string& s) {
  std::vector<std::size_t> out;
  if (s == "-" || s.empty()) return out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) {
    try {
      const long v = std::stol(item);
      if (v <= 0) throw std::invalid_argument(item);
      out.push_back(static_cast<std::size_t>(v));
    } catch (const std::exception&) {
      throw ConfigError("bad layer size '" + item + "' in policy descriptor");
    }
  }
  return out;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

NeuralArchitecture NeuralArchitecture::defaults(InputMode mode, std::size_t input_dim,
                                                std::size_t action_dim, Vector action_bound) {
  NeuralArchitecture a;
  a.mode = mode;
  a.input_dim = input_dim;
  a.action_dim = action_dim;
  if (mode == InputMode::kBelief) {
    a.encoder.clear();
    a.recurrent.clear();
    a.post = 0;
  }
  a.action_bound = std::move(action_bound);
  a.action_bound.resize(action_dim, 0.0);
  // Initial spread is half the action range, i.e. the bound itself.
  a.init_log_std = a.action_bound[0] > 0.0 ? std::log(a.action_bound[0]) : 0.0;
  return a;
}

std::string NeuralArchitecture::to_string() const {
  std::ostringstream os;
  os.precision(17);
  os << "neural mode=" << p3o::to_string(mode) << " in=" << input_dim << " act=" << action_dim
     << " enc=" << join(encoder) << " gru=" << join(recurrent) << " post=" << post
     << " dec=" << join(decoder) << " bound=";
  for (std::size_t i = 0; i < action_bound.size(); ++i) os << (i ? "," : "") << action_bound[i];
  if (action_bound.empty()) os << "-";
  os << " logstd=" << init_log_std;
  return os.str();
}

NeuralArchitecture NeuralArchitecture::parse(const std::string& text) {
  NeuralArchitecture a;
  std::istringstream is(text);
  bool seen_in = false, seen_act = false;
  for (std::string tok; is >> tok;) {
    if (tok == "neural") continue;
    const auto eq = tok.find('=');
    if (eq == std::string::npos) throw ConfigError("bad policy descriptor token '" + tok + "'");
    const std::string key = tok.substr(0, eq), val = tok.substr(eq + 1);
    try {
      if (key == "mode") a.mode = parse_input_mode(val);
      else if (key == "in") a.input_dim = std::stoul(val), seen_in = true;
      else if (key == "act") a.action_dim = std::stoul(val), seen_act = true;
      else if (key == "enc") a.encoder = split_sizes(val);
      else if (key == "gru") a.recurrent = split_sizes(val);
      else if (key == "post") a.post = std::stoul(val);
      else if (key == "dec") a.decoder = split_sizes(val);
      else if (key == "logstd") a.init_log_std = std::stod(val);
      else if (key == "bound") {
        a.action_bound.clear();
        if (val != "-") {
          std::stringstream ss(val);
          for (std::string item; std::getline(ss, item, ',');) a.action_bound.push_back(std::stod(item));
        }
      } else throw ConfigError("unknown policy descriptor key '" + key + "'");
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception&) {
      throw ConfigError("bad value for policy descriptor key '" + key + "'");
    }
  }
  if (!seen_in || !seen_act || a.input_dim == 0 || a.action_dim == 0)
    throw ConfigError("policy descriptor needs positive in= and act=");
  a.action_bound.resize(a.action_dim, 0.0);
  return a;
}

// ---------------------------------------------------------------- layout

struct NeuralPolicy::StepCache {
  std::vector<VectorXd> enc_in, enc_pre, enc_xhat;
  std::vector<double> enc_rstd;
  VectorXd feat;
  std::vector<VectorXd> gx, hp, r, z, n, hn, h;
  VectorXd top;
  VectorXd post_out;
  std::vector<VectorXd> dec_in, dec_pre;
  VectorXd mean;
};

NeuralPolicy::NeuralPolicy(NeuralArchitecture arch) : arch_(std::move(arch)) {
  if (arch_.input_dim == 0 || arch_.action_dim == 0)
    throw ConfigError("neural policy needs positive input and action dimensions");
  if (arch_.mode == InputMode::kBelief && !arch_.recurrent.empty())
    throw ConfigError("belief-mode policies are Markov in their input; use gru=-");
  arch_.action_bound.resize(arch_.action_dim, 0.0);
  std::size_t off = 0;
  auto dense = [&](std::size_t in, std::size_t out) {
    Dense d{off, off + in * out, in, out};
    off += in * out + out;
    return d;
  };
  std::size_t width = arch_.input_dim;
  for (std::size_t w : arch_.encoder) {
    enc_.push_back(dense(width, w));
    norm_.push_back({off, off + w});
    off += 2 * w;
    width = w;
  }
  for (std::size_t H : arch_.recurrent) {
    Gru g{off, 0, 0, 0, width, H};
    off += 3 * H * width;
    g.w_hh = off;
    off += 3 * H * H;
    g.b_ih = off;
    off += 3 * H;
    g.b_hh = off;
    off += 3 * H;
    gru_.push_back(g);
    memory_size_ += H;
    width = H;
  }
  if (arch_.post > 0) {
    post_.push_back(dense(width, arch_.post));
    width = arch_.post;
  }
  for (std::size_t w : arch_.decoder) {
    dec_.push_back(dense(width, w));
    width = w;
  }
  dec_.push_back(dense(width, arch_.action_dim));
  log_std_ = off;
  off += arch_.action_dim;
  num_params_ = off;
}

Vector NeuralPolicy::initial_params(std::uint64_t seed) const {
  Vector p(num_params_, 0.0);
  auto rng = derive_stream(seed, StreamTag::kParams);
  auto uniform_fill = [&](std::size_t at, std::size_t count, double scale) {
    for (std::size_t i = 0; i < count; ++i) p[at + i] = rng.uniform(-scale, scale);
  };
  auto init_dense = [&](const Dense& d, double gain) {
    const double s = gain / std::sqrt(static_cast<double>(d.in));
    uniform_fill(d.w, d.in * d.out, s);
    uniform_fill(d.b, d.out, s);
  };
  for (std::size_t l = 0; l < enc_.size(); ++l) {
    init_dense(enc_[l], 1.0);
    std::fill(p.begin() + static_cast<long>(norm_[l].gamma),
              p.begin() + static_cast<long>(norm_[l].gamma + enc_[l].out), 1.0);
  }
  for (const auto& g : gru_) {
    const auto H = static_cast<Eigen::Index>(g.hidden);
    uniform_fill(g.w_ih, 3 * g.hidden * g.in, 1.0 / std::sqrt(static_cast<double>(g.hidden)));
    // Orthogonal recurrent blocks, one per gate.
    MMat whh(p.data() + g.w_hh, 3 * H, H);
    for (int gate = 0; gate < 3; ++gate) {
      MatrixXd gauss(H, H);
      for (Eigen::Index j = 0; j < H; ++j)
        for (Eigen::Index i = 0; i < H; ++i) gauss(i, j) = rng.normal();
      Eigen::HouseholderQR<MatrixXd> qr(gauss);
      MatrixXd q = qr.householderQ() * MatrixXd::Identity(H, H);
      const VectorXd sign = qr.matrixQR().diagonal().array().sign();
      for (Eigen::Index j = 0; j < H; ++j) q.col(j) *= sign[j] == 0 ? 1.0 : sign[j];
      whh.block(gate * H, 0, H, H) = q;
    }
  }
  for (const auto& d : post_) init_dense(d, 1.0);
  for (std::size_t l = 0; l < dec_.size(); ++l) init_dense(dec_[l], l + 1 == dec_.size() ? 0.01 : 1.0);
  for (std::size_t i = 0; i < arch_.action_dim; ++i) p[log_std_ + i] = arch_.init_log_std;
  return p;
}

PolicyState NeuralPolicy::initial_state() const {
  PolicyState s;
  s.memory.assign(memory_size_, 0.0);
  return s;
}

// ---------------------------------------------------------------- forward

void NeuralPolicy::forward(const double* p, ConstSpan input, const double* h_prev,
                           StepCache& c) const {
  if (input.size() != arch_.input_dim)
    throw ConfigError("policy input has " + std::to_string(input.size()) + " entries, expected " +
                      std::to_string(arch_.input_dim));
  VectorXd x = CVec(input.data(), static_cast<Eigen::Index>(input.size()));
  const std::size_t L = enc_.size();
  c.enc_in.resize(L);
  c.enc_pre.resize(L);
  c.enc_xhat.resize(L);
  c.enc_rstd.resize(L);
  for (std::size_t l = 0; l < L; ++l) {
    const auto& d = enc_[l];
    const auto in = static_cast<Eigen::Index>(d.in), out = static_cast<Eigen::Index>(d.out);
    c.enc_in[l] = x;
    c.enc_pre[l] = CMat(p + d.w, out, in) * x + CVec(p + d.b, out);
    VectorXd act = l + 1 < L ? VectorXd(c.enc_pre[l].cwiseMax(0.0)) : c.enc_pre[l];
    const double mu = act.mean();
    const double var = (act.array() - mu).square().mean();
    c.enc_rstd[l] = 1.0 / std::sqrt(var + kLayerNormEps);
    c.enc_xhat[l] = (act.array() - mu) * c.enc_rstd[l];
    x = c.enc_xhat[l].cwiseProduct(CVec(p + norm_[l].gamma, out)) + CVec(p + norm_[l].beta, out);
  }
  c.feat = x;

  const std::size_t G = gru_.size();
  c.gx.resize(G);
  c.hp.resize(G);
  c.r.resize(G);
  c.z.resize(G);
  c.n.resize(G);
  c.hn.resize(G);
  c.h.resize(G);
  std::size_t mem = 0;
  for (std::size_t l = 0; l < G; ++l) {
    const auto& g = gru_[l];
    const auto H = static_cast<Eigen::Index>(g.hidden), in = static_cast<Eigen::Index>(g.in);
    c.gx[l] = x;
    c.hp[l] = CVec(h_prev + mem, H);
    const VectorXd gi = CMat(p + g.w_ih, 3 * H, in) * x + CVec(p + g.b_ih, 3 * H);
    const VectorXd gh = CMat(p + g.w_hh, 3 * H, H) * c.hp[l] + CVec(p + g.b_hh, 3 * H);
    c.r[l] = (gi.segment(0, H) + gh.segment(0, H)).unaryExpr(&sigmoid);
    c.z[l] = (gi.segment(H, H) + gh.segment(H, H)).unaryExpr(&sigmoid);
    c.hn[l] = gh.segment(2 * H, H);
    c.n[l] = (gi.segment(2 * H, H) + c.r[l].cwiseProduct(c.hn[l])).array().tanh();
    c.h[l] = (1.0 - c.z[l].array()) * c.n[l].array() + c.z[l].array() * c.hp[l].array();
    x = c.h[l];
    mem += g.hidden;
  }
  c.top = x;

  if (!post_.empty()) {
    const auto& d = post_[0];
    x = CMat(p + d.w, static_cast<Eigen::Index>(d.out), static_cast<Eigen::Index>(d.in)) * x +
        CVec(p + d.b, static_cast<Eigen::Index>(d.out));
  }
  c.post_out = x;

  const std::size_t D = dec_.size();
  c.dec_in.resize(D);
  c.dec_pre.resize(D);
  for (std::size_t l = 0; l < D; ++l) {
    const auto& d = dec_[l];
    const auto in = static_cast<Eigen::Index>(d.in), out = static_cast<Eigen::Index>(d.out);
    c.dec_in[l] = x;
    c.dec_pre[l] = CMat(p + d.w, out, in) * x + CVec(p + d.b, out);
    x = l + 1 < D ? VectorXd(c.dec_pre[l].cwiseMax(0.0)) : c.dec_pre[l];
  }
  c.mean = x;
}

// ---------------------------------------------------------------- backward

void NeuralPolicy::backward(const double* p, const StepCache& c, const double* dmean,
                            double* dh_carry, double* g) const {
  VectorXd d = CVec(dmean, static_cast<Eigen::Index>(arch_.action_dim));
  for (std::size_t l = dec_.size(); l-- > 0;) {
    const auto& L = dec_[l];
    const auto in = static_cast<Eigen::Index>(L.in), out = static_cast<Eigen::Index>(L.out);
    if (l + 1 < dec_.size()) d = d.cwiseProduct((c.dec_pre[l].array() > 0.0).cast<double>().matrix());
    MMat(g + L.w, out, in).noalias() += d * c.dec_in[l].transpose();
    MVec(g + L.b, out) += d;
    d = CMat(p + L.w, out, in).transpose() * d;
  }
  if (!post_.empty()) {
    const auto& L = post_[0];
    const auto in = static_cast<Eigen::Index>(L.in), out = static_cast<Eigen::Index>(L.out);
    MMat(g + L.w, out, in).noalias() += d * c.top.transpose();
    MVec(g + L.b, out) += d;
    d = CMat(p + L.w, out, in).transpose() * d;
  }

  std::size_t mem = memory_size_;
  for (std::size_t l = gru_.size(); l-- > 0;) {
    const auto& G = gru_[l];
    const auto H = static_cast<Eigen::Index>(G.hidden), in = static_cast<Eigen::Index>(G.in);
    mem -= G.hidden;
    MVec carry(dh_carry + mem, H);
    const VectorXd dh = d + carry;
    const auto& z = c.z[l];
    const auto& r = c.r[l];
    const auto& n = c.n[l];
    const VectorXd dn = dh.cwiseProduct((1.0 - z.array()).matrix());
    const VectorXd dz = dh.cwiseProduct(c.hp[l] - n);
    VectorXd dhp = dh.cwiseProduct(z);
    const VectorXd dan = dn.array() * (1.0 - n.array().square());
    const VectorXd dr = dan.cwiseProduct(c.hn[l]);
    const VectorXd dhn = dan.cwiseProduct(r);
    const VectorXd dar = dr.array() * r.array() * (1.0 - r.array());
    const VectorXd daz = dz.array() * z.array() * (1.0 - z.array());
    VectorXd dgi(3 * H), dgh(3 * H);
    dgi << dar, daz, dan;
    dgh << dar, daz, dhn;
    MMat(g + G.w_ih, 3 * H, in).noalias() += dgi * c.gx[l].transpose();
    MVec(g + G.b_ih, 3 * H) += dgi;
    MMat(g + G.w_hh, 3 * H, H).noalias() += dgh * c.hp[l].transpose();
    MVec(g + G.b_hh, 3 * H) += dgh;
    dhp.noalias() += CMat(p + G.w_hh, 3 * H, H).transpose() * dgh;
    carry = dhp;
    d = CMat(p + G.w_ih, 3 * H, in).transpose() * dgi;
  }

  for (std::size_t l = enc_.size(); l-- > 0;) {
    const auto& L = enc_[l];
    const auto in = static_cast<Eigen::Index>(L.in), out = static_cast<Eigen::Index>(L.out);
    const auto& xhat = c.enc_xhat[l];
    MVec(g + norm_[l].gamma, out) += d.cwiseProduct(xhat);
    MVec(g + norm_[l].beta, out) += d;
    const VectorXd dxhat = d.cwiseProduct(CVec(p + norm_[l].gamma, out));
    const double m1 = dxhat.mean();
    const double m2 = dxhat.cwiseProduct(xhat).mean();
    d = c.enc_rstd[l] * (dxhat.array() - m1 - xhat.array() * m2).matrix();
    if (l + 1 < enc_.size()) d = d.cwiseProduct((c.enc_pre[l].array() > 0.0).cast<double>().matrix());
    MMat(g + L.w, out, in).noalias() += d * c.enc_in[l].transpose();
    MVec(g + L.b, out) += d;
    if (l > 0) d = CMat(p + L.w, out, in).transpose() * d;
  }
}

// ---------------------------------------------------------------- policy API

void NeuralPolicy::observe(ConstSpan params, PolicyState& state, ConstSpan input) const {
  StepCache c;
  forward(params.data(), input, state.memory.data(), c);
  std::size_t mem = 0;
  for (const auto& h : c.h) {
    std::copy(h.data(), h.data() + h.size(), state.memory.begin() + static_cast<long>(mem));
    mem += static_cast<std::size_t>(h.size());
  }
  state.output.assign(c.mean.data(), c.mean.data() + c.mean.size());
  ++state.step;
  for (double m : state.output)
    if (!std::isfinite(m))
      throw NumericError(NumericError::Kind::kOverflow,
                         "non-finite policy output at step " + std::to_string(state.step), state.step);
}

double NeuralPolicy::sample(ConstSpan params, const PolicyState& state, RngStream& rng,
                            MutSpan action) const {
  return squashed_gaussian::sample(state.output, params.subspan(log_std_, arch_.action_dim),
                                   arch_.action_bound, rng, action);
}

double NeuralPolicy::log_prob(ConstSpan params, const PolicyState& state, ConstSpan action) const {
  return squashed_gaussian::log_prob(state.output, params.subspan(log_std_, arch_.action_dim),
                                     arch_.action_bound, action);
}

void NeuralPolicy::mode_action(ConstSpan, const PolicyState& state, MutSpan action) const {
  squashed_gaussian::mode(state.output, arch_.action_bound, action);
}

double NeuralPolicy::score(ConstSpan params, std::span<const Vector> inputs,
                           std::span<const Vector> actions, std::span<const double> step_weights,
                           MutSpan grad) const {
  const std::size_t T = actions.size();
  if (T == 0) return 0.0;
  const std::size_t A = arch_.action_dim;
  const ConstSpan log_std = params.subspan(log_std_, A);
  std::vector<StepCache> caches(T);
  Vector h(memory_size_, 0.0), dmeans(T * A, 0.0);
  double total = 0.0;
  for (std::size_t t = 0; t < T; ++t) {
    forward(params.data(), inputs[t], h.data(), caches[t]);
    const auto& c = caches[t];
    if (!c.mean.allFinite())
      throw NumericError(NumericError::Kind::kOverflow,
                         "non-finite policy activation at step " + std::to_string(t),
                         static_cast<long>(t));
    std::size_t mem = 0;
    for (const auto& hl : c.h) {
      std::copy(hl.data(), hl.data() + hl.size(), h.begin() + static_cast<long>(mem));
      mem += static_cast<std::size_t>(hl.size());
    }
    const double w = step_weights.empty() ? 1.0 : step_weights[t];
    total += squashed_gaussian::log_prob(ConstSpan(c.mean.data(), A), log_std, arch_.action_bound,
                                         actions[t], MutSpan(dmeans).subspan(t * A, A),
                                         grad.subspan(log_std_, A), w);
  }
  Vector carry(memory_size_, 0.0);
  for (std::size_t t = T; t-- > 0;)
    backward(params.data(), caches[t], dmeans.data() + t * A, carry.data(), grad.data());
  return total;
}

// ---------------------------------------------------------------- belief features

std::size_t belief_feature_dim(std::size_t d) { return d + d * (d + 1) / 2 + 1; }

Vector belief_features(const BeliefParticles& belief) {
  const std::size_t d = belief.dim, M = belief.size();
  std::vector<std::size_t> order(M);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto sa = belief.state(a), sb = belief.state(b);
    for (std::size_t i = 0; i < d; ++i)
      if (sa[i] != sb[i]) return sa[i] < sb[i];
    return belief.log_weights[a] < belief.log_weights[b];
  });
  Vector w(M);
  double wsum = 0.0;
  for (std::size_t k = 0; k < M; ++k) wsum += (w[k] = std::exp(belief.log_weights[order[k]]));
  Vector f(belief_feature_dim(d), 0.0);
  for (std::size_t k = 0; k < M; ++k) {
    const auto s = belief.state(order[k]);
    for (std::size_t i = 0; i < d; ++i) f[i] += w[k] / wsum * s[i];
  }
  std::size_t at = d;
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = i; j < d; ++j, ++at)
      for (std::size_t k = 0; k < M; ++k) {
        const auto s = belief.state(order[k]);
        f[at] += w[k] / wsum * (s[i] - f[i]) * (s[j] - f[j]);
      }
  double sq = 0.0;
  for (std::size_t k = 0; k < M; ++k) sq += (w[k] / wsum) * (w[k] / wsum);
  f[at] = -std::log(sq);
  return f;
}

}  // namespace p3o
