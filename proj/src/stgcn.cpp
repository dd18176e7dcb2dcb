#include "gplight/stgcn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "gplight/io.hpp"

namespace gplight {

namespace {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// y = lhat * x for [n][c] blocks
void lhat_mul(const double* lhat, int n, const double* x, int c, double* y) {
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < c; ++k) y[i * c + k] = 0;
    for (int j = 0; j < n; ++j) {
      double w = lhat[i * n + j];
      if (w == 0) continue;
      const double* xj = x + j * c;
      double* yi = y + i * c;
      for (int k = 0; k < c; ++k) yi[k] += w * xj[k];
    }
  }
}

}  // namespace

void temporal_glu_forward(const double* x, int t_in, int n, int c_in, int c_out,
                          int kt, const double* w, const double* b, double* pre,
                          double* y) {
  int t_out = t_in - kt + 1;
  int co2 = 2 * c_out;
  for (int t = 0; t < t_out; ++t) {
    for (int node = 0; node < n; ++node) {
      double* p = pre + (t * n + node) * co2;
      for (int o = 0; o < co2; ++o) p[o] = b[o];
      for (int k = 0; k < kt; ++k) {
        const double* xs = x + ((t + k) * n + node) * c_in;
        const double* wk = w + k * c_in * co2;
        for (int ci = 0; ci < c_in; ++ci) {
          double xv = xs[ci];
          if (xv == 0) continue;
          const double* wr = wk + ci * co2;
          for (int o = 0; o < co2; ++o) p[o] += xv * wr[o];
        }
      }
      double* ys = y + (t * n + node) * c_out;
      for (int o = 0; o < c_out; ++o) ys[o] = p[o] * sigmoid(p[c_out + o]);
    }
  }
}

void temporal_glu_backward(const double* x, const double* pre, int t_in, int n,
                           int c_in, int c_out, int kt, const double* w,
                           const double* dy, double* dw, double* db, double* dx) {
  int t_out = t_in - kt + 1;
  int co2 = 2 * c_out;
  std::vector<double> dpre(static_cast<std::size_t>(t_out) * n * co2);
  for (int t = 0; t < t_out; ++t)
    for (int node = 0; node < n; ++node) {
      const double* p = pre + (t * n + node) * co2;
      const double* d = dy + (t * n + node) * c_out;
      double* dp = dpre.data() + (t * n + node) * co2;
      for (int o = 0; o < c_out; ++o) {
        double s = sigmoid(p[c_out + o]);
        dp[o] = d[o] * s;
        dp[c_out + o] = d[o] * p[o] * s * (1.0 - s);
        db[o] += dp[o];
        db[c_out + o] += dp[c_out + o];
      }
    }
  std::fill(dx, dx + static_cast<std::size_t>(t_in) * n * c_in, 0.0);
  for (int t = 0; t < t_out; ++t)
    for (int node = 0; node < n; ++node) {
      const double* dp = dpre.data() + (t * n + node) * co2;
      for (int k = 0; k < kt; ++k) {
        const double* xs = x + ((t + k) * n + node) * c_in;
        double* dxs = dx + ((t + k) * n + node) * c_in;
        for (int ci = 0; ci < c_in; ++ci) {
          const double* wr = w + (k * c_in + ci) * co2;
          double* dwr = dw + (k * c_in + ci) * co2;
          double xv = xs[ci];
          double acc = 0;
          for (int o = 0; o < co2; ++o) {
            dwr[o] += xv * dp[o];
            acc += wr[o] * dp[o];
          }
          dxs[ci] += acc;
        }
      }
    }
}

void cheb_conv_forward(const double* lhat, int n, const double* x, int t,
                       int c_in, int c_out, int K, const double* theta,
                       const double* b, double* z, double* pre) {
  std::size_t slab = static_cast<std::size_t>(t) * n * c_in;
  for (int ts = 0; ts < t; ++ts) {
    const double* xt = x + static_cast<std::size_t>(ts) * n * c_in;
    double* z0 = z + static_cast<std::size_t>(ts) * n * c_in;
    std::copy(xt, xt + static_cast<std::size_t>(n) * c_in, z0);
    if (K > 1) lhat_mul(lhat, n, z0, c_in, z0 + slab);
    for (int k = 2; k < K; ++k) {
      double* zk = z0 + k * slab;
      lhat_mul(lhat, n, z0 + (k - 1) * slab, c_in, zk);
      const double* zm2 = z0 + (k - 2) * slab;
      for (int i = 0; i < n * c_in; ++i) zk[i] = 2.0 * zk[i] - zm2[i];
    }
  }
  for (int ts = 0; ts < t; ++ts)
    for (int node = 0; node < n; ++node) {
      double* p = pre + (ts * n + node) * c_out;
      for (int co = 0; co < c_out; ++co) p[co] = b[co];
      for (int k = 0; k < K; ++k) {
        const double* zr = z + (k * slab) + static_cast<std::size_t>(ts * n + node) * c_in;
        const double* th = theta + k * c_in * c_out;
        for (int ci = 0; ci < c_in; ++ci) {
          double zv = zr[ci];
          if (zv == 0) continue;
          const double* tr = th + ci * c_out;
          for (int co = 0; co < c_out; ++co) p[co] += zv * tr[co];
        }
      }
    }
}

void cheb_conv_backward(const double* lhat, int n, const double* z, int t,
                        int c_in, int c_out, int K, const double* theta,
                        const double* dpre, double* dtheta, double* db,
                        double* dx) {
  std::size_t slab = static_cast<std::size_t>(t) * n * c_in;
  for (int ts = 0; ts < t; ++ts)
    for (int node = 0; node < n; ++node) {
      const double* dp = dpre + (ts * n + node) * c_out;
      for (int co = 0; co < c_out; ++co) db[co] += dp[co];
      for (int k = 0; k < K; ++k) {
        const double* zr = z + k * slab + static_cast<std::size_t>(ts * n + node) * c_in;
        double* dth = dtheta + k * c_in * c_out;
        for (int ci = 0; ci < c_in; ++ci) {
          double zv = zr[ci];
          if (zv == 0) continue;
          double* dtr = dth + ci * c_out;
          for (int co = 0; co < c_out; ++co) dtr[co] += zv * dp[co];
        }
      }
    }

  // dx_t = sum_k T_k(lhat) dpre_t theta_k^T, using the same recurrence on
  // dpre (lhat is symmetric, so T_k(lhat)^T = T_k(lhat)).
  std::vector<double> g(static_cast<std::size_t>(K) * n * c_out);
  std::size_t gs = static_cast<std::size_t>(n) * c_out;
  for (int ts = 0; ts < t; ++ts) {
    const double* dp = dpre + static_cast<std::size_t>(ts) * n * c_out;
    std::copy(dp, dp + gs, g.data());
    if (K > 1) lhat_mul(lhat, n, g.data(), c_out, g.data() + gs);
    for (int k = 2; k < K; ++k) {
      double* gk = g.data() + k * gs;
      lhat_mul(lhat, n, g.data() + (k - 1) * gs, c_out, gk);
      const double* gm2 = g.data() + (k - 2) * gs;
      for (std::size_t i = 0; i < gs; ++i) gk[i] = 2.0 * gk[i] - gm2[i];
    }
    double* dxt = dx + static_cast<std::size_t>(ts) * n * c_in;
    std::fill(dxt, dxt + static_cast<std::size_t>(n) * c_in, 0.0);
    for (int node = 0; node < n; ++node)
      for (int k = 0; k < K; ++k) {
        const double* gk = g.data() + k * gs + static_cast<std::size_t>(node) * c_out;
        const double* th = theta + k * c_in * c_out;
        for (int ci = 0; ci < c_in; ++ci) {
          double acc = 0;
          const double* tr = th + ci * c_out;
          for (int co = 0; co < c_out; ++co) acc += gk[co] * tr[co];
          dxt[node * c_in + ci] += acc;
        }
      }
  }
}

void append_windows(StgcnDataset& ds, const std::vector<std::vector<double>>& minutes,
                    int n_nodes, int history, int horizon) {
  int width = n_nodes * ds.lanes;
  if (ds.n_nodes == 0) {
    ds.n_nodes = n_nodes;
    ds.history = history;
    ds.horizon = horizon;
  }
  if (ds.n_nodes != n_nodes || ds.history != history || ds.horizon != horizon)
    throw std::runtime_error("window shape does not match the dataset");
  for (const auto& m : minutes)
    if (static_cast<int>(m.size()) != width)
      throw std::runtime_error("minute feature row has the wrong width");

  int m_total = static_cast<int>(minutes.size());
  for (int last = history - 1; last + horizon < m_total; ++last) {
    std::vector<double> x(static_cast<std::size_t>(history) * width);
    for (int t = 0; t < history; ++t)
      std::copy(minutes[last - history + 1 + t].begin(),
                minutes[last - history + 1 + t].end(), x.begin() + static_cast<std::size_t>(t) * width);
    std::vector<double> y(static_cast<std::size_t>(width) * horizon);
    for (int h = 0; h < horizon; ++h) {
      const auto& row = minutes[last + 1 + h];
      for (int nl = 0; nl < width; ++nl) y[static_cast<std::size_t>(nl) * horizon + h] = row[nl];
    }
    ds.inputs.push_back(std::move(x));
    ds.targets.push_back(std::move(y));
  }
}

void save_dataset(const std::string& path, const StgcnDataset& ds,
                  std::uint64_t graph_hash) {
  BinaryWriter w(path);
  w.str("stgcn-data-v1");
  w.u32(static_cast<std::uint32_t>(ds.n_nodes));
  w.u32(static_cast<std::uint32_t>(ds.lanes));
  w.u32(static_cast<std::uint32_t>(ds.history));
  w.u32(static_cast<std::uint32_t>(ds.horizon));
  w.u32(static_cast<std::uint32_t>(ds.inputs.size()));
  w.u64(graph_hash);
  std::vector<double> flat;
  for (const auto& x : ds.inputs) flat.insert(flat.end(), x.begin(), x.end());
  w.array("inputs", flat);
  flat.clear();
  for (const auto& y : ds.targets) flat.insert(flat.end(), y.begin(), y.end());
  w.array("targets", flat);
  w.close();
}

StgcnDataset load_dataset(const std::string& path, std::uint64_t expected_graph_hash) {
  BinaryReader r(path);
  if (r.str() != "stgcn-data-v1")
    throw std::runtime_error("not a forecaster dataset file: " + path);
  StgcnDataset ds;
  ds.n_nodes = static_cast<int>(r.u32());
  ds.lanes = static_cast<int>(r.u32());
  ds.history = static_cast<int>(r.u32());
  ds.horizon = static_cast<int>(r.u32());
  std::uint32_t count = r.u32();
  std::uint64_t hash = r.u64();
  if (expected_graph_hash != 0 && hash != expected_graph_hash)
    throw std::runtime_error("dataset was recorded on a different graph");
  std::vector<double> xs = r.array("inputs");
  std::vector<double> ys = r.array("targets");
  std::size_t xlen = static_cast<std::size_t>(ds.history) * ds.n_nodes * ds.lanes;
  std::size_t ylen = static_cast<std::size_t>(ds.n_nodes) * ds.lanes * ds.horizon;
  if (xs.size() != xlen * count || ys.size() != ylen * count)
    throw std::runtime_error("dataset payload size mismatch");
  for (std::uint32_t i = 0; i < count; ++i) {
    ds.inputs.emplace_back(xs.begin() + i * xlen, xs.begin() + (i + 1) * xlen);
    ds.targets.emplace_back(ys.begin() + i * ylen, ys.begin() + (i + 1) * ylen);
  }
  return ds;
}

int Stgcn::alloc(int count, int& cursor) {
  int at = cursor;
  cursor += count;
  return at;
}

Stgcn::Stgcn(const RoadGraph& g, Config cfg, std::uint64_t seed)
    : graph_(&g), cfg_(cfg), n_(g.n()) {
  if (cfg_.history - 4 * (cfg_.kt - 1) < 1)
    throw std::runtime_error("history too short for two blocks of temporal convs");
  if (cfg_.horizon < 1 || cfg_.cheb_order < 1 || cfg_.c_hidden < 1 ||
      cfg_.c_spatial < 1 || cfg_.lanes < 1 || cfg_.feature_scale <= 0)
    throw std::runtime_error("bad forecaster config");

  Laplacian lap = normalized_laplacian(g);
  lhat_ = lap.scaled;
  std::uint64_t h = fnv1a64(&n_, sizeof n_);
  hash_ = fnv1a64(lhat_.data(), lhat_.size() * sizeof(double), h);

  int shrink = cfg_.kt - 1;
  dims_[0] = {cfg_.history, cfg_.history - shrink, cfg_.history - 2 * shrink, cfg_.lanes};
  dims_[1] = {dims_[0].t_out, dims_[0].t_out - shrink, dims_[0].t_out - 2 * shrink,
              cfg_.c_hidden};

  int cur = 0;
  for (int b = 0; b < 2; ++b) {
    int ci = dims_[b].c_in;
    t1_[b] = {ci, cfg_.c_hidden, alloc(cfg_.kt * ci * 2 * cfg_.c_hidden, cur),
              alloc(2 * cfg_.c_hidden, cur)};
    sp_[b] = {cfg_.c_hidden, cfg_.c_spatial,
              alloc(cfg_.cheb_order * cfg_.c_hidden * cfg_.c_spatial, cur),
              alloc(cfg_.c_spatial, cur)};
    t2_[b] = {cfg_.c_spatial, cfg_.c_hidden,
              alloc(cfg_.kt * cfg_.c_spatial * 2 * cfg_.c_hidden, cur),
              alloc(2 * cfg_.c_hidden, cur)};
  }
  fc_in_dim_ = dims_[1].t_out * cfg_.c_hidden;
  fc_out_dim_ = cfg_.lanes * cfg_.horizon;
  fc_w_ = alloc(fc_in_dim_ * fc_out_dim_, cur);
  fc_b_ = alloc(fc_out_dim_, cur);
  params_.assign(cur, 0.0);
  init_params(seed);
}

void Stgcn::init_params(std::uint64_t seed) {
  Rng rng = make_rng(seed, "stgcn-init");
  auto fill = [&](int off, int count, double fan_in, double fan_out) {
    double s = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> u(-s, s);
    for (int i = 0; i < count; ++i) params_[off + i] = u(rng);
  };
  for (int b = 0; b < 2; ++b) {
    fill(t1_[b].w, cfg_.kt * t1_[b].c_in * 2 * cfg_.c_hidden,
         cfg_.kt * t1_[b].c_in, 2 * cfg_.c_hidden);
    fill(sp_[b].w, cfg_.cheb_order * cfg_.c_hidden * cfg_.c_spatial,
         cfg_.cheb_order * cfg_.c_hidden, cfg_.c_spatial);
    fill(t2_[b].w, cfg_.kt * cfg_.c_spatial * 2 * cfg_.c_hidden,
         cfg_.kt * cfg_.c_spatial, 2 * cfg_.c_hidden);
  }
  fill(fc_w_, fc_in_dim_ * fc_out_dim_, fc_in_dim_, fc_out_dim_);
}

void Stgcn::forward(const double* x_raw, Workspace& ws) const {
  const double* p = params_.data();
  int ch = cfg_.c_hidden, cs = cfg_.c_spatial, K = cfg_.cheb_order, kt = cfg_.kt;

  ws.x0.resize(static_cast<std::size_t>(cfg_.history) * n_ * cfg_.lanes);
  for (std::size_t i = 0; i < ws.x0.size(); ++i) ws.x0[i] = x_raw[i] / cfg_.feature_scale;

  const double* in = ws.x0.data();
  for (int b = 0; b < 2; ++b) {
    const BlockDims& d = dims_[b];
    ws.t1_pre[b].resize(static_cast<std::size_t>(d.t_mid) * n_ * 2 * ch);
    ws.t1_out[b].resize(static_cast<std::size_t>(d.t_mid) * n_ * ch);
    temporal_glu_forward(in, d.t_in, n_, d.c_in, ch, kt, p + t1_[b].w, p + t1_[b].b,
                         ws.t1_pre[b].data(), ws.t1_out[b].data());

    ws.z[b].resize(static_cast<std::size_t>(K) * d.t_mid * n_ * ch);
    ws.sp_pre[b].resize(static_cast<std::size_t>(d.t_mid) * n_ * cs);
    cheb_conv_forward(lhat_.data(), n_, ws.t1_out[b].data(), d.t_mid, ch, cs, K,
                      p + sp_[b].w, p + sp_[b].b, ws.z[b].data(), ws.sp_pre[b].data());
    ws.sp_out[b].resize(ws.sp_pre[b].size());
    for (std::size_t i = 0; i < ws.sp_pre[b].size(); ++i)
      ws.sp_out[b][i] = ws.sp_pre[b][i] > 0 ? ws.sp_pre[b][i] : 0.0;

    ws.t2_pre[b].resize(static_cast<std::size_t>(d.t_out) * n_ * 2 * ch);
    ws.t2_out[b].resize(static_cast<std::size_t>(d.t_out) * n_ * ch);
    temporal_glu_forward(ws.sp_out[b].data(), d.t_mid, n_, cs, ch, kt, p + t2_[b].w,
                         p + t2_[b].b, ws.t2_pre[b].data(), ws.t2_out[b].data());
    in = ws.t2_out[b].data();
  }

  int t_res = dims_[1].t_out;
  ws.out.assign(static_cast<std::size_t>(n_) * fc_out_dim_, 0.0);
  for (int node = 0; node < n_; ++node) {
    double* o = ws.out.data() + static_cast<std::size_t>(node) * fc_out_dim_;
    for (int j = 0; j < fc_out_dim_; ++j) o[j] = p[fc_b_ + j];
    for (int t = 0; t < t_res; ++t)
      for (int c = 0; c < cfg_.c_hidden; ++c) {
        double xv = ws.t2_out[1][(static_cast<std::size_t>(t) * n_ + node) * cfg_.c_hidden + c];
        if (xv == 0) continue;
        const double* wr = p + fc_w_ + static_cast<std::size_t>(t * cfg_.c_hidden + c) * fc_out_dim_;
        for (int j = 0; j < fc_out_dim_; ++j) o[j] += xv * wr[j];
      }
  }
}

double Stgcn::backward(const double* y_raw, Workspace& ws, double* grad) const {
  const double* p = params_.data();
  int ch = cfg_.c_hidden, cs = cfg_.c_spatial, K = cfg_.cheb_order, kt = cfg_.kt;
  int t_res = dims_[1].t_out;
  std::size_t m = static_cast<std::size_t>(n_) * fc_out_dim_;

  double loss = 0;
  std::vector<double> dout(m);
  for (std::size_t i = 0; i < m; ++i) {
    double diff = ws.out[i] - y_raw[i] / cfg_.feature_scale;
    loss += diff * diff;
    dout[i] = 2.0 * diff / static_cast<double>(m);
  }
  loss /= static_cast<double>(m);

  // linear head
  std::vector<double> d_in(static_cast<std::size_t>(t_res) * n_ * ch, 0.0);
  for (int node = 0; node < n_; ++node) {
    const double* d = dout.data() + static_cast<std::size_t>(node) * fc_out_dim_;
    for (int j = 0; j < fc_out_dim_; ++j) grad[fc_b_ + j] += d[j];
    for (int t = 0; t < t_res; ++t)
      for (int c = 0; c < ch; ++c) {
        std::size_t xi = (static_cast<std::size_t>(t) * n_ + node) * ch + c;
        double xv = ws.t2_out[1][xi];
        const double* wr = p + fc_w_ + static_cast<std::size_t>(t * ch + c) * fc_out_dim_;
        double* gw = grad + fc_w_ + static_cast<std::size_t>(t * ch + c) * fc_out_dim_;
        double acc = 0;
        for (int j = 0; j < fc_out_dim_; ++j) {
          gw[j] += xv * d[j];
          acc += wr[j] * d[j];
        }
        d_in[xi] += acc;
      }
  }

  for (int b = 1; b >= 0; --b) {
    const BlockDims& dm = dims_[b];
    std::vector<double> d_spout(static_cast<std::size_t>(dm.t_mid) * n_ * cs);
    temporal_glu_backward(ws.sp_out[b].data(), ws.t2_pre[b].data(), dm.t_mid, n_, cs,
                          ch, kt, p + t2_[b].w, d_in.data(), grad + t2_[b].w,
                          grad + t2_[b].b, d_spout.data());
    for (std::size_t i = 0; i < d_spout.size(); ++i)
      if (ws.sp_pre[b][i] <= 0) d_spout[i] = 0.0;

    std::vector<double> d_t1out(static_cast<std::size_t>(dm.t_mid) * n_ * ch);
    cheb_conv_backward(lhat_.data(), n_, ws.z[b].data(), dm.t_mid, ch, cs, K,
                       p + sp_[b].w, d_spout.data(), grad + sp_[b].w, grad + sp_[b].b,
                       d_t1out.data());

    const double* x_in = b == 0 ? ws.x0.data() : ws.t2_out[0].data();
    std::vector<double> d_x(static_cast<std::size_t>(dm.t_in) * n_ * dm.c_in);
    temporal_glu_backward(x_in, ws.t1_pre[b].data(), dm.t_in, n_, dm.c_in, ch, kt,
                          p + t1_[b].w, d_t1out.data(), grad + t1_[b].w,
                          grad + t1_[b].b, d_x.data());
    d_in = std::move(d_x);
  }
  return loss;
}

std::vector<double> Stgcn::predict(const std::vector<double>& x) const {
  std::size_t want = static_cast<std::size_t>(cfg_.history) * n_ * cfg_.lanes;
  if (x.size() != want)
    throw std::runtime_error("prediction input has the wrong size");
  Workspace ws;
  forward(x.data(), ws);
  std::vector<double> out(ws.out.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = std::max(0.0, ws.out[i]) * cfg_.feature_scale;
  return out;
}

namespace {

void check_dataset(const StgcnDataset& ds, const Stgcn::Config& cfg, int n) {
  if (ds.n_nodes != n || ds.lanes != cfg.lanes || ds.history != cfg.history ||
      ds.horizon != cfg.horizon)
    throw std::runtime_error("dataset shape does not match the model");
  if (ds.inputs.size() != ds.targets.size())
    throw std::runtime_error("dataset inputs/targets length mismatch");
  std::size_t xlen = static_cast<std::size_t>(cfg.history) * n * cfg.lanes;
  std::size_t ylen = static_cast<std::size_t>(n) * cfg.lanes * cfg.horizon;
  for (std::size_t i = 0; i < ds.inputs.size(); ++i)
    if (ds.inputs[i].size() != xlen || ds.targets[i].size() != ylen)
      throw std::runtime_error("dataset sample has the wrong size");
}

struct GradAcc {
  double loss = 0;
  std::vector<double> grad;
};

}  // namespace

double Stgcn::loss(const StgcnDataset& ds, Exec exec) const {
  check_dataset(ds, cfg_, n_);
  if (ds.inputs.empty()) return 0.0;
  std::size_t m = static_cast<std::size_t>(n_) * fc_out_dim_;
  auto acc = accumulate_chunked<double>(
      static_cast<int>(ds.inputs.size()), exec, [] { return 0.0; },
      [&](int i, double& a) {
        Workspace ws;
        forward(ds.inputs[i].data(), ws);
        double l = 0;
        for (std::size_t j = 0; j < m; ++j) {
          double diff = ws.out[j] - ds.targets[i][j] / cfg_.feature_scale;
          l += diff * diff;
        }
        a += l / static_cast<double>(m);
      },
      [](double& a, const double& b) { a += b; });
  return acc / static_cast<double>(ds.inputs.size());
}

double Stgcn::batch_loss_grad(const StgcnDataset& ds, const std::vector<int>& idx,
                              std::vector<double>& grad, Exec exec) const {
  check_dataset(ds, cfg_, n_);
  if (idx.empty()) throw std::runtime_error("empty batch");
  for (int i : idx)
    if (i < 0 || i >= static_cast<int>(ds.inputs.size()))
      throw std::runtime_error("batch index out of range");

  auto acc = accumulate_chunked<GradAcc>(
      static_cast<int>(idx.size()), exec,
      [&] {
        GradAcc a;
        a.grad.assign(params_.size(), 0.0);
        return a;
      },
      [&](int i, GradAcc& a) {
        Workspace ws;
        forward(ds.inputs[idx[i]].data(), ws);
        a.loss += backward(ds.targets[idx[i]].data(), ws, a.grad.data());
      },
      [](GradAcc& a, const GradAcc& b) {
        a.loss += b.loss;
        for (std::size_t i = 0; i < a.grad.size(); ++i) a.grad[i] += b.grad[i];
      });

  double inv = 1.0 / static_cast<double>(idx.size());
  grad.assign(params_.size(), 0.0);
  for (std::size_t i = 0; i < grad.size(); ++i) grad[i] = acc.grad[i] * inv;
  return acc.loss * inv;
}

void Stgcn::sgd_step(const std::vector<double>& grad, double lr) {
  if (grad.size() != params_.size()) throw std::runtime_error("gradient size mismatch");
  for (std::size_t i = 0; i < params_.size(); ++i) params_[i] -= lr * grad[i];
}

Stgcn::TrainReport Stgcn::train(const StgcnDataset& ds, int epochs, int batch_size,
                                double lr, std::uint64_t seed, Exec exec) {
  check_dataset(ds, cfg_, n_);
  if (ds.inputs.empty()) throw std::runtime_error("cannot train on an empty dataset");
  if (epochs < 1 || batch_size < 1 || lr <= 0)
    throw std::runtime_error("bad training settings");

  Rng rng = make_rng(seed, "stgcn-train");
  std::vector<int> perm(ds.inputs.size());
  std::iota(perm.begin(), perm.end(), 0);
  TrainReport report;
  std::vector<double> grad;
  for (int e = 0; e < epochs; ++e) {
    std::shuffle(perm.begin(), perm.end(), rng);
    double sum = 0;
    long count = 0;
    for (std::size_t at = 0; at < perm.size(); at += batch_size) {
      std::size_t end = std::min(perm.size(), at + batch_size);
      std::vector<int> idx(perm.begin() + at, perm.begin() + end);
      double l = batch_loss_grad(ds, idx, grad, exec);
      sgd_step(grad, lr);
      sum += l * static_cast<double>(idx.size());
      count += static_cast<long>(idx.size());
    }
    report.epoch_loss.push_back(sum / static_cast<double>(count));
  }
  return report;
}

void Stgcn::save(const std::string& path) const {
  BinaryWriter w(path);
  w.str("stgcn-ckpt-v1");
  w.u32(static_cast<std::uint32_t>(cfg_.history));
  w.u32(static_cast<std::uint32_t>(cfg_.horizon));
  w.u32(static_cast<std::uint32_t>(cfg_.lanes));
  w.u32(static_cast<std::uint32_t>(cfg_.cheb_order));
  w.u32(static_cast<std::uint32_t>(cfg_.kt));
  w.u32(static_cast<std::uint32_t>(cfg_.c_hidden));
  w.u32(static_cast<std::uint32_t>(cfg_.c_spatial));
  w.f64(cfg_.feature_scale);
  w.u64(hash_);
  w.array("params", params_);
  w.close();
}

Stgcn Stgcn::load(const std::string& path, const RoadGraph& g) {
  BinaryReader r(path);
  if (r.str() != "stgcn-ckpt-v1")
    throw std::runtime_error("not a forecaster checkpoint: " + path);
  Config cfg;
  cfg.history = static_cast<int>(r.u32());
  cfg.horizon = static_cast<int>(r.u32());
  cfg.lanes = static_cast<int>(r.u32());
  cfg.cheb_order = static_cast<int>(r.u32());
  cfg.kt = static_cast<int>(r.u32());
  cfg.c_hidden = static_cast<int>(r.u32());
  cfg.c_spatial = static_cast<int>(r.u32());
  cfg.feature_scale = r.f64();
  std::uint64_t hash = r.u64();
  Stgcn model(g, cfg, 0);
  if (model.hash_ != hash)
    throw std::runtime_error("checkpoint was trained on a different graph");
  std::vector<double> params = r.array("params");
  if (params.size() != model.params_.size())
    throw std::runtime_error("checkpoint parameter count mismatch");
  model.params_ = std::move(params);
  return model;
}

}  // namespace gplight
