#pragma once

// Spatio-temporal graph convolutional forecaster for per-lane queue features.
// Two blocks of (gated temporal conv, Chebyshev graph conv, gated temporal
// conv) followed by a per-node linear head that emits the whole horizon at
// once. Gradients are hand-written reverse mode; the optimizer is plain SGD.

#include <cstdint>
#include <string>
#include <vector>

#include "gplight/kernels.hpp"
#include "gplight/roadgraph.hpp"
#include "gplight/rng.hpp"

namespace gplight {

// ---- standalone layer kernels (exposed for direct testing) ----

// Gated temporal convolution over the time axis. x: [t_in][n][c_in],
// w: [kt][c_in][2*c_out], b: [2*c_out]. Writes pre: [t_out][n][2*c_out] and
// y: [t_out][n][c_out] with t_out = t_in - kt + 1, y = a * sigmoid(g) where
// a is the first c_out channels of pre and g the rest.
void temporal_glu_forward(const double* x, int t_in, int n, int c_in, int c_out,
                          int kt, const double* w, const double* b, double* pre,
                          double* y);

// Reverse pass. dy: [t_out][n][c_out]. Adds into dw/db, overwrites dx.
void temporal_glu_backward(const double* x, const double* pre, int t_in, int n,
                           int c_in, int c_out, int kt, const double* w,
                           const double* dy, double* dw, double* db, double* dx);

// Chebyshev graph convolution applied independently at each time step.
// lhat: [n][n] scaled Laplacian, x: [t][n][c_in], theta: [K][c_in][c_out],
// b: [c_out]. Writes the basis stack z: [K][t][n][c_in] and pre: [t][n][c_out]
// (no activation; the caller applies ReLU so the cache stays reusable).
void cheb_conv_forward(const double* lhat, int n, const double* x, int t,
                       int c_in, int c_out, int K, const double* theta,
                       const double* b, double* z, double* pre);

// Reverse pass. dpre: [t][n][c_out]. Adds into dtheta/db, overwrites dx.
// Relies on lhat being symmetric.
void cheb_conv_backward(const double* lhat, int n, const double* z, int t,
                        int c_in, int c_out, int K, const double* theta,
                        const double* dpre, double* dtheta, double* db,
                        double* dx);

// ---- training data ----

struct StgcnDataset {
  int n_nodes = 0;
  int lanes = kMovements;
  int history = 0;
  int horizon = 0;
  std::vector<std::vector<double>> inputs;   // each [history * n * lanes], layout [t][node][lane]
  std::vector<std::vector<double>> targets;  // each [n * lanes * horizon], layout [node][lane][h]
};

// Slide (history -> horizon) windows over a per-minute feature series where
// minutes[m] has layout [node*lanes + lane]. Appends every complete window.
void append_windows(StgcnDataset& ds, const std::vector<std::vector<double>>& minutes,
                    int n_nodes, int history, int horizon);

void save_dataset(const std::string& path, const StgcnDataset& ds,
                  std::uint64_t graph_hash);
StgcnDataset load_dataset(const std::string& path, std::uint64_t expected_graph_hash);

// ---- the model ----

class Stgcn {
 public:
  struct Config {
    int history = 10;     // input minutes
    int horizon = 5;      // predicted minutes
    int lanes = kMovements;
    int cheb_order = 3;   // K
    int kt = 3;           // temporal kernel width
    int c_hidden = 32;    // temporal conv channels
    int c_spatial = 16;   // graph conv channels
    double feature_scale = 40.0;  // raw counts divided by this inside the net
  };

  struct TrainReport {
    std::vector<double> epoch_loss;  // mean scaled-space MSE per epoch
  };

  Stgcn(const RoadGraph& g, Config cfg, std::uint64_t seed);
  Stgcn(const RoadGraph& g) : Stgcn(g, Config(), 0) {}

  const Config& config() const { return cfg_; }
  int n_nodes() const { return n_; }
  std::uint64_t graph_hash() const { return hash_; }

  // x: raw counts [history][n][lanes]; returns [n][lanes][horizon] raw counts,
  // clamped at zero.
  std::vector<double> predict(const std::vector<double>& x) const;

  // Mean scaled-space squared error over the whole dataset.
  double loss(const StgcnDataset& ds, Exec exec = Exec::Serial) const;

  // Mean loss and mean parameter gradient over the given sample indices.
  double batch_loss_grad(const StgcnDataset& ds, const std::vector<int>& idx,
                         std::vector<double>& grad, Exec exec) const;

  void sgd_step(const std::vector<double>& grad, double lr);

  TrainReport train(const StgcnDataset& ds, int epochs, int batch_size,
                    double lr, std::uint64_t seed, Exec exec = Exec::Parallel);

  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }

  void save(const std::string& path) const;
  static Stgcn load(const std::string& path, const RoadGraph& g);

 private:
  struct TcSpec { int c_in, c_out, w, b; };
  struct ScSpec { int c_in, c_out, w, b; };
  struct BlockDims { int t_in, t_mid, t_out, c_in; };

  struct Workspace {
    std::vector<double> x0;                       // scaled input
    std::vector<double> t1_pre[2], t1_out[2];
    std::vector<double> z[2], sp_pre[2], sp_out[2];
    std::vector<double> t2_pre[2], t2_out[2];
    std::vector<double> out;                      // [n][lanes*horizon], scaled
  };

  void forward(const double* x_raw, Workspace& ws) const;
  // Adds this sample's gradient into grad, returns its scaled-space MSE.
  double backward(const double* y_raw, Workspace& ws, double* grad) const;
  int alloc(int count, int& cursor);
  void init_params(std::uint64_t seed);

  const RoadGraph* graph_;
  Config cfg_;
  int n_ = 0;
  std::vector<double> lhat_;
  std::uint64_t hash_ = 0;
  BlockDims dims_[2];
  TcSpec t1_[2], t2_[2];
  ScSpec sp_[2];
  int fc_w_ = 0, fc_b_ = 0, fc_in_dim_ = 0, fc_out_dim_ = 0;
  std::vector<double> params_;
};

}  // namespace gplight
