#include "adacontrast/model.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace adacontrast {

void NetArch::validate() const {
  if (input_dim < 1 || bottleneck_dim < 1 || num_classes < 1) throw std::invalid_argument("NetArch: dims must be >= 1");
  for (auto h : hidden)
    if (h < 1) throw std::invalid_argument("NetArch: hidden sizes must be >= 1");
}

std::vector<Tensor*> Params::learnable() {
  std::vector<Tensor*> out;
  for (auto& l : encoder) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  out.insert(out.end(), {&bottleneck.weight, &bottleneck.bias, &bn.gamma, &bn.beta, &direction, &scale});
  return out;
}

std::vector<const Tensor*> Params::learnable() const {
  auto mut = const_cast<Params*>(this)->learnable();
  return {mut.begin(), mut.end()};
}

std::vector<std::string> Params::learnable_names() const {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < encoder.size(); ++i) {
    names.push_back("encoder." + std::to_string(i) + ".weight");
    names.push_back("encoder." + std::to_string(i) + ".bias");
  }
  names.insert(names.end(), {"bottleneck.weight", "bottleneck.bias", "bn.gamma", "bn.beta", "classifier.direction",
                             "classifier.scale"});
  return names;
}

std::vector<Tensor*> Params::all_tensors() {
  auto out = learnable();
  out.push_back(&bn.running_mean);
  out.push_back(&bn.running_var);
  return out;
}

std::vector<const Tensor*> Params::all_tensors() const {
  auto mut = const_cast<Params*>(this)->all_tensors();
  return {mut.begin(), mut.end()};
}

std::vector<std::string> Params::all_names() const {
  auto names = learnable_names();
  names.push_back("bn.running_mean");
  names.push_back("bn.running_var");
  return names;
}

std::vector<double> Params::lr_multipliers(double head_mult) const {
  std::vector<double> mult(2 * encoder.size(), 1.0);
  mult.resize(mult.size() + 6, head_mult);
  return mult;
}

bool Params::operator==(const Params& other) const {
  if (!(arch == other.arch) || encoder.size() != other.encoder.size()) return false;
  const auto a = all_tensors();
  const auto b = other.all_tensors();
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i]->rows() != b[i]->rows() || a[i]->cols() != b[i]->cols()) return false;
    if (*a[i] != *b[i]) return false;
  }
  return true;
}

namespace {

Tensor gaussian(Index rows, Index cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Tensor t(rows, cols);
  for (Index k = 0; k < t.size(); ++k) t.data()[k] = dist(rng);
  return t;
}

}  // namespace

Params init_params(const NetArch& arch, std::uint64_t seed) {
  arch.validate();
  std::mt19937_64 rng(seed);
  Params p;
  p.arch = arch;
  Index in = arch.input_dim;
  for (auto h : arch.hidden) {
    p.encoder.push_back({gaussian(in, h, std::sqrt(2.0 / static_cast<double>(in)), rng), Tensor::Zero(1, h)});
    in = h;
  }
  const Index d = arch.bottleneck_dim;
  p.bottleneck = {gaussian(in, d, std::sqrt(2.0 / static_cast<double>(in + d)), rng), Tensor::Zero(1, d)};
  p.bn.gamma = Tensor::Ones(1, d);
  p.bn.beta = Tensor::Zero(1, d);
  p.bn.running_mean = Tensor::Zero(1, d);
  p.bn.running_var = Tensor::Ones(1, d);
  p.direction = gaussian(arch.num_classes, d, std::sqrt(1.0 / static_cast<double>(d)), rng);
  p.scale = p.direction.rowwise().norm().transpose();
  return p;
}

void update_running_stats(BatchNormParams& bn, const kernels::BatchNormResult& batch, Index batch_size) {
  const double m = BatchNormParams::kMomentum;
  const double correction = batch_size > 1 ? static_cast<double>(batch_size) / static_cast<double>(batch_size - 1) : 1.0;
  bn.running_mean = (1.0 - m) * bn.running_mean + m * batch.mean;
  bn.running_var = (1.0 - m) * bn.running_var + (m * correction) * batch.variance;
}

Tensor encode(const Params& params, const Tensor& batch, Mode mode, BatchNormParams* update) {
  if (batch.cols() != params.arch.input_dim)
    throw ShapeError("encode: batch width " + std::to_string(batch.cols()) + " != input_dim " +
                     std::to_string(params.arch.input_dim));
  Tensor h = batch;
  for (const auto& layer : params.encoder) h = ((h * layer.weight).rowwise() + layer.bias.row(0)).cwiseMax(0.0);
  const Tensor z = (h * params.bottleneck.weight).rowwise() + params.bottleneck.bias.row(0);
  const auto& bn = params.bn;
  if (mode == Mode::eval)
    return kernels::batch_norm_eval(z, bn.gamma, bn.beta, bn.running_mean, bn.running_var, BatchNormParams::kEps);
  auto r = kernels::batch_norm_train(z, bn.gamma, bn.beta, BatchNormParams::kEps);
  if (update) update_running_stats(*update, r, z.rows());
  return std::move(r.output);
}

Tensor weight_norm_logits(const Params& params, const Tensor& features) {
  if (features.cols() != params.direction.cols()) throw ShapeError("weight_norm_logits: feature width mismatch");
  return features * kernels::weight_norm(params.direction, params.scale).transpose();
}

Prediction predict(const Params& params, const Tensor& batch, Mode mode, BatchNormParams* update) {
  Prediction p;
  p.features = encode(params, batch, mode, update);
  p.logits = weight_norm_logits(params, p.features);
  p.probs = kernels::softmax_rows(p.logits);
  return p;
}

std::vector<int> argmax_rows(const Tensor& m) {
  std::vector<int> out(static_cast<std::size_t>(m.rows()));
  for (Index i = 0; i < m.rows(); ++i) {
    Index best = 0;
    for (Index c = 1; c < m.cols(); ++c)
      if (m(i, c) > m(i, best)) best = c;
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

ParamVars bind_params(const Params& params, std::span<const Var> leaves) {
  const std::size_t expected = 2 * params.encoder.size() + 6;
  if (leaves.size() != expected) throw ShapeError("bind_params: expected " + std::to_string(expected) + " leaves");
  ParamVars v;
  std::size_t k = 0;
  for (std::size_t i = 0; i < params.encoder.size(); ++i) {
    v.encoder_weight.push_back(leaves[k++]);
    v.encoder_bias.push_back(leaves[k++]);
  }
  v.bottleneck_weight = leaves[k++];
  v.bottleneck_bias = leaves[k++];
  v.gamma = leaves[k++];
  v.beta = leaves[k++];
  v.direction = leaves[k++];
  v.scale = leaves[k++];
  return v;
}

TapeForward forward(const ParamVars& vars, const Params& params, Var input, Mode mode, BatchNormParams* update) {
  Tape& t = *input.tape;
  if (input.cols() != params.arch.input_dim) throw ShapeError("forward: input width mismatch");
  Var h = input;
  for (std::size_t i = 0; i < vars.encoder_weight.size(); ++i)
    h = t.relu(t.add_row(t.matmul(h, vars.encoder_weight[i]), vars.encoder_bias[i]));
  Var z = t.add_row(t.matmul(h, vars.bottleneck_weight), vars.bottleneck_bias);
  Var features;
  if (mode == Mode::eval) {
    const auto& bn = params.bn;
    const RowVector<double> inv_std = (bn.running_var.row(0).array() + BatchNormParams::kEps).rsqrt().matrix();
    Var shift = t.constant(-bn.running_mean, "bn.running_mean");
    Var inv = t.constant(inv_std, "bn.inv_std");
    features = t.add_row(t.mul_row(t.mul_row(t.add_row(z, shift), inv), vars.gamma), vars.beta);
  } else {
    kernels::BatchNormResult stats;
    features = t.batch_norm(z, vars.gamma, vars.beta, BatchNormParams::kEps, &stats);
    if (update) update_running_stats(*update, stats, z.rows());
  }
  Var w = t.weight_norm(vars.direction, vars.scale);
  return {features, t.matmul_nt(features, w)};
}

std::pair<Params, MomentumState> init_from_source(const Params& source, double m) {
  if (!(m >= 0.0 && m <= 1.0)) throw std::invalid_argument("init_from_source: momentum must lie in [0, 1]");
  return {source, MomentumState{source, m}};
}

void ema_update(MomentumState& momentum, const Params& live) {
  auto dst = momentum.params.all_tensors();
  const auto src = live.all_tensors();
  if (dst.size() != src.size()) throw ShapeError("ema_update: parameter count mismatch");
  for (std::size_t i = 0; i < dst.size(); ++i) require_same_shape(*dst[i], *src[i], "ema_update");
  const double m = momentum.m;
  for (std::size_t i = 0; i < dst.size(); ++i) *dst[i] = m * *dst[i] + (1.0 - m) * *src[i];
}

}  // namespace adacontrast
