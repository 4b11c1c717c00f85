#include "cacc/nn.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <string>

#include <fmt/format.h>

#include "cacc/errors.hpp"

namespace cacc::nn {

namespace {

// Visits every parameter block in flattening order.
template <typename Net, typename Fn>
void for_each_block(Net& net, Fn&& fn) {
  fn(net.input_fc.weights);
  fn(net.input_fc.biases);
  fn(net.lstm.input_weights);
  fn(net.lstm.recurrent_weights);
  fn(net.lstm.biases);
  fn(net.actor_head.weights);
  fn(net.actor_head.biases);
  fn(net.critic_head.weights);
  fn(net.critic_head.biases);
}

template <typename Net1, typename Net2, typename Fn>
void for_each_block_pair(Net1& a, Net2& b, Fn&& fn) {
  fn(a.input_fc.weights, b.input_fc.weights);
  fn(a.input_fc.biases, b.input_fc.biases);
  fn(a.lstm.input_weights, b.lstm.input_weights);
  fn(a.lstm.recurrent_weights, b.lstm.recurrent_weights);
  fn(a.lstm.biases, b.lstm.biases);
  fn(a.actor_head.weights, b.actor_head.weights);
  fn(a.actor_head.biases, b.actor_head.biases);
  fn(a.critic_head.weights, b.critic_head.weights);
  fn(a.critic_head.biases, b.critic_head.biases);
}

Vector sigmoid(const Vector& z) { return (1.0 + (-z.array()).exp()).inverse().matrix(); }

}  // namespace

NetParams NetParams::zeros(const NetShape& shape) {
  const auto in = static_cast<Eigen::Index>(shape.obs_dim);
  const auto h = static_cast<Eigen::Index>(shape.hidden);
  const auto a = static_cast<Eigen::Index>(shape.actions);
  NetParams p;
  p.shape = shape;
  p.input_fc = {Matrix::Zero(h, in), Vector::Zero(h)};
  p.lstm = {Matrix::Zero(4 * h, h), Matrix::Zero(4 * h, h), Vector::Zero(4 * h)};
  p.actor_head = {Matrix::Zero(a, h), Vector::Zero(a)};
  p.critic_head = {Matrix::Zero(1, h), Vector::Zero(1)};
  return p;
}

NetParams NetParams::orthogonal(const NetShape& shape, Rng& rng, double head_gain) {
  NetParams p = zeros(shape);
  p.input_fc.weights = orthogonal_init(shape.hidden, shape.obs_dim, 1.0, rng);
  p.lstm.input_weights = orthogonal_init(4 * shape.hidden, shape.hidden, 1.0, rng);
  p.lstm.recurrent_weights = orthogonal_init(4 * shape.hidden, shape.hidden, 1.0, rng);
  p.actor_head.weights = orthogonal_init(shape.actions, shape.hidden, head_gain, rng);
  p.critic_head.weights = orthogonal_init(1, shape.hidden, head_gain, rng);
  return p;
}

std::size_t NetParams::num_params() const {
  std::size_t n = 0;
  for_each_block(*this, [&](const auto& block) { n += static_cast<std::size_t>(block.size()); });
  return n;
}

std::vector<double> NetParams::flatten() const {
  std::vector<double> flat;
  flat.reserve(num_params());
  for_each_block(*this, [&](const auto& block) {
    for (Eigen::Index r = 0; r < block.rows(); ++r) {
      for (Eigen::Index c = 0; c < block.cols(); ++c) flat.push_back(block(r, c));
    }
  });
  return flat;
}

void NetParams::unflatten(std::span<const double> flat) {
  if (flat.size() != num_params()) {
    throw UsageError(fmt::format("unflatten: expected {} values, got {}", num_params(),
                                 flat.size()));
  }
  std::size_t pos = 0;
  for_each_block(*this, [&](auto& block) {
    for (Eigen::Index r = 0; r < block.rows(); ++r) {
      for (Eigen::Index c = 0; c < block.cols(); ++c) block(r, c) = flat[pos++];
    }
  });
}

void NetParams::add_scaled(const NetParams& other, double factor) {
  if (!(shape == other.shape)) throw UsageError("add_scaled: shape mismatch");
  for_each_block_pair(*this, other, [&](auto& a, const auto& b) { a += factor * b; });
}

void NetParams::scale(double factor) {
  for_each_block(*this, [&](auto& block) { block *= factor; });
}

double NetParams::squared_norm() const {
  double sum = 0.0;
  for_each_block(*this, [&](const auto& block) { sum += block.squaredNorm(); });
  return sum;
}

bool NetParams::all_finite() const {
  bool ok = true;
  for_each_block(*this, [&](const auto& block) { ok = ok && block.allFinite(); });
  return ok;
}

HiddenState HiddenState::zeros(std::size_t size) {
  const auto n = static_cast<Eigen::Index>(size);
  return {Vector::Zero(n), Vector::Zero(n)};
}

AgentNet::AgentNet(NetParams p) : params(std::move(p)), hidden(HiddenState::zeros(params.shape.hidden)) {}

void AgentNet::reset_hidden() { hidden = HiddenState::zeros(params.shape.hidden); }

ForwardRecord AgentNet::step(std::span<const double> obs) {
  ForwardRecord rec = forward(params, obs, hidden);
  hidden = rec.next;
  return rec;
}

Matrix orthogonal_init(std::size_t rows, std::size_t cols, double gain, Rng& rng) {
  if (rows == 0 || cols == 0) throw UsageError("orthogonal_init: shape must be positive");
  const bool wide = rows < cols;
  const auto tall_rows = static_cast<Eigen::Index>(wide ? cols : rows);
  const auto tall_cols = static_cast<Eigen::Index>(wide ? rows : cols);
  Matrix a(tall_rows, tall_cols);
  for (Eigen::Index r = 0; r < tall_rows; ++r) {
    for (Eigen::Index c = 0; c < tall_cols; ++c) a(r, c) = rng.normal();
  }
  Eigen::HouseholderQR<Matrix> qr(a);
  Matrix q = qr.householderQ() * Matrix::Identity(tall_rows, tall_cols);
  const Matrix r = qr.matrixQR().topRows(tall_cols).triangularView<Eigen::Upper>();
  // Sign fix makes the factorisation unique (uniform over the orthogonal group).
  for (Eigen::Index c = 0; c < tall_cols; ++c) {
    if (r(c, c) < 0.0) q.col(c) *= -1.0;
  }
  q *= gain;
  if (wide) return q.transpose();
  return q;
}

Vector softmax(const Vector& logits) {
  const double top = logits.maxCoeff();
  Vector e = (logits.array() - top).exp().matrix();
  return e / e.sum();
}

ForwardRecord forward(const NetParams& net, std::span<const double> obs, const HiddenState& hidden) {
  const auto h = static_cast<Eigen::Index>(net.shape.hidden);
  if (obs.size() != net.shape.obs_dim) {
    throw UsageError(fmt::format("forward: observation length {} != obs_dim {}", obs.size(),
                                 net.shape.obs_dim));
  }
  ForwardRecord rec;
  rec.obs = Eigen::Map<const Vector>(obs.data(), static_cast<Eigen::Index>(obs.size()));
  rec.prev = hidden;
  rec.fc_out = (net.input_fc.weights * rec.obs + net.input_fc.biases).array().tanh().matrix();

  const Vector z = net.lstm.input_weights * rec.fc_out +
                   net.lstm.recurrent_weights * hidden.hidden + net.lstm.biases;
  rec.gates.resize(4 * h);
  rec.gates.segment(0, h) = sigmoid(z.segment(0, h));
  rec.gates.segment(h, h) = sigmoid(z.segment(h, h));
  rec.gates.segment(2 * h, h) = z.segment(2 * h, h).array().tanh().matrix();
  rec.gates.segment(3 * h, h) = sigmoid(z.segment(3 * h, h));

  const auto i = rec.gates.segment(0, h).array();
  const auto f = rec.gates.segment(h, h).array();
  const auto g = rec.gates.segment(2 * h, h).array();
  const auto o = rec.gates.segment(3 * h, h).array();
  rec.next.cell = (f * hidden.cell.array() + i * g).matrix();
  rec.next.hidden = (o * rec.next.cell.array().tanh()).matrix();

  rec.logits = net.actor_head.weights * rec.next.hidden + net.actor_head.biases;
  rec.policy = softmax(rec.logits);
  rec.value = (net.critic_head.weights * rec.next.hidden + net.critic_head.biases)(0);
  if (!std::isfinite(rec.value) || !rec.policy.allFinite()) {
    throw NumericError("forward: non-finite network output (NaN or Inf in parameters?)");
  }
  return rec;
}

GradBundle backward(const NetParams& net, std::span<const ForwardRecord> records,
                    std::span<const OutputGrad> grads) {
  if (records.size() != grads.size()) {
    throw UsageError(fmt::format("backward: {} records but {} output gradients", records.size(),
                                 grads.size()));
  }
  for (std::size_t t = 1; t < records.size(); ++t) {
    if (records[t].prev.hidden != records[t - 1].next.hidden ||
        records[t].prev.cell != records[t - 1].next.cell) {
      throw UsageError(fmt::format("backward: record {} does not continue record {}", t, t - 1));
    }
  }

  const auto h = static_cast<Eigen::Index>(net.shape.hidden);
  GradBundle g = NetParams::zeros(net.shape);
  Vector dh_next = Vector::Zero(h);
  Vector dc_next = Vector::Zero(h);
  Vector dz(4 * h);

  for (std::size_t t = records.size(); t-- > 0;) {
    const ForwardRecord& rec = records[t];
    const OutputGrad& out = grads[t];
    if (out.d_logits.size() != static_cast<Eigen::Index>(net.shape.actions)) {
      throw UsageError("backward: d_logits has wrong length");
    }

    g.actor_head.weights.noalias() += out.d_logits * rec.next.hidden.transpose();
    g.actor_head.biases += out.d_logits;
    g.critic_head.weights.noalias() += out.d_value * rec.next.hidden.transpose();
    g.critic_head.biases(0) += out.d_value;

    Vector dh = net.actor_head.weights.transpose() * out.d_logits +
                net.critic_head.weights.transpose() * out.d_value + dh_next;

    const auto i = rec.gates.segment(0, h).array();
    const auto f = rec.gates.segment(h, h).array();
    const auto gg = rec.gates.segment(2 * h, h).array();
    const auto o = rec.gates.segment(3 * h, h).array();
    const Eigen::ArrayXd tanh_c = rec.next.cell.array().tanh();

    const Eigen::ArrayXd dc = dh.array() * o * (1.0 - tanh_c.square()) + dc_next.array();
    dz.segment(0, h) = (dc * gg * i * (1.0 - i)).matrix();
    dz.segment(h, h) = (dc * rec.prev.cell.array() * f * (1.0 - f)).matrix();
    dz.segment(2 * h, h) = (dc * i * (1.0 - gg.square())).matrix();
    dz.segment(3 * h, h) = (dh.array() * tanh_c * o * (1.0 - o)).matrix();
    dc_next = (dc * f).matrix();

    g.lstm.input_weights.noalias() += dz * rec.fc_out.transpose();
    g.lstm.recurrent_weights.noalias() += dz * rec.prev.hidden.transpose();
    g.lstm.biases += dz;
    dh_next.noalias() = net.lstm.recurrent_weights.transpose() * dz;

    const Vector dx = net.lstm.input_weights.transpose() * dz;
    const Vector dpre = (dx.array() * (1.0 - rec.fc_out.array().square())).matrix();
    g.input_fc.weights.noalias() += dpre * rec.obs.transpose();
    g.input_fc.biases += dpre;
  }
  return g;
}

void save_checkpoint(const NetParams& net, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path.string());
  out << fmt::format("cacc-agentnet v1 obs_dim={} hidden={} actions={} params={}\n",
                     net.shape.obs_dim, net.shape.hidden, net.shape.actions, net.num_params());
  for (double v : net.flatten()) out << fmt::format("{:.17g}\n", v);
  if (!out) throw std::runtime_error("failed writing checkpoint: " + path.string());
}

NetParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open checkpoint: " + path.string());
  std::string header;
  std::getline(in, header);
  NetShape shape;
  std::size_t count = 0;
  if (std::sscanf(header.c_str(), "cacc-agentnet v1 obs_dim=%zu hidden=%zu actions=%zu params=%zu",
                  &shape.obs_dim, &shape.hidden, &shape.actions, &count) != 4) {
    throw FormatError("bad checkpoint header in " + path.string());
  }
  NetParams net = NetParams::zeros(shape);
  if (count != net.num_params()) {
    throw FormatError("checkpoint parameter count does not match its shape: " + path.string());
  }
  std::vector<double> flat;
  flat.reserve(count);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    flat.push_back(std::stod(line));
  }
  if (flat.size() != count) {
    throw FormatError(fmt::format("checkpoint {} has {} values, header says {}", path.string(),
                                  flat.size(), count));
  }
  net.unflatten(flat);
  return net;
}

}  // namespace cacc::nn
