#include "mfid/mechnet.hpp"

#include <cmath>
#include <random>

#include "mfid/error.hpp"

namespace mfid {

std::size_t Segment::size() const {
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

void validate(const MechNetShape& s) {
  require(s.H >= 1, "mechnet: H must be positive");
  require(s.A >= 2, "mechnet: need at least two bids");
  require(s.d_hidden >= 1, "mechnet: d_hidden must be positive");
}

std::vector<Segment> mechnet_segments(const MechNetShape& shape) {
  validate(shape);
  const auto d = static_cast<std::size_t>(shape.d_hidden);
  const auto in = static_cast<std::size_t>(shape.input_size());
  const auto p = static_cast<std::size_t>(shape.A - 1);
  std::vector<Segment> segs{
      {"W1", {d, in}}, {"b1", {d}},    {"W2", {d, d}}, {"b2", {d}},
      {"V2", {d, in}}, {"c2", {d}},    {"W3", {d, d}}, {"b3", {d}},
      {"wg", {d}},     {"bg", {1}},    {"W4", {p, d}}, {"b4", {p}},
  };
  std::size_t offset = 0;
  for (auto& s : segs) {
    s.offset = offset;
    offset += s.size();
  }
  return segs;
}

std::size_t mechnet_param_size(const MechNetShape& shape) {
  const auto segs = mechnet_segments(shape);
  return segs.back().offset + segs.back().size();
}

const Segment& find_segment(const std::vector<Segment>& segments, const std::string& name) {
  for (const auto& s : segments)
    if (s.name == name) return s;
  fail(ErrorCode::InvalidArgument, "no parameter segment named " + name);
}

std::vector<double> init_params(const MechNetShape& shape, std::uint64_t seed) {
  const auto segs = mechnet_segments(shape);
  std::vector<double> theta(segs.back().offset + segs.back().size(), 0.0);
  std::mt19937_64 rng(seed);
  for (const auto& s : segs) {
    // Vectors that multiply the hidden state are weights too (wg).
    const bool weight = s.dims.size() == 2 || s.name == "wg";
    if (!weight) continue;
    const double fan_in = static_cast<double>(s.dims.size() == 2 ? s.dims[1] : s.dims[0]);
    std::uniform_real_distribution<double> u(-1.0 / std::sqrt(fan_in), 1.0 / std::sqrt(fan_in));
    for (std::size_t i = 0; i < s.size(); ++i) theta[s.offset + i] = u(rng);
  }
  return theta;
}

NeuralMechanism::NeuralMechanism(MechNetShape shape)
    : shape_(shape), segments_(mechnet_segments(shape)) {
  size_ = segments_.back().offset + segments_.back().size();
  const auto A = static_cast<std::size_t>(shape_.A);
  cumsum_.assign(A * (A - 1), 0.0);
  for (std::size_t i = 0; i < A; ++i)
    for (std::size_t j = 0; j < i; ++j) cumsum_[i * (A - 1) + j] = 1.0;
}

MechanismOutput NeuralMechanism::evaluate(ad::Tape& tape, ad::Var theta, int h, ad::Var nu,
                                          ad::Var remaining) const {
  require(theta.size() == size_, "mechnet: parameter vector has wrong size");
  require(h >= 0 && h < shape_.H, "mechnet: round out of range");
  require(nu.size() == static_cast<std::size_t>(shape_.A), "mechnet: bid distribution size");
  require(remaining.size() == 1, "mechnet: remaining goods must be scalar");
  if (remaining.scalar() < 0.0) fail(ErrorCode::InvalidArgument, "mechnet: remaining goods negative");

  const auto d = static_cast<std::size_t>(shape_.d_hidden);
  const auto in = static_cast<std::size_t>(shape_.input_size());
  const auto A = static_cast<std::size_t>(shape_.A);
  auto seg = [&](const char* name) {
    const auto& s = find_segment(segments_, name);
    return tape.slice(theta, s.offset, s.size());
  };

  std::vector<double> onehot(static_cast<std::size_t>(shape_.H), 0.0);
  onehot[static_cast<std::size_t>(h)] = 1.0;
  std::vector<ad::Var> parts{tape.constant(onehot), nu, remaining};
  ad::Var x = tape.concat(parts);

  ad::Var h1 = tape.relu(tape.add(tape.matvec(seg("W1"), x, d, in), seg("b1")));
  ad::Var pre2 = tape.add(tape.add(tape.matvec(seg("W2"), h1, d, d), seg("b2")),
                          tape.add(tape.matvec(seg("V2"), x, d, in), seg("c2")));
  ad::Var y = tape.relu(pre2);

  ad::Var gate = tape.sigmoid(tape.add(tape.sum(tape.mul(seg("wg"), y)), seg("bg")));
  ad::Var alpha = tape.mul(remaining, gate);

  ad::Var h3 = tape.add(tape.relu(tape.add(tape.matvec(seg("W3"), y, d, d), seg("b3"))), y);
  ad::Var incr = tape.scale(tape.sigmoid(tape.add(tape.matvec(seg("W4"), h3, A - 1, d), seg("b4"))),
                            1.0 / static_cast<double>(A - 1));
  ad::Var payments = tape.matvec(tape.constant(cumsum_), incr, A, A - 1);
  return {alpha, payments};
}

MechanismValues mech_forward(const MechNetShape& shape, std::span<const double> params, int h,
                             std::span<const double> nu, double remaining) {
  NeuralMechanism m(shape);
  return evaluate_mechanism(m, params, h, nu, remaining);
}

}  // namespace mfid
