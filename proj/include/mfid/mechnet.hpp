#pragma once

// Residual network mechanism. Input x = [one-hot round; active bid
// distribution; remaining goods]. A two-layer relu base with the input
// injected again in the second layer produces y; the allocation head is
// r * sigmoid(w_g . y + b_g) and the payment head accumulates nonnegative
// increments from a residual block on y, so payments start at 0 and never
// decrease in the bid.

#include <cstdint>
#include <string>
#include <vector>

#include "mfid/auction.hpp"

namespace mfid {

struct MechNetShape {
  int H = 4;
  int A = 20;
  int d_hidden = 64;

  int input_size() const { return H + A + 1; }
};

struct Segment {
  std::string name;
  std::vector<std::size_t> dims;
  std::size_t offset = 0;

  std::size_t size() const;
};

void validate(const MechNetShape& shape);
std::vector<Segment> mechnet_segments(const MechNetShape& shape);
std::size_t mechnet_param_size(const MechNetShape& shape);
const Segment& find_segment(const std::vector<Segment>& segments, const std::string& name);

/// Weights uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)], biases zero.
std::vector<double> init_params(const MechNetShape& shape, std::uint64_t seed);

class NeuralMechanism final : public Mechanism {
 public:
  explicit NeuralMechanism(MechNetShape shape);

  const MechNetShape& shape() const { return shape_; }
  const std::vector<Segment>& segments() const { return segments_; }
  std::size_t param_size() const override { return size_; }
  MechanismOutput evaluate(ad::Tape& tape, ad::Var theta, int h, ad::Var nu,
                           ad::Var remaining) const override;
  std::string name() const override { return "neural"; }

 private:
  MechNetShape shape_;
  std::vector<Segment> segments_;
  std::size_t size_ = 0;
  std::vector<double> cumsum_;  // [A x (A-1)], 1 where column < row
};

MechanismValues mech_forward(const MechNetShape& shape, std::span<const double> params, int h,
                             std::span<const double> nu, double remaining);

}  // namespace mfid
