#include <csim/fp16.hpp>

#include <Eigen/Core>

namespace csim {

uint16_t float_to_half(float f) { return Eigen::numext::bit_cast<uint16_t>(Eigen::half(f)); }

float half_to_float(uint16_t h) { return static_cast<float>(Eigen::numext::bit_cast<Eigen::half>(h)); }

}  // namespace csim
