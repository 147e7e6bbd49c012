#include "nvc/adam.hpp"
#include "nvc/gradcheck.hpp"

// Anchor TU: forces instantiation of the templated core for both scalars so
// interface breakage surfaces here rather than in whichever test includes it
// first.
namespace nvc {
template class Tensor<float>;
template class Tensor<double>;
}  // namespace nvc
