#include "rhrn/parameter.hpp"

namespace rhrn {

template class ParameterTable<float>;
template class ParameterTable<double>;

}  // namespace rhrn
