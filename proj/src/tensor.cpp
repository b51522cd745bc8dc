#include "ssmri/tensor.hpp"
