#ifndef HETMOGP_HETMOGP_HPP
#define HETMOGP_HETMOGP_HPP

#include "hetmogp/config.hpp"
#include "hetmogp/data.hpp"
#include "hetmogp/dataset.hpp"
#include "hetmogp/errors.hpp"
#include "hetmogp/experiment.hpp"
#include "hetmogp/kernels.hpp"
#include "hetmogp/likelihoods.hpp"
#include "hetmogp/linalg.hpp"
#include "hetmogp/model.hpp"
#include "hetmogp/optimizers.hpp"
#include "hetmogp/random.hpp"
#include "hetmogp/theta.hpp"

#endif
