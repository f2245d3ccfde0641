#pragma once

// Finite-difference suite over every hand-written backward pass, at toy sizes.

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "metammf/model.hpp"
#include "metammf/params.hpp"
#include "metammf/training.hpp"

namespace metammf {

struct GradGroupResult {
  std::string group;
  double max_rel_error = 0.0;
  std::size_t parameters = 0;
  bool pass = false;
};

// Groups, in order: linalg.mode3_contract, linalg.cp_contract,
// linalg.mode3_apply, linalg.cp_apply, fusion.static, fusion.dynamic-full,
// fusion.dynamic-cp, fusion.dynamic-no-static, heads.gcn_propagate,
// training.bpr-mf, training.bpr-gcn.
//
// `negate_group` names a group whose analytic gradient is sign-flipped
// before comparison; the harness uses it to confirm failures are caught.
std::vector<GradGroupResult> run_gradient_suite(std::uint64_t seed, double rtol = 1e-4,
                                                std::string_view negate_group = {});

Vector flatten(const std::vector<ConstParamView>& params);
Vector flatten(const std::vector<ParamView>& params);
void assign(const std::vector<ParamView>& params, std::span<const double> values);

// Maximum relative finite-difference error of the full BPR objective for
// every parameter of `model` on `batch`.
double check_objective_gradient(const Model& model, const Matrix& features, const InteractionGraph& graph,
                                std::span<const Triple> batch, double lambda, double step = 1e-5);

}  // namespace metammf
