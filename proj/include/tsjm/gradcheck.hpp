#pragma once

// Central finite-difference checks of every analytic gradient in the library.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace tsjm {

struct GradcheckConfig {
    double eps = 1e-5;
    std::size_t instances = 50;
    std::uint64_t seed = 0;
};

struct SuiteResult {
    std::string suite;       // e.g. "otm/ota_loss_grad"
    double max_rel_error = 0.0;
    std::size_t instances = 0;
};

/// ||analytic - numeric|| / max(||analytic||, ||numeric||, 1e-12)
double relative_error(std::span<const double> analytic, std::span<const double> numeric);

/// Central differences of f at x, one coordinate at a time.
std::vector<double> numeric_gradient(const std::function<double(std::span<const double>)>& f,
                                     std::span<const double> x, double eps);

SuiteResult check_ota_loss_grad(const GradcheckConfig& cfg);
SuiteResult check_km_loss_grad(const GradcheckConfig& cfg);
SuiteResult check_infonce_grad(const GradcheckConfig& cfg);
SuiteResult check_adapter_backward(const GradcheckConfig& cfg);
/// adapter -> cross-attention similarity -> InfoNCE, w.r.t. adapter parameters.
SuiteResult check_mcl_chain(const GradcheckConfig& cfg);
/// Full trainer objective w.r.t. both adapters, alignment/matching frozen.
SuiteResult check_trainer_grad(const GradcheckConfig& cfg);

std::vector<SuiteResult> run_all_gradchecks(const GradcheckConfig& cfg);

}  // namespace tsjm
