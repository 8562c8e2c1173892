#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "rapose/autodiff.hpp"

namespace rapose {

enum class GradScope { ops, ram, gpr, full };

std::optional<GradScope> parse_grad_scope(const std::string& text);
std::string to_string(GradScope scope);

/// Worst relative error over the sampled elements of one input tensor.
struct GradCheckEntry {
    std::string group;  // operator or module under test
    std::string name;   // tensor within the group
    double max_rel_error = 0;
    std::size_t checked = 0;
    bool passed = true;
};

struct GradCheckReport {
    double tolerance = 0;
    std::vector<GradCheckEntry> entries;

    bool passed() const;
    std::vector<std::string> failures() const;  // "group/name" of failing entries
};

struct GradCheckOptions {
    double tolerance = 1e-4;
    double step = 1e-5;
    std::size_t samples_per_tensor = 24;  // all elements when the tensor is smaller
    std::uint64_t seed = 0;
};

/// Builds the function under test from one Var per input tensor.
using GradFn = std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&)>;

/// Compares reverse-mode gradients of sum(f(inputs) * R), with R a fixed random
/// tensor, against central differences on a sample of input elements. The
/// tensors are perturbed in place and restored.
std::vector<GradCheckEntry> check_gradients(const std::string& group, std::vector<Tensor<double>*> inputs,
                                            const std::vector<std::string>& names, const GradFn& f,
                                            const GradCheckOptions& opt);

/// Built-in suites. Tolerances: 1e-4 for ops, ram and gpr; 1e-3 for full.
GradCheckReport run_gradcheck(GradScope scope, std::uint64_t seed = 0);

double default_tolerance(GradScope scope);

}  // namespace rapose
