#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "edge/tensor.hpp"

namespace edge {

/// Runs `edge <command> ...` with `args` excluding the program name. Results
/// go to `out`, diagnostics to `err`. Returns the process exit code: 0 on
/// success, 1 on data/config/runtime errors, 2 on usage errors.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Reflect-pads a C×H×W tensor on the bottom/right so both sides become
/// multiples of `multiple`.
Tensor reflect_pad_to_multiple(const Tensor& x, int multiple);

/// Top-left h×w window of a C×H×W tensor.
Tensor crop_top_left(const Tensor& x, int h, int w);

}  // namespace edge
