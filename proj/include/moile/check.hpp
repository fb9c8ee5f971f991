// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace moile {

// Thrown when a caller breaks an operation's precondition.
struct ContractViolation : std::logic_error {
    using std::logic_error::logic_error;
};

// Thrown when training hits non-finite values.
struct NumericalAbort : std::runtime_error {
    using std::runtime_error::runtime_error;
};

[[noreturn]] inline void contract_fail(const std::string& msg) {
    throw ContractViolation(msg);
}

} // namespace moile

#define MOILE_REQUIRE(cond, msg)                 \
    do {                                         \
        if (!(cond)) ::moile::contract_fail(msg); \
    } while (0)
