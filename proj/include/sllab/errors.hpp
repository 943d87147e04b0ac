#pragma once

#include <stdexcept>
#include <string>

namespace sllab {

// Violated preconditions, shape mismatches, malformed inputs. CLI maps this to exit 1.
struct contract_error : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Non-finite values or failed numerical procedures. CLI maps this to exit 2.
struct numeric_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw contract_error(msg);
}

}  // namespace sllab
