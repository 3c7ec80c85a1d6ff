#pragma once

#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace samlab {

/// Base class for all library errors. Anything derived from this that is not
/// a ValidationError is a runtime failure (CLI exit code 2).
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Invalid configuration, spec, or input data (CLI exit code 1).
class ValidationError : public Error {
public:
    explicit ValidationError(const std::string& msg) : Error(msg) {}
};

/// Shape mismatch between operands. Carries the operation name and both shapes.
class ShapeError : public Error {
public:
    ShapeError(std::string op, std::vector<long long> lhs, std::vector<long long> rhs)
        : Error(format(op, lhs, rhs)), op_(std::move(op)), lhs_(std::move(lhs)), rhs_(std::move(rhs)) {}

    const std::string& op() const { return op_; }
    const std::vector<long long>& lhs_shape() const { return lhs_; }
    const std::vector<long long>& rhs_shape() const { return rhs_; }

private:
    static std::string format(const std::string& op, const std::vector<long long>& a,
                              const std::vector<long long>& b) {
        std::ostringstream os;
        os << "shape mismatch in " << op << ": " << render(a) << " vs " << render(b);
        return os.str();
    }
    static std::string render(const std::vector<long long>& s) {
        std::ostringstream os;
        os << "(";
        for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
        os << ")";
        return os.str();
    }

    std::string op_;
    std::vector<long long> lhs_, rhs_;
};

/// A loss, gradient, or intermediate value became NaN/Inf. Carries context
/// (parameter name, step number, shard index) assembled by the thrower.
class NonFiniteError : public Error {
public:
    explicit NonFiniteError(const std::string& context)
        : Error("non-finite value: " + context), context_(context) {}
    const std::string& context() const { return context_; }

private:
    std::string context_;
};

/// API misuse, e.g. querying gradients before running backward.
class UsageError : public Error {
public:
    explicit UsageError(const std::string& msg) : Error(msg) {}
};

/// Filesystem / stream failures.
class IoError : public Error {
public:
    explicit IoError(const std::string& msg) : Error(msg) {}
};

}  // namespace samlab
