#pragma once

// Shared vocabulary: linear-algebra aliases, parameter vectors, error types
// and seeded random streams.

#include <Eigen/Dense>

#include <cstdint>
#include <initializer_list>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace misspec {

using Index = Eigen::Index;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// ---------------------------------------------------------------------------
// Errors. Each carries the CLI exit status it maps to.

class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what, int exit_code = 3)
        : std::runtime_error(what), exit_code_(exit_code) {}
    int exit_code() const noexcept { return exit_code_; }

private:
    int exit_code_;
};

/// Malformed configuration or command-line usage.
class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& what) : Error(what, 2) {}
};

/// A parameter vector outside the admissible set of its model family.
class DomainError : public Error {
public:
    explicit DomainError(const std::string& what) : Error(what, 2) {}
};

/// Singular factorizations, failed quadrature and similar numerical breakdowns.
class NumericalError : public Error {
public:
    explicit NumericalError(const std::string& what) : Error(what, 3) {}
};

/// Not enough samples for the requested statistic.
class InsufficientData : public Error {
public:
    InsufficientData(const std::string& what, std::size_t required)
        : Error(what, 3), required_(required) {}
    std::size_t required() const noexcept { return required_; }

private:
    std::size_t required_;
};

// ---------------------------------------------------------------------------
// ParamVector

struct ParamVector {
    Vector values;
    std::vector<std::string> labels;

    ParamVector() = default;
    ParamVector(Vector v, std::vector<std::string> l) : values(std::move(v)), labels(std::move(l)) {
        if (static_cast<std::size_t>(values.size()) != labels.size())
            throw ConfigError("ParamVector: " + std::to_string(values.size()) + " values but " +
                              std::to_string(labels.size()) + " labels");
    }
    ParamVector(std::initializer_list<double> v, std::vector<std::string> l)
        : ParamVector(Eigen::Map<const Vector>(v.begin(), static_cast<Index>(v.size())), std::move(l)) {}

    Index size() const { return values.size(); }
    double operator[](Index i) const { return values[i]; }
    double& operator[](Index i) { return values[i]; }

    /// Position of a label, or throws ConfigError.
    Index index_of(const std::string& label) const {
        for (std::size_t i = 0; i < labels.size(); ++i)
            if (labels[i] == label) return static_cast<Index>(i);
        throw ConfigError("unknown parameter '" + label + "'");
    }
    double at(const std::string& label) const { return values[index_of(label)]; }

    ParamVector with(const std::string& label, double v) const {
        ParamVector out = *this;
        out.values[index_of(label)] = v;
        return out;
    }
};

inline void require_same_shape(const ParamVector& a, const ParamVector& b) {
    if (a.size() != b.size())
        throw ConfigError("ParamVector dimension mismatch: " + std::to_string(a.size()) + " vs " +
                          std::to_string(b.size()));
}

inline ParamVector operator+(const ParamVector& a, const ParamVector& b) {
    require_same_shape(a, b);
    return {a.values + b.values, a.labels};
}

inline ParamVector operator-(const ParamVector& a, const ParamVector& b) {
    require_same_shape(a, b);
    return {a.values - b.values, a.labels};
}

// ---------------------------------------------------------------------------
// Random streams.
//
// Every draw in the toolkit comes from a stream identified by
// (base seed, replicate index, stream kind). Streams are independent
// mt19937_64 engines seeded through splitmix64 mixing, so replicate m of an
// experiment sees the same draws no matter how many replicates run or in
// which order.

using Rng = std::mt19937_64;

enum class Stream : std::uint64_t {
    initial_state = 1,
    state_noise = 2,
    observation_noise = 3,
    spot = 4,
    start_jitter = 5,
    generic = 6,
};

inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t replicate, std::uint64_t stream) {
    std::uint64_t s = base;
    std::uint64_t h = splitmix64(s);
    s = h ^ (replicate * 0xD1B54A32D192ED03ULL);
    h = splitmix64(s);
    s = h ^ (stream * 0x8CB92BA72F3D8DD7ULL);
    return splitmix64(s);
}

inline Rng make_stream(std::uint64_t base, std::uint64_t replicate, Stream kind) {
    return Rng(derive_seed(base, replicate, static_cast<std::uint64_t>(kind)));
}

inline Vector standard_normal(Rng& rng, Index dim) {
    std::normal_distribution<double> n01(0.0, 1.0);
    Vector v(dim);
    for (Index i = 0; i < dim; ++i) v[i] = n01(rng);
    return v;
}

inline void symmetrize(Matrix& m) { m = 0.5 * (m + m.transpose()).eval(); }

}  // namespace misspec
