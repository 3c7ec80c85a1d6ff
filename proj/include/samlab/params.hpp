#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "samlab/error.hpp"
#include "samlab/tensor.hpp"

namespace samlab {

/// Named, ordered view of all trainable parameters. Entries are kept sorted
/// lexicographically by name, which fixes the flat layout used by every
/// norm/axpy style operation in the library.
class ParamVector {
public:
    struct Entry {
        std::string name;
        Tensor tensor;
    };

    ParamVector() = default;

    void add(std::string name, Tensor tensor) {
        auto it = lower_bound(name);
        if (it != entries_.end() && it->name == name)
            throw ValidationError("duplicate parameter name: " + name);
        total_len_ += tensor.numel();
        entries_.insert(it, Entry{std::move(name), std::move(tensor)});
    }

    const std::vector<Entry>& entries() const { return entries_; }
    std::vector<Entry>& entries() { return entries_; }
    size_t size() const { return entries_.size(); }
    long long total_len() const { return total_len_; }

    const Tensor& at(const std::string& name) const {
        auto it = lower_bound(name);
        if (it == entries_.end() || it->name != name)
            throw UsageError("no parameter named " + name);
        return it->tensor;
    }
    Tensor& at(const std::string& name) {
        auto it = lower_bound(name);
        if (it == entries_.end() || it->name != name)
            throw UsageError("no parameter named " + name);
        return it->tensor;
    }

    /// Same names, shapes, and order.
    bool congruent_with(const ParamVector& o) const {
        if (entries_.size() != o.entries_.size()) return false;
        for (size_t i = 0; i < entries_.size(); ++i) {
            if (entries_[i].name != o.entries_[i].name) return false;
            if (entries_[i].tensor.shape != o.entries_[i].tensor.shape) return false;
        }
        return true;
    }

    /// Zero-filled copy of this structure.
    ParamVector zeros_like() const {
        ParamVector z;
        z.entries_.reserve(entries_.size());
        for (const auto& e : entries_)
            z.entries_.push_back({e.name, Tensor::zeros(e.tensor.shape)});
        z.total_len_ = total_len_;
        return z;
    }

    std::vector<double> flatten() const {
        std::vector<double> flat;
        flat.reserve(static_cast<size_t>(total_len_));
        for (const auto& e : entries_)
            flat.insert(flat.end(), e.tensor.data.begin(), e.tensor.data.end());
        return flat;
    }

    static ParamVector unflatten(std::span<const double> flat, const ParamVector& tmpl) {
        if (static_cast<long long>(flat.size()) != tmpl.total_len()) {
            std::ostringstream os;
            os << "unflatten length mismatch: got " << flat.size() << ", template expects "
               << tmpl.total_len();
            throw ValidationError(os.str());
        }
        ParamVector out = tmpl;
        size_t pos = 0;
        for (auto& e : out.entries_) {
            std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(pos), e.tensor.data.size(),
                        e.tensor.data.begin());
            pos += e.tensor.data.size();
        }
        return out;
    }

private:
    std::vector<Entry>::const_iterator lower_bound(const std::string& name) const {
        return std::lower_bound(entries_.begin(), entries_.end(), name,
                                [](const Entry& e, const std::string& n) { return e.name < n; });
    }
    std::vector<Entry>::iterator lower_bound(const std::string& name) {
        return std::lower_bound(entries_.begin(), entries_.end(), name,
                                [](const Entry& e, const std::string& n) { return e.name < n; });
    }

    std::vector<Entry> entries_;
    long long total_len_ = 0;
};

/// Gradients share the ParamVector structure: one scalar per parameter scalar,
/// congruent names/shapes/order.
using GradVector = ParamVector;

inline void require_congruent(const ParamVector& a, const ParamVector& b, const char* what) {
    if (!a.congruent_with(b)) throw ValidationError(std::string(what) + ": structures not congruent");
}

// Flat-view vector math used by the SAM and sharpness machinery.

inline double l2_norm(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

inline double l2_norm(const ParamVector& v) {
    double s = 0.0;
    for (const auto& e : v.entries())
        for (double x : e.tensor.data) s += x * x;
    return std::sqrt(s);
}

inline double dot(const ParamVector& a, const ParamVector& b) {
    require_congruent(a, b, "dot");
    double s = 0.0;
    for (size_t i = 0; i < a.entries().size(); ++i) {
        const auto& x = a.entries()[i].tensor.data;
        const auto& y = b.entries()[i].tensor.data;
        for (size_t k = 0; k < x.size(); ++k) s += x[k] * y[k];
    }
    return s;
}

/// dst += alpha * src, entrywise over congruent structures.
inline void add_scaled(ParamVector& dst, const ParamVector& src, double alpha) {
    require_congruent(dst, src, "add_scaled");
    for (size_t i = 0; i < dst.entries().size(); ++i) {
        auto& d = dst.entries()[i].tensor.data;
        const auto& s = src.entries()[i].tensor.data;
        for (size_t k = 0; k < d.size(); ++k) d[k] += alpha * s[k];
    }
}

inline void scale_in_place(ParamVector& v, double alpha) {
    for (auto& e : v.entries())
        for (double& x : e.tensor.data) x *= alpha;
}

inline bool all_finite(const ParamVector& v, std::string* offender = nullptr) {
    for (const auto& e : v.entries())
        for (double x : e.tensor.data)
            if (!std::isfinite(x)) {
                if (offender) *offender = e.name;
                return false;
            }
    return true;
}

}  // namespace samlab
