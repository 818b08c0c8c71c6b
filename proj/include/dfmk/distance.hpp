#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <utility>
#include <vector>

namespace dfmk {

// Pairwise token distances for one codebook. Axiom: d(x, x1) = 0 iff x == x1,
// all entries finite and nonnegative. Symmetry is not required.
class DistanceMatrix {
public:
    DistanceMatrix(std::size_t s, std::vector<double> entries) : s_(s), d_(std::move(entries)) {
        if (s_ < 2) throw std::invalid_argument("DistanceMatrix: need at least 2 tokens");
        if (d_.size() != s_ * s_) throw std::invalid_argument("DistanceMatrix: entry count mismatch");
        for (std::size_t x = 0; x < s_; ++x) {
            for (std::size_t y = 0; y < s_; ++y) {
                const double v = d_[x * s_ + y];
                if (!std::isfinite(v) || v < 0.0)
                    throw std::invalid_argument("DistanceMatrix: non-finite or negative entry");
                if (x == y && v != 0.0)
                    throw std::invalid_argument("DistanceMatrix: nonzero diagonal");
                if (x != y && v <= 0.0)
                    throw std::invalid_argument("DistanceMatrix: zero off-diagonal entry");
            }
        }
    }

    // Squared Euclidean distances between per-token embedding vectors,
    // optionally l2-normalizing the embeddings first.
    static DistanceMatrix from_embeddings(const std::vector<std::vector<double>>& emb, bool l2_normalize) {
        const std::size_t s = emb.size();
        if (s < 2) throw std::invalid_argument("from_embeddings: need at least 2 tokens");
        const std::size_t dim = emb[0].size();
        std::vector<std::vector<double>> e = emb;
        for (auto& v : e) {
            if (v.size() != dim) throw std::invalid_argument("from_embeddings: ragged embeddings");
            if (l2_normalize) {
                double n2 = 0.0;
                for (double x : v) n2 += x * x;
                const double n = std::sqrt(n2);
                if (!(n > 0.0)) throw std::invalid_argument("from_embeddings: zero-norm embedding");
                for (double& x : v) x /= n;
            }
        }
        std::vector<double> d(s * s, 0.0);
        for (std::size_t x = 0; x < s; ++x) {
            for (std::size_t y = 0; y < s; ++y) {
                if (x == y) continue;
                double acc = 0.0;
                for (std::size_t k = 0; k < dim; ++k) {
                    const double diff = e[x][k] - e[y][k];
                    acc += diff * diff;
                }
                d[x * s + y] = acc;
            }
        }
        return DistanceMatrix(s, std::move(d));
    }

    std::size_t size() const { return s_; }
    double at(std::size_t x, std::size_t x1) const { return d_[x * s_ + x1]; }
    const std::vector<double>& entries() const { return d_; }

private:
    std::size_t s_;
    std::vector<double> d_; // row-major, d_[x*s + x1]
};

// Ordered list of per-codebook distance matrices with a shared vocabulary size.
class DistanceSet {
public:
    explicit DistanceSet(std::vector<DistanceMatrix> codebooks) : cbs_(std::move(codebooks)) {
        if (cbs_.empty()) throw std::invalid_argument("DistanceSet: need at least one codebook");
        for (const auto& d : cbs_) {
            if (d.size() != cbs_[0].size())
                throw std::invalid_argument("DistanceSet: vocabulary size mismatch across codebooks");
        }
    }

    std::size_t codebook_count() const { return cbs_.size(); }
    std::size_t vocab_size() const { return cbs_[0].size(); }
    const DistanceMatrix& operator[](std::size_t c) const { return cbs_[c]; }

private:
    std::vector<DistanceMatrix> cbs_;
};

} // namespace dfmk
