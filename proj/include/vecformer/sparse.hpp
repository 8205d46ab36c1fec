#pragma once

// CSR matrix with fixed topology. Values may carry weights (e.g. normalized
// adjacency); the structure itself is never differentiated.

#include <cstdint>
#include <memory>
#include <vector>

namespace vecformer {

struct Csr {
    std::int64_t n_rows = 0;
    std::int64_t n_cols = 0;
    std::vector<std::int64_t> row_ptr;  // size n_rows + 1
    std::vector<std::int64_t> col_idx;
    std::vector<double> vals;           // parallel to col_idx

    std::int64_t nnz() const { return static_cast<std::int64_t>(col_idx.size()); }

    // Sorted-unique (row, col, val) triplets expected; duplicates are the
    // caller's bug and are rejected upstream.
    static std::shared_ptr<const Csr> from_triplets(std::int64_t n_rows, std::int64_t n_cols,
                                                    std::vector<std::int64_t> rows,
                                                    std::vector<std::int64_t> cols,
                                                    std::vector<double> vals);

    std::shared_ptr<const Csr> transposed() const;

    bool has_entry(std::int64_t r, std::int64_t c) const;  // binary search within row
};

using CsrPtr = std::shared_ptr<const Csr>;

}  // namespace vecformer
