#include "vecformer/sparse.hpp"

#include <algorithm>
#include <numeric>

#include "vecformer/errors.hpp"

namespace vecformer {

std::shared_ptr<const Csr> Csr::from_triplets(std::int64_t n_rows, std::int64_t n_cols,
                                              std::vector<std::int64_t> rows,
                                              std::vector<std::int64_t> cols,
                                              std::vector<double> vals) {
    if (rows.size() != cols.size() || rows.size() != vals.size())
        throw StructuralError("triplet arrays have mismatched lengths");
    const std::size_t nnz = rows.size();

    std::vector<std::size_t> order(nnz);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return rows[a] != rows[b] ? rows[a] < rows[b] : cols[a] < cols[b];
    });

    auto csr = std::make_shared<Csr>();
    csr->n_rows = n_rows;
    csr->n_cols = n_cols;
    csr->row_ptr.assign(static_cast<std::size_t>(n_rows) + 1, 0);
    csr->col_idx.resize(nnz);
    csr->vals.resize(nnz);

    for (std::size_t k = 0; k < nnz; ++k) {
        const std::int64_t r = rows[order[k]];
        const std::int64_t c = cols[order[k]];
        if (r < 0 || r >= n_rows || c < 0 || c >= n_cols)
            throw StructuralError("entry (" + std::to_string(r) + "," + std::to_string(c) +
                                  ") out of range for " + std::to_string(n_rows) + "x" +
                                  std::to_string(n_cols));
        if (k > 0 && rows[order[k - 1]] == r && cols[order[k - 1]] == c)
            throw StructuralError("duplicate entry (" + std::to_string(r) + "," + std::to_string(c) + ")");
        csr->col_idx[k] = c;
        csr->vals[k] = vals[order[k]];
        ++csr->row_ptr[static_cast<std::size_t>(r) + 1];
    }
    for (std::int64_t r = 0; r < n_rows; ++r)
        csr->row_ptr[static_cast<std::size_t>(r) + 1] += csr->row_ptr[static_cast<std::size_t>(r)];
    return csr;
}

std::shared_ptr<const Csr> Csr::transposed() const {
    std::vector<std::int64_t> rows, cols;
    std::vector<double> v;
    rows.reserve(col_idx.size());
    cols.reserve(col_idx.size());
    v.reserve(col_idx.size());
    for (std::int64_t r = 0; r < n_rows; ++r) {
        for (std::int64_t k = row_ptr[static_cast<std::size_t>(r)]; k < row_ptr[static_cast<std::size_t>(r) + 1]; ++k) {
            rows.push_back(col_idx[static_cast<std::size_t>(k)]);
            cols.push_back(r);
            v.push_back(vals[static_cast<std::size_t>(k)]);
        }
    }
    return from_triplets(n_cols, n_rows, std::move(rows), std::move(cols), std::move(v));
}

bool Csr::has_entry(std::int64_t r, std::int64_t c) const {
    const auto b = col_idx.begin() + static_cast<std::ptrdiff_t>(row_ptr[static_cast<std::size_t>(r)]);
    const auto e = col_idx.begin() + static_cast<std::ptrdiff_t>(row_ptr[static_cast<std::size_t>(r) + 1]);
    return std::binary_search(b, e, c);
}

}  // namespace vecformer
