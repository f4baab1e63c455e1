#include "tmlecom/frame.hpp"

#include "tmlecom/error.hpp"

namespace tmlecom {

bool Frame::has(std::string_view name) const {
    return index_.find(std::string(name)) != index_.end();
}

std::span<const double> Frame::col(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) throw DataError("unknown column '" + std::string(name) + "'");
    return cols_[it->second];
}

std::span<double> Frame::col_mut(std::string_view name) {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) throw DataError("unknown column '" + std::string(name) + "'");
    return cols_[it->second];
}

void Frame::set(const std::string& name, std::vector<double> values) {
    if (names_.empty() && n_rows_ == 0) n_rows_ = values.size();
    if (values.size() != n_rows_) {
        throw DataError("column '" + name + "' has " + std::to_string(values.size()) +
                        " rows, expected " + std::to_string(n_rows_));
    }
    auto it = index_.find(name);
    if (it != index_.end()) {
        cols_[it->second] = std::move(values);
        return;
    }
    index_.emplace(name, names_.size());
    names_.push_back(name);
    cols_.push_back(std::move(values));
}

Frame Frame::take(std::span<const std::size_t> rows) const {
    Frame out(rows.size());
    for (std::size_t c = 0; c < names_.size(); ++c) {
        std::vector<double> v(rows.size());
        for (std::size_t i = 0; i < rows.size(); ++i) v[i] = cols_[c][rows[i]];
        out.set(names_[c], std::move(v));
    }
    return out;
}

Frame Frame::repeat(std::size_t copies) const {
    Frame out(n_rows_ * copies);
    for (std::size_t c = 0; c < names_.size(); ++c) {
        std::vector<double> v;
        v.reserve(n_rows_ * copies);
        for (std::size_t k = 0; k < copies; ++k) v.insert(v.end(), cols_[c].begin(), cols_[c].end());
        out.set(names_[c], std::move(v));
    }
    return out;
}

}  // namespace tmlecom
