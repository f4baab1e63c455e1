#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace tmlecom {

/// Column store of named numeric vectors with equal length.
class Frame {
public:
    Frame() = default;
    explicit Frame(std::size_t n_rows) : n_rows_(n_rows) {}

    std::size_t n_rows() const noexcept { return n_rows_; }
    std::size_t n_cols() const noexcept { return names_.size(); }
    const std::vector<std::string>& names() const noexcept { return names_; }

    bool has(std::string_view name) const;
    std::span<const double> col(std::string_view name) const;
    std::span<double> col_mut(std::string_view name);

    /// Adds or replaces a column. Length must equal n_rows() unless the frame is empty.
    void set(const std::string& name, std::vector<double> values);

    /// Rows selected in the given order.
    Frame take(std::span<const std::size_t> rows) const;

    /// Concatenates `copies` stacked copies of this frame.
    Frame repeat(std::size_t copies) const;

private:
    std::size_t n_rows_ = 0;
    std::vector<std::string> names_;
    std::vector<std::vector<double>> cols_;
    std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace tmlecom
