#pragma once

#include <string>

#include "banditcert/params.hpp"
#include "json.hpp"

namespace banditcert::detail {

using nlohmann::json;

inline json matrix_to_json(const Matrix& m) {
    json rows = json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        json row = json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        rows.push_back(std::move(row));
    }
    return rows;
}

inline Matrix matrix_from_json(const json& j, int rows, int cols, const std::string& what) {
    if (!j.is_array() || static_cast<int>(j.size()) != rows)
        throw std::runtime_error(what + ": expected " + std::to_string(rows) + " rows");
    Matrix m(rows, cols);
    for (int r = 0; r < rows; ++r) {
        const json& row = j[static_cast<std::size_t>(r)];
        if (!row.is_array() || static_cast<int>(row.size()) != cols)
            throw std::runtime_error(what + ": row " + std::to_string(r) + " must have " +
                                     std::to_string(cols) + " entries");
        for (int c = 0; c < cols; ++c) m(r, c) = row[static_cast<std::size_t>(c)].get<double>();
    }
    return m;
}

inline json vector_to_json(const Vector& v) {
    json a = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
    return a;
}

inline Vector vector_from_json(const json& j, int size, const std::string& what) {
    if (!j.is_array() || static_cast<int>(j.size()) != size)
        throw std::runtime_error(what + ": expected " + std::to_string(size) + " entries");
    Vector v(size);
    for (int i = 0; i < size; ++i) v[i] = j[static_cast<std::size_t>(i)].get<double>();
    return v;
}

}  // namespace banditcert::detail
