#pragma once

#include <fstream>
#include <string>

#include <json.hpp>

#include "sbd/errors.hpp"
#include "sbd/tensor.hpp"

namespace sbd {

inline nlohmann::json tensor_to_json(const Tensor& t) {
    nlohmann::json j;
    j["shape"] = {t.rows(), t.cols()};
    j["data"] = t.data();
    return j;
}

inline Tensor tensor_from_json(const nlohmann::json& j) {
    auto shape = j.at("shape").get<std::vector<int>>();
    if (shape.size() != 2) throw invalid_input("tensor: shape must have rank 2");
    Tensor t(shape[0], shape[1]);
    auto data = j.at("data").get<std::vector<double>>();
    if (data.size() != t.size()) throw invalid_input("tensor: data length does not match shape");
    t.data() = std::move(data);
    return t;
}

inline void write_json_file(const nlohmann::json& j, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw invalid_input("cannot write file: " + path);
    out << j.dump(2) << "\n";
}

inline nlohmann::json read_json_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw invalid_input("cannot open file: " + path);
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw invalid_input(path + ": corrupt JSON: " + e.what());
    }
}

} // namespace sbd
