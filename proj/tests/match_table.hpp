#pragma once

#include <sstream>
#include <string>
#include <vector>

#include "floodvision/kg.hpp"
#include "floodvision/vlm.hpp"

namespace match_table {

struct Row {
    int line;
    std::string label, entity, tier;  // "-" when no match is expected
};

inline std::vector<Row> load(const std::string& path) {
    std::istringstream in(floodvision::vlm::read_file(path));
    std::vector<Row> rows;
    std::string line;
    for (int n = 1; std::getline(in, line); ++n) {
        if (line.starts_with("#")) continue;
        std::vector<std::string> f;
        std::size_t start = 0;
        for (std::size_t tab; (tab = line.find('\t', start)) != std::string::npos; start = tab + 1) {
            f.push_back(line.substr(start, tab - start));
        }
        f.push_back(line.substr(start));
        if (f.size() != 3) throw std::runtime_error(path + ":" + std::to_string(n) + ": expected 3 columns");
        rows.push_back({n, f[0], f[1], f[2]});
    }
    return rows;
}

/// Rows whose actual (entity, tier) differ from the table, as printable text.
inline std::vector<std::string> mismatches(const floodvision::kg::KnowledgeGraph& kg,
                                           const std::vector<Row>& rows) {
    std::vector<std::string> out;
    for (const auto& r : rows) {
        const auto m = floodvision::kg::match_entity(kg, r.label);
        const std::string entity = m ? m->entity.value : "-";
        const std::string tier = m ? std::string(floodvision::kg::to_string(m->tier)) : "-";
        if (entity != r.entity || tier != r.tier) {
            out.push_back("line " + std::to_string(r.line) + " '" + r.label + "': got " + entity + "/" + tier +
                          ", expected " + r.entity + "/" + r.tier);
        }
    }
    return out;
}

}  // namespace match_table
