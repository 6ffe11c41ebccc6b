#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace unistage {

// Output of one program execution on either backend.
struct RunResult {
    std::vector<std::string> lines;  // standard-output rows, in emission order
    std::vector<std::string> aux;    // side-channel lines (checkpoints, diagnostics)
    std::map<std::string, int64_t> counters;
    // seconds; keys: load, export, process, total
    std::map<std::string, double> timings;
    int64_t alloc_bytes = 0;

    double timing(const std::string& phase) const {
        auto it = timings.find(phase);
        return it == timings.end() ? 0.0 : it->second;
    }
    int64_t counter(const std::string& name) const {
        auto it = counters.find(name);
        return it == counters.end() ? 0 : it->second;
    }

    std::vector<std::vector<std::string>> rows() const {
        std::vector<std::vector<std::string>> out;
        for (const auto& l : lines) {
            std::vector<std::string> cells;
            std::size_t start = 0;
            while (true) {
                std::size_t c = l.find(',', start);
                cells.push_back(l.substr(start, c == std::string::npos ? std::string::npos : c - start));
                if (c == std::string::npos) break;
                start = c + 1;
            }
            out.push_back(std::move(cells));
        }
        return out;
    }
};

}  // namespace unistage
