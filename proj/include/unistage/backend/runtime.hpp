#pragma once

// Run-time support shared by the interpreter and by staging-time helpers.
// The emitted C prelude implements the same algorithms line for line.

#include <cerrno>
#include <condition_variable>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <mutex>
#include <optional>
#include <queue>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "unistage/core/error.hpp"

namespace unistage::runtime {

inline uint64_t fnv1a(const uint64_t* keys, std::size_t n) {
    uint64_t h = 14695981039346656037ull;
    for (std::size_t i = 0; i < n; ++i) {
        uint64_t k = keys[i];
        for (int b = 0; b < 8; ++b) {
            h ^= (k >> (8 * b)) & 0xffu;
            h *= 1099511628211ull;
        }
    }
    return h;
}

inline uint64_t f64_bits(double d) {
    uint64_t u;
    std::memcpy(&u, &d, sizeof u);
    return u;
}
inline double bits_f64(uint64_t u) {
    double d;
    std::memcpy(&d, &u, sizeof d);
    return d;
}

// Open addressing, power-of-two capacity, linear probing, FNV-1a over the
// key bytes, growth at load factor 0.7. Maps a key tuple to a dense group
// index assigned in first-seen order.
class GroupHashMap {
public:
    explicit GroupHashMap(std::size_t nkeys) : nkeys_(nkeys), slots_(16, -1) {}

    std::size_t nkeys() const { return nkeys_; }
    int64_t size() const { return static_cast<int64_t>(keys_.size() / nkeys_); }

    int64_t insert(const uint64_t* key) {
        if (int64_t g = find(key); g >= 0) return g;
        if ((static_cast<uint64_t>(size()) + 1) * 10 > slots_.size() * 7) grow();
        int64_t g = size();
        keys_.insert(keys_.end(), key, key + nkeys_);
        place(g);
        return g;
    }

    int64_t find(const uint64_t* key) const {
        std::size_t mask = slots_.size() - 1;
        std::size_t i = fnv1a(key, nkeys_) & mask;
        while (true) {
            int64_t g = slots_[i];
            if (g < 0) return -1;
            if (std::memcmp(&keys_[static_cast<std::size_t>(g) * nkeys_], key, nkeys_ * sizeof(uint64_t)) == 0) return g;
            i = (i + 1) & mask;
        }
    }

    uint64_t key(int64_t group, std::size_t j) const { return keys_.at(static_cast<std::size_t>(group) * nkeys_ + j); }
    std::size_t capacity() const { return slots_.size(); }

private:
    std::size_t nkeys_;
    std::vector<int64_t> slots_;
    std::vector<uint64_t> keys_;

    void place(int64_t g) {
        std::size_t mask = slots_.size() - 1;
        std::size_t i = fnv1a(&keys_[static_cast<std::size_t>(g) * nkeys_], nkeys_) & mask;
        while (slots_[i] >= 0) i = (i + 1) & mask;
        slots_[i] = g;
    }
    void grow() {
        slots_.assign(slots_.size() * 2, -1);
        for (int64_t g = 0; g < size(); ++g) place(g);
    }
};

// ---- CSV ----------------------------------------------------------------

enum class FieldKind { Int64, Float64, Dict };

inline std::vector<std::string_view> split_fields(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        std::size_t c = line.find(',', start);
        if (c == std::string_view::npos) {
            out.push_back(line.substr(start));
            return out;
        }
        out.push_back(line.substr(start, c - start));
        start = c + 1;
    }
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw RunError("cannot open input file '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Calls `row(fields, row_number)` for each data line. Lines are split on
// '\n' with a trailing '\r' removed; empty lines are skipped; with `header`
// the first line is skipped. Row numbers count data rows from 1.
template <class F>
void for_each_csv_row(std::string_view text, bool header, F&& row) {
    std::size_t pos = 0;
    int64_t rowno = 0;
    bool first = true;
    while (pos < text.size()) {
        std::size_t eol = text.find('\n', pos);
        if (eol == std::string_view::npos) eol = text.size();
        std::string_view line = text.substr(pos, eol - pos);
        pos = eol + 1;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (first && header) {
            first = false;
            continue;
        }
        first = false;
        if (line.empty()) continue;
        ++rowno;
        row(split_fields(line), rowno);
    }
}

inline std::string csv_error(int64_t row, std::size_t col, const char* what, std::string_view field) {
    return "row " + std::to_string(row) + ": " + what + " '" + std::string(field) + "' in column " +
           std::to_string(col + 1);
}

inline int64_t parse_i64(std::string_view f, int64_t row, std::size_t col) {
    std::string s(f);
    char* end = nullptr;
    errno = 0;
    long long v = std::strtoll(s.c_str(), &end, 10);
    if (s.empty() || *end != '\0' || errno == ERANGE) throw RunError(csv_error(row, col, "invalid int64", f));
    return static_cast<int64_t>(v);
}

inline double parse_f64(std::string_view f, int64_t row, std::size_t col) {
    std::string s(f);
    char* end = nullptr;
    double v = std::strtod(s.c_str(), &end);
    if (s.empty() || *end != '\0') throw RunError(csv_error(row, col, "invalid float64", f));
    return v;
}

// ---- bounded queue -------------------------------------------------------

// Blocking FIFO with a fixed capacity. Producers block while full; pop
// returns nullopt once the queue is closed and drained.
template <class T>
class BoundedQueue {
public:
    explicit BoundedQueue(std::size_t capacity) : capacity_(capacity) {
        if (capacity_ == 0) throw Error("queue capacity must be positive");
    }

    void push(T item) {
        std::unique_lock lk(m_);
        if (closed_) throw RunError("queue closed early: push after close");
        if (items_.size() >= capacity_) {
            ++blocked_pushes_;
            not_full_.wait(lk, [&] { return items_.size() < capacity_ || closed_; });
            if (closed_) throw RunError("queue closed early: push after close");
        }
        items_.push(std::move(item));
        if (items_.size() > max_depth_) max_depth_ = items_.size();
        not_empty_.notify_one();
    }

    std::optional<T> pop() {
        std::unique_lock lk(m_);
        not_empty_.wait(lk, [&] { return !items_.empty() || closed_; });
        if (items_.empty()) return std::nullopt;
        T item = std::move(items_.front());
        items_.pop();
        not_full_.notify_one();
        return item;
    }

    void close() {
        std::lock_guard lk(m_);
        closed_ = true;
        not_empty_.notify_all();
        not_full_.notify_all();
    }

    std::size_t capacity() const { return capacity_; }
    std::size_t blocked_pushes() const {
        std::lock_guard lk(m_);
        return blocked_pushes_;
    }
    std::size_t max_depth() const {
        std::lock_guard lk(m_);
        return max_depth_;
    }

private:
    std::size_t capacity_;
    mutable std::mutex m_;
    std::condition_variable not_full_, not_empty_;
    std::queue<T> items_;
    bool closed_ = false;
    std::size_t blocked_pushes_ = 0;
    std::size_t max_depth_ = 0;
};

}  // namespace unistage::runtime
