#pragma once

// Shared fixtures: scratch directories, CSV writing, and running one graph
// on both backends.

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <unistd.h>

#include "unistage/backend/interpreter.hpp"
#include "unistage/backend/toolchain.hpp"
#include "unistage/core/optimize.hpp"

namespace testsupport {

// Set US_SKIP_COMPILED=1 to run only the interpreter halves of the suites.
inline bool compiled_enabled() {
    const char* v = std::getenv("US_SKIP_COMPILED");
    return !(v && *v && std::string(v) != "0");
}

class TempDir {
public:
    explicit TempDir(const std::string& tag = "t") {
        static std::atomic<int> n{0};
        path_ = std::filesystem::temp_directory_path() /
                ("unistage-test-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(n++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::string file(const std::string& name) const { return (path_ / name).string(); }
    std::string write(const std::string& name, const std::string& text) const {
        std::string p = file(name);
        std::ofstream(p, std::ios::binary) << text;
        return p;
    }

private:
    std::filesystem::path path_;
};

// Fast-compiling flags for suites that build hundreds of small programs.
inline unistage::ToolchainConfig quick_toolchain() {
    unistage::ToolchainConfig tc;
    tc.flags = {"-O0", "-std=c99", "-ffp-contract=off"};
    return tc;
}

struct BothResults {
    unistage::RunResult interp;
    unistage::RunResult compiled;
    bool have_compiled = false;
};

inline BothResults run_both(const unistage::IrGraph& g, const unistage::ToolchainConfig& tc = quick_toolchain()) {
    BothResults r;
    unistage::IrGraph o = unistage::optimize(g);
    r.interp = unistage::interpret(o);
    if (compiled_enabled()) {
        r.compiled = unistage::compile_and_run(unistage::emit(o), {}, tc);
        r.have_compiled = true;
    }
    return r;
}

inline std::size_t count_ops(const unistage::IrGraph& g, unistage::Op op) {
    std::size_t n = 0;
    for (auto& nd : g.nodes()) n += nd.op == op;
    return n;
}

inline std::size_t count_root_ops(const unistage::IrGraph& g, unistage::Op op) {
    std::size_t n = 0;
    for (auto& nd : g.nodes()) n += nd.op == op && nd.scope == g.root();
    return n;
}

inline std::size_t count_substr(const std::string& s, const std::string& needle) {
    std::size_t n = 0;
    for (std::size_t p = s.find(needle); p != std::string::npos; p = s.find(needle, p + needle.size())) ++n;
    return n;
}

}  // namespace testsupport
