#pragma once

// Compiles a GeneratedProgram with an external C compiler and runs it.
//
// Configuration (first match wins): explicit ToolchainConfig fields, then
// environment variables US_CC, US_CFLAGS (space separated), US_WORKDIR, then
// an optional key=value file named by US_TOOLCHAIN_CONFIG (keys cc, cflags,
// workdir), then defaults (cc, -O2 -std=c99 -ffp-contract=off, system temp).

#include <sys/wait.h>
#include <unistd.h>

#include <array>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>

#include "unistage/backend/emit_c.hpp"
#include "unistage/backend/run_result.hpp"

namespace unistage {

struct ToolchainConfig {
    std::string compiler;             // empty: resolve from env/file/default
    std::vector<std::string> flags;   // empty: resolve from env/file/default
    std::string workdir;              // empty: resolve from env/file/default
    bool keep_files = false;
};

struct ResolvedToolchain {
    std::string compiler;
    std::vector<std::string> flags;
    std::filesystem::path workdir;
};

struct RunInputs {
    // Indexed by csv-load input number; overrides the embedded paths.
    std::vector<std::string> paths;
};

namespace toolchain_detail {

inline std::vector<std::string> split_words(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream in(s);
    std::string w;
    while (in >> w) out.push_back(w);
    return out;
}

inline std::map<std::string, std::string> read_config_file(const std::string& path) {
    std::map<std::string, std::string> kv;
    std::ifstream in(path);
    if (!in) throw EnvironmentError("cannot read toolchain config '" + path + "'");
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return kv;
}

inline std::string shell_quote(const std::string& s) {
    std::string out = "'";
    for (char c : s) {
        if (c == '\'') out += "'\\''";
        else out += c;
    }
    return out + "'";
}

struct Exec {
    int status = -1;
    std::string out;
    std::string err;
};

inline std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Runs a shell command with stdout and stderr captured through files.
inline Exec run_command(const std::string& cmd, const std::filesystem::path& dir, const std::string& tag) {
    auto out_path = dir / (tag + ".out");
    auto err_path = dir / (tag + ".err");
    std::string full = cmd + " >" + shell_quote(out_path.string()) + " 2>" + shell_quote(err_path.string());
    int rc = std::system(full.c_str());
    Exec e;
    if (rc == -1) throw EnvironmentError("cannot spawn shell for: " + cmd);
    e.status = WIFEXITED(rc) ? WEXITSTATUS(rc) : 128 + (WIFSIGNALED(rc) ? WTERMSIG(rc) : 0);
    e.out = slurp(out_path);
    e.err = slurp(err_path);
    return e;
}

inline bool executable_exists(const std::string& prog) {
    if (prog.find('/') != std::string::npos) return ::access(prog.c_str(), X_OK) == 0;
    const char* path = std::getenv("PATH");
    if (!path) return false;
    std::stringstream ss(path);
    std::string dir;
    while (std::getline(ss, dir, ':')) {
        if (dir.empty()) continue;
        if (::access((std::filesystem::path(dir) / prog).c_str(), X_OK) == 0) return true;
    }
    return false;
}

inline std::atomic<uint64_t>& build_counter() {
    static std::atomic<uint64_t> c{0};
    return c;
}

}  // namespace toolchain_detail

inline ResolvedToolchain resolve_toolchain(const ToolchainConfig& cfg = {}) {
    using namespace toolchain_detail;
    std::map<std::string, std::string> file;
    if (const char* f = std::getenv("US_TOOLCHAIN_CONFIG"); f && *f) file = read_config_file(f);
    auto pick = [&](const std::string& expl, const char* env, const char* key, const std::string& dflt) {
        if (!expl.empty()) return expl;
        if (const char* e = std::getenv(env); e && *e) return std::string(e);
        if (auto it = file.find(key); it != file.end()) return it->second;
        return dflt;
    };
    ResolvedToolchain t;
    t.compiler = pick(cfg.compiler, "US_CC", "cc", "cc");
    if (!cfg.flags.empty()) t.flags = cfg.flags;
    else t.flags = split_words(pick("", "US_CFLAGS", "cflags", "-O2 -std=c99 -ffp-contract=off"));
    std::string wd = pick(cfg.workdir, "US_WORKDIR", "workdir", "");
    t.workdir = wd.empty() ? std::filesystem::temp_directory_path() / "unistage-build" : std::filesystem::path(wd);
    return t;
}

struct CompiledProgram {
    std::filesystem::path binary;
    std::filesystem::path dir;
    double compile_seconds = 0;
};

// Compiles to a private directory under the work dir.
inline CompiledProgram compile_program(const GeneratedProgram& p, const ToolchainConfig& cfg = {}) {
    using namespace toolchain_detail;
    ResolvedToolchain t = resolve_toolchain(cfg);
    if (!executable_exists(t.compiler)) throw EnvironmentError("C compiler '" + t.compiler + "' not found");
    std::filesystem::create_directories(t.workdir);
    auto dir = t.workdir / ("p" + std::to_string(::getpid()) + "-" + std::to_string(build_counter()++));
    std::filesystem::create_directories(dir);
    auto src = dir / "program.c";
    {
        std::ofstream out(src, std::ios::binary);
        if (!out) throw EnvironmentError("cannot write " + src.string());
        out << p.source;
    }
    CompiledProgram c;
    c.dir = dir;
    c.binary = dir / "program";
    std::string cmd = shell_quote(t.compiler);
    for (auto& f : t.flags) cmd += " " + shell_quote(f);
    cmd += " " + shell_quote(src.string()) + " -o " + shell_quote(c.binary.string()) + " -lm";
    if (p.uses_threads) cmd += " -lpthread";
    if (p.uses_cblas) cmd += " -lopenblas";
    auto t0 = std::chrono::steady_clock::now();
    Exec e = run_command(cmd, dir, "cc");
    c.compile_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (e.status != 0) throw CompileError("C compilation failed (exit " + std::to_string(e.status) + ")", e.err + e.out);
    return c;
}

// Parses the program's standard streams into a RunResult.
inline RunResult parse_program_output(const std::string& out, const std::string& err) {
    RunResult r;
    std::size_t pos = 0;
    while (pos < out.size()) {
        std::size_t eol = out.find('\n', pos);
        if (eol == std::string::npos) eol = out.size();
        r.lines.push_back(out.substr(pos, eol - pos));
        pos = eol + 1;
    }
    std::istringstream es(err);
    std::string line;
    while (std::getline(es, line)) {
        if (line.rfind("#aux ", 0) == 0) {
            r.aux.push_back(line.substr(5));
        } else if (line.rfind("#counter ", 0) == 0) {
            std::istringstream ls(line.substr(9));
            std::string name;
            int64_t v = 0;
            ls >> name >> v;
            r.counters[name] = v;
        } else if (line.rfind("#timer ", 0) == 0) {
            std::istringstream ls(line.substr(7));
            std::string name;
            double v = 0;
            ls >> name >> v;
            r.timings[name] = v;
        } else if (line.rfind("#alloc ", 0) == 0) {
            r.alloc_bytes = std::stoll(line.substr(7));
        }
    }
    double total = r.timing("total");
    r.timings["export"] = r.timing("export");
    r.timings["process"] = std::max(0.0, total - r.timing("load") - r.timing("export"));
    return r;
}

inline RunResult run_compiled(const CompiledProgram& c, const RunInputs& inputs = {}) {
    using namespace toolchain_detail;
    std::string cmd = shell_quote(c.binary.string());
    for (auto& pth : inputs.paths) cmd += " " + shell_quote(pth);
    Exec e = run_command(cmd, c.dir, "run");
    if (e.status != 0) {
        std::string msg;
        std::istringstream es(e.err);
        std::string line;
        while (std::getline(es, line))
            if (line.rfind("error: ", 0) == 0) msg = line.substr(7);
        if (msg.empty()) msg = "generated program exited with status " + std::to_string(e.status);
        throw RunError(msg);
    }
    RunResult r = parse_program_output(e.out, e.err);
    r.timings["compile"] = c.compile_seconds;
    return r;
}

inline void remove_compiled(const CompiledProgram& c) {
    std::error_code ec;
    std::filesystem::remove_all(c.dir, ec);
}

// Compiles, executes and cleans up. Errors: EnvironmentError (no compiler),
// CompileError (diagnostics attached), RunError (nonzero exit).
inline RunResult compile_and_run(const GeneratedProgram& p, const RunInputs& inputs = {},
                                 const ToolchainConfig& cfg = {}) {
    CompiledProgram c = compile_program(p, cfg);
    struct Cleanup {
        const CompiledProgram& c;
        bool keep;
        ~Cleanup() {
            if (!keep) remove_compiled(c);
        }
    } cleanup{c, cfg.keep_files};
    return run_compiled(c, inputs);
}

}  // namespace unistage
