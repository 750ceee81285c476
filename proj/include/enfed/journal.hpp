#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "enfed/errors.hpp"

namespace enfed {

// Line-oriented node journal. During operation records are only appended;
// the retention purge rewrites the file so that expired upload data does not
// outlive the retention window on disk.
//
// Record grammar (one per line):
//   LOCAL|<hex key>|<valid_day>|<comma regions>|<B>|<stored_at>
//   REMOTE|<hex key>|<valid_day>|<source>|<stored_at>
//   PEER|<region>|<last_batch_id>|<next_poll>        (next_poll: seconds or "-")
class Journal {
public:
    Journal() = default;

    explicit Journal(std::filesystem::path path) : path_(std::move(path)) {
        out_.open(path_, std::ios::app);
        if (!out_) throw Error(Errc::io_error, "cannot open journal " + path_.string());
    }

    void append(const std::string& line) {
        std::lock_guard lock(mu_);
        out_ << line << '\n';
        out_.flush();
    }

    // Atomically replaces the journal contents (used by the purge path).
    void rewrite(const std::vector<std::string>& lines) {
        std::lock_guard lock(mu_);
        out_.close();
        auto tmp = path_;
        tmp += ".tmp";
        {
            std::ofstream fresh(tmp, std::ios::trunc);
            if (!fresh) throw Error(Errc::io_error, "cannot write journal " + tmp.string());
            for (const auto& l : lines) fresh << l << '\n';
        }
        std::filesystem::rename(tmp, path_);
        out_.open(path_, std::ios::app);
        if (!out_) throw Error(Errc::io_error, "cannot reopen journal " + path_.string());
    }

    const std::filesystem::path& path() const { return path_; }

    static std::vector<std::string> read_lines(const std::filesystem::path& path) {
        std::vector<std::string> lines;
        std::ifstream in(path);
        if (!in) return lines;
        std::string line;
        while (std::getline(in, line))
            if (!line.empty()) lines.push_back(line);
        return lines;
    }

    static std::vector<std::string> split(const std::string& line, char sep = '|') {
        std::vector<std::string> fields;
        std::string cur;
        std::istringstream ss(line);
        while (std::getline(ss, cur, sep)) fields.push_back(cur);
        return fields;
    }

private:
    std::filesystem::path path_;
    std::ofstream out_;
    std::mutex mu_;
};

}  // namespace enfed
