#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace histofuse::textio {

// Shortest representation that parses back to the same double.
std::string format_double(double value);
void append_double(std::string& out, double value);

// Line-oriented tokenizer that tracks 1-based line numbers for error messages.
class LineReader {
public:
    explicit LineReader(std::string_view text);

    bool at_end() const;
    // Splits the next line into whitespace-separated tokens; throws ParseError at end of input.
    std::vector<std::string_view> next(const char* expecting);
    std::size_t line() const { return line_; }
    // Rejects anything but blank lines after the last record.
    void expect_end();

private:
    std::string_view text_;
    std::size_t pos_ = 0;
    std::size_t line_ = 0;
};

double parse_double(std::string_view token, std::size_t line);
long long parse_int(std::string_view token, std::size_t line);
std::size_t parse_count(std::string_view token, std::size_t line);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& contents);

}  // namespace histofuse::textio
