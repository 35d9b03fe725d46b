#include "histofuse/textio.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "histofuse/errors.hpp"

namespace histofuse::textio {

std::string format_double(double value) {
    std::string out;
    append_double(out, value);
    return out;
}

void append_double(std::string& out, double value) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof(buf), value);
    out.append(buf, res.ptr);
}

LineReader::LineReader(std::string_view text) : text_(text) {}

bool LineReader::at_end() const { return pos_ >= text_.size(); }

std::vector<std::string_view> LineReader::next(const char* expecting) {
    if (at_end()) throw ParseError(line_ + 1, std::string("unexpected end of input, expected ") + expecting);
    std::size_t end = text_.find('\n', pos_);
    if (end == std::string_view::npos) end = text_.size();
    std::string_view line = text_.substr(pos_, end - pos_);
    pos_ = end + 1;
    ++line_;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    std::vector<std::string_view> tokens;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
        std::size_t j = i;
        while (j < line.size() && line[j] != ' ' && line[j] != '\t') ++j;
        if (j > i) tokens.push_back(line.substr(i, j - i));
        i = j;
    }
    if (tokens.empty()) throw ParseError(line_, std::string("blank line, expected ") + expecting);
    return tokens;
}

void LineReader::expect_end() {
    while (!at_end()) {
        std::size_t end = text_.find('\n', pos_);
        if (end == std::string_view::npos) end = text_.size();
        std::string_view line = text_.substr(pos_, end - pos_);
        ++line_;
        pos_ = end + 1;
        if (line.find_first_not_of(" \t\r") != std::string_view::npos) {
            throw ParseError(line_, "trailing content after end of record");
        }
    }
}

double parse_double(std::string_view token, std::size_t line) {
    double value = 0.0;
    const char* first = token.data();
    const char* last = first + token.size();
    if (first != last && *first == '+') ++first;
    auto res = std::from_chars(first, last, value);
    if (res.ec != std::errc() || res.ptr != last || !std::isfinite(value)) {
        throw ParseError(line, "invalid number '" + std::string(token) + "'");
    }
    return value;
}

long long parse_int(std::string_view token, std::size_t line) {
    long long value = 0;
    auto res = std::from_chars(token.data(), token.data() + token.size(), value);
    if (res.ec != std::errc() || res.ptr != token.data() + token.size()) {
        throw ParseError(line, "invalid integer '" + std::string(token) + "'");
    }
    return value;
}

std::size_t parse_count(std::string_view token, std::size_t line) {
    const long long v = parse_int(token, line);
    if (v < 0) throw ParseError(line, "negative count '" + std::string(token) + "'");
    return static_cast<std::size_t>(v);
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::string& path, const std::string& contents) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write " + path);
    out << contents;
    if (!out) throw InputError("write failed for " + path);
}

}  // namespace histofuse::textio
