#pragma once

// Minimal comma-separated I/O used by every report and ingest path. Fields
// never contain commas or quotes, so no quoting is supported.

#include <cstddef>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>

namespace dbf {

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

std::vector<std::string> split_csv_line(std::string_view line);
CsvTable read_csv(const std::filesystem::path& path);

// Shortest text that round-trips to the same double.
std::string format_double(double v);

double parse_double(std::string_view text, const std::string& where);
std::size_t parse_size(std::string_view text, const std::string& where);

class CsvWriter {
public:
    CsvWriter(const std::filesystem::path& path, std::string_view header);

    template <class... Fields>
    void row(const Fields&... fields) {
        std::size_t i = 0;
        ((out_ << (i++ ? "," : "") << field(fields)), ...);
        out_ << '\n';
        if (!out_) fail();
    }

private:
    template <class T>
    static std::string field(const T& v) {
        if constexpr (std::is_same_v<T, double>) {
            return format_double(v);
        } else if constexpr (std::is_same_v<T, bool>) {
            return v ? "1" : "0";
        } else if constexpr (std::is_integral_v<T>) {
            return std::to_string(v);
        } else if constexpr (std::is_same_v<T, boost::multiprecision::cpp_int>) {
            return v.str();
        } else {
            return std::string(v);
        }
    }

    [[noreturn]] void fail() const;

    std::filesystem::path path_;
    std::ofstream out_;
};

}  // namespace dbf
