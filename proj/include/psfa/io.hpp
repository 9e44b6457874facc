#pragma once

#include <iosfwd>
#include <string>
#include <string_view>

#include "psfa/linalg.hpp"

namespace psfa {

/// Shortest-exact decimal form: 17 significant digits, so doubles round-trip bit for bit.
std::string format_double(double v);

/// Parses a full token as a double; throws ParseError naming `line` otherwise.
double parse_double(std::string_view token, std::size_t line);

/// Line-counting reader shared by the text formats.
class LineReader {
public:
    explicit LineReader(std::istream& in, bool skip_comments = true) : in_(in), skip_comments_(skip_comments) {}

    /// Next line that is not blank (nor a '#' comment when skipping comments); false at end of input.
    bool next(std::string& line);
    std::size_t line_number() const { return line_; }

private:
    std::istream& in_;
    bool skip_comments_;
    std::size_t line_ = 0;
};

/// Matrix block:
///   matrix <name> rows=<r> cols=<c>
///   <r lines of c whitespace-separated values>
void write_matrix_block(std::ostream& out, std::string_view name, const Matrix& m);
Matrix read_matrix_block(LineReader& reader, std::string_view name);

} // namespace psfa
