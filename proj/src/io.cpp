#include "psfa/io.hpp"

#include <charconv>
#include <istream>
#include <ostream>
#include <sstream>

#include "psfa/errors.hpp"

namespace psfa {

std::string format_double(double v)
{
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 17);
    return std::string(buf, res.ptr);
}

double parse_double(std::string_view token, std::size_t line)
{
    double v = 0.0;
    const auto* first = token.data();
    const auto* last = token.data() + token.size();
    if (!token.empty() && *first == '+')
        ++first;
    const auto res = std::from_chars(first, last, v);
    if (res.ec != std::errc() || res.ptr != last)
        throw ParseError("malformed number '" + std::string(token) + "'", line);
    return v;
}

bool LineReader::next(std::string& line)
{
    while (std::getline(in_, line)) {
        ++line_;
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        const auto first = line.find_first_not_of(" \t");
        if (first == std::string::npos || (skip_comments_ && line[first] == '#'))
            continue;
        return true;
    }
    return false;
}

void write_matrix_block(std::ostream& out, std::string_view name, const Matrix& m)
{
    out << "matrix " << name << " rows=" << m.rows() << " cols=" << m.cols() << '\n';
    for (Index i = 0; i < m.rows(); ++i) {
        for (Index j = 0; j < m.cols(); ++j) {
            if (j)
                out << ' ';
            out << format_double(m(i, j));
        }
        out << '\n';
    }
}

Matrix read_matrix_block(LineReader& reader, std::string_view name)
{
    std::string line;
    if (!reader.next(line))
        throw ParseError("expected matrix block '" + std::string(name) + "' but reached end of file",
                         reader.line_number() + 1);
    std::istringstream header(line);
    std::string tag, got, rows_tok, cols_tok;
    header >> tag >> got >> rows_tok >> cols_tok;
    if (tag != "matrix" || got != name || rows_tok.rfind("rows=", 0) != 0 || cols_tok.rfind("cols=", 0) != 0)
        throw ParseError("expected header 'matrix " + std::string(name) + " rows=R cols=C'", reader.line_number());
    long rows = 0, cols = 0;
    try {
        rows = std::stol(rows_tok.substr(5));
        cols = std::stol(cols_tok.substr(5));
    } catch (const std::exception&) {
        throw ParseError("bad matrix dimensions", reader.line_number());
    }
    if (rows < 0 || cols < 0)
        throw ParseError("negative matrix dimensions", reader.line_number());

    Matrix m(rows, cols);
    for (long i = 0; i < rows; ++i) {
        if (!reader.next(line))
            throw ParseError("matrix '" + std::string(name) + "' truncated after " + std::to_string(i) + " rows",
                             reader.line_number() + 1);
        std::istringstream row(line);
        std::string tok;
        long j = 0;
        while (row >> tok) {
            if (j >= cols)
                throw ParseError("matrix row has more than " + std::to_string(cols) + " values", reader.line_number());
            m(i, j++) = parse_double(tok, reader.line_number());
        }
        if (j != cols)
            throw ParseError("matrix row has " + std::to_string(j) + " values, expected " + std::to_string(cols),
                             reader.line_number());
    }
    return m;
}

} // namespace psfa
