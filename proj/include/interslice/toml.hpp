#pragma once

// Minimal TOML subset parser for run configs: key/value pairs, [table]
// headers (dotted paths allowed), strings, integers, floats, booleans and
// flat arrays, with # comments. No dates, no inline tables, no arrays of
// tables. serialize() emits a canonical sorted form used for config echoes
// and config hashing.

#include <cctype>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "interslice/common.hpp"

namespace isr::toml {

struct Value;
using Table = std::map<std::string, Value>;
using Array = std::vector<Value>;

struct Value {
    std::variant<bool, int64_t, double, std::string, Array, Table> v;

    Value() : v(int64_t{0}) {}
    Value(bool b) : v(b) {}
    Value(int64_t i) : v(i) {}
    Value(int i) : v(static_cast<int64_t>(i)) {}
    Value(uint64_t i) : v(static_cast<int64_t>(i)) {}
    Value(double d) : v(d) {}
    Value(const char* s) : v(std::string(s)) {}
    Value(std::string s) : v(std::move(s)) {}
    Value(Array a) : v(std::move(a)) {}
    Value(Table t) : v(std::move(t)) {}

    bool is_bool() const { return std::holds_alternative<bool>(v); }
    bool is_int() const { return std::holds_alternative<int64_t>(v); }
    bool is_double() const { return std::holds_alternative<double>(v); }
    bool is_string() const { return std::holds_alternative<std::string>(v); }
    bool is_array() const { return std::holds_alternative<Array>(v); }
    bool is_table() const { return std::holds_alternative<Table>(v); }

    bool as_bool() const {
        if (!is_bool()) throw config_error("TOML value is not a boolean");
        return std::get<bool>(v);
    }
    int64_t as_int() const {
        if (!is_int()) throw config_error("TOML value is not an integer");
        return std::get<int64_t>(v);
    }
    double as_double() const {
        if (is_int()) return static_cast<double>(std::get<int64_t>(v));
        if (!is_double()) throw config_error("TOML value is not a number");
        return std::get<double>(v);
    }
    const std::string& as_string() const {
        if (!is_string()) throw config_error("TOML value is not a string");
        return std::get<std::string>(v);
    }
    const Array& as_array() const {
        if (!is_array()) throw config_error("TOML value is not an array");
        return std::get<Array>(v);
    }
    const Table& as_table() const {
        if (!is_table()) throw config_error("TOML value is not a table");
        return std::get<Table>(v);
    }
    Table& as_table() {
        if (!is_table()) throw config_error("TOML value is not a table");
        return std::get<Table>(v);
    }
};

namespace detail {

struct Parser {
    const std::string& text;
    size_t pos = 0;
    int line = 1;

    explicit Parser(const std::string& t) : text(t) {}

    [[noreturn]] void fail(const std::string& msg) const {
        throw config_error("TOML line " + std::to_string(line) + ": " + msg);
    }

    bool eof() const { return pos >= text.size(); }
    char peek() const { return eof() ? '\0' : text[pos]; }

    char take() {
        const char c = text[pos++];
        if (c == '\n') ++line;
        return c;
    }

    void skip_ws(bool newlines) {
        while (!eof()) {
            const char c = peek();
            if (c == '#') {
                while (!eof() && peek() != '\n') take();
            } else if (c == ' ' || c == '\t' || c == '\r' || (newlines && c == '\n')) {
                take();
            } else {
                break;
            }
        }
    }

    std::string parse_key() {
        skip_ws(false);
        if (peek() == '"') return parse_basic_string();
        std::string key;
        while (!eof()) {
            const char c = peek();
            if (std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-')
                key += take();
            else
                break;
        }
        if (key.empty()) fail("expected a key");
        return key;
    }

    std::string parse_basic_string() {
        if (take() != '"') fail("expected '\"'");
        std::string out;
        while (true) {
            if (eof()) fail("unterminated string");
            char c = take();
            if (c == '"') break;
            if (c == '\n') fail("newline in string");
            if (c == '\\') {
                if (eof()) fail("unterminated escape");
                const char e = take();
                switch (e) {
                    case 'n': out += '\n'; break;
                    case 't': out += '\t'; break;
                    case 'r': out += '\r'; break;
                    case '"': out += '"'; break;
                    case '\\': out += '\\'; break;
                    default: fail(std::string("unsupported escape '\\") + e + "'");
                }
            } else {
                out += c;
            }
        }
        return out;
    }

    Value parse_value() {
        skip_ws(false);
        const char c = peek();
        if (c == '"') return Value(parse_basic_string());
        if (c == '[') {
            take();
            Array arr;
            while (true) {
                skip_ws(true);
                if (peek() == ']') {
                    take();
                    break;
                }
                arr.push_back(parse_value());
                skip_ws(true);
                if (peek() == ',') {
                    take();
                } else if (peek() == ']') {
                    take();
                    break;
                } else {
                    fail("expected ',' or ']' in array");
                }
            }
            return Value(std::move(arr));
        }
        // bare token: bool or number
        std::string tok;
        while (!eof()) {
            const char t = peek();
            if (t == '\n' || t == ' ' || t == '\t' || t == '\r' || t == ',' || t == ']' || t == '#')
                break;
            tok += take();
        }
        if (tok.empty()) fail("expected a value");
        if (tok == "true") return Value(true);
        if (tok == "false") return Value(false);
        const bool looks_float = tok.find_first_of(".eE") != std::string::npos &&
                                 tok.find("0x") != 0;
        try {
            size_t used = 0;
            if (!looks_float) {
                const int64_t i = std::stoll(tok, &used, 10);
                if (used == tok.size()) return Value(i);
            }
            const double d = std::stod(tok, &used);
            if (used == tok.size()) return Value(d);
        } catch (const std::exception&) {
        }
        fail("cannot parse value '" + tok + "'");
    }

    static Table& descend(Table& root, const std::vector<std::string>& path, Parser& p) {
        Table* cur = &root;
        for (const auto& part : path) {
            auto it = cur->find(part);
            if (it == cur->end()) it = cur->emplace(part, Value(Table{})).first;
            if (!it->second.is_table()) p.fail("'" + part + "' is not a table");
            cur = &it->second.as_table();
        }
        return *cur;
    }

    Table parse_document() {
        Table root;
        Table* current = &root;
        while (true) {
            skip_ws(true);
            if (eof()) break;
            if (peek() == '[') {
                take();
                std::vector<std::string> path;
                while (true) {
                    path.push_back(parse_key());
                    skip_ws(false);
                    if (peek() == '.') {
                        take();
                    } else if (peek() == ']') {
                        take();
                        break;
                    } else {
                        fail("expected '.' or ']' in table header");
                    }
                }
                current = &descend(root, path, *this);
                continue;
            }
            const std::string key = parse_key();
            skip_ws(false);
            if (peek() != '=') fail("expected '=' after key '" + key + "'");
            take();
            Value val = parse_value();
            if (current->count(key)) fail("duplicate key '" + key + "'");
            current->emplace(key, std::move(val));
            skip_ws(false);
            if (!eof() && peek() != '\n' && peek() != '#') fail("trailing characters after value");
        }
        return root;
    }
};

inline void serialize_scalar(const Value& v, std::string& out) {
    if (v.is_bool()) {
        out += v.as_bool() ? "true" : "false";
    } else if (v.is_int()) {
        out += std::to_string(v.as_int());
    } else if (v.is_double()) {
        char buf[40];
        std::snprintf(buf, sizeof(buf), "%.17g", v.as_double());
        std::string s = buf;
        if (s.find_first_of(".eE") == std::string::npos && s.find("inf") == std::string::npos &&
            s.find("nan") == std::string::npos)
            s += ".0";
        out += s;
    } else if (v.is_string()) {
        out += '"';
        for (char c : v.as_string()) {
            switch (c) {
                case '"': out += "\\\""; break;
                case '\\': out += "\\\\"; break;
                case '\n': out += "\\n"; break;
                case '\t': out += "\\t"; break;
                case '\r': out += "\\r"; break;
                default: out += c;
            }
        }
        out += '"';
    } else if (v.is_array()) {
        out += '[';
        bool first = true;
        for (const auto& e : v.as_array()) {
            if (!first) out += ", ";
            first = false;
            serialize_scalar(e, out);
        }
        out += ']';
    }
}

inline void serialize_table(const Table& t, const std::string& prefix, std::string& out) {
    for (const auto& [k, v] : t) {
        if (v.is_table()) continue;
        out += k;
        out += " = ";
        serialize_scalar(v, out);
        out += '\n';
    }
    for (const auto& [k, v] : t) {
        if (!v.is_table()) continue;
        const std::string path = prefix.empty() ? k : prefix + "." + k;
        out += "\n[" + path + "]\n";
        serialize_table(v.as_table(), path, out);
    }
}

}  // namespace detail

inline Table parse(const std::string& text) {
    detail::Parser p(text);
    return p.parse_document();
}

inline Table parse_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw io_error("cannot open config '" + path + "'");
    std::stringstream ss;
    ss << f.rdbuf();
    return parse(ss.str());
}

// Canonical form: sorted keys (std::map order), scalars before sub-tables.
inline std::string serialize(const Table& t) {
    std::string out;
    detail::serialize_table(t, "", out);
    return out;
}

inline uint64_t config_hash(const Table& t) { return fnv1a(serialize(t)); }

}  // namespace isr::toml
