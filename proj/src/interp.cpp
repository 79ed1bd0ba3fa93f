#include "maialab/interp.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <cmath>
#include <set>
#include <sstream>

namespace maialab::interp {

// ===========================================================================
// Values
// ===========================================================================

bool Value::as_bool() const {
    if (is_none()) return false;
    if (is_bool()) return std::get<bool>(v_);
    if (is_int()) return std::get<std::int64_t>(v_) != 0;
    if (is_float()) return std::get<double>(v_) != 0.0;
    if (is_string()) return !std::get<std::string>(v_).empty();
    if (is_list()) return !std::get<List>(v_)->empty();
    return true;  // images are truthy
}

std::int64_t Value::as_int() const {
    if (is_int()) return std::get<std::int64_t>(v_);
    if (is_bool()) return std::get<bool>(v_) ? 1 : 0;
    if (is_float()) {
        const double d = std::get<double>(v_);
        if (d == std::floor(d)) return static_cast<std::int64_t>(d);
    }
    fail("ProgramError", "expected an integer, got " + repr());
}

double Value::as_number() const {
    if (is_int()) return static_cast<double>(std::get<std::int64_t>(v_));
    if (is_float()) return std::get<double>(v_);
    if (is_bool()) return std::get<bool>(v_) ? 1.0 : 0.0;
    fail("ProgramError", "expected a number, got " + repr());
}

const std::string& Value::as_string() const {
    if (!is_string()) fail("ProgramError", "expected a string, got " + repr());
    return std::get<std::string>(v_);
}

const Value::List& Value::as_list() const {
    if (!is_list()) fail("ProgramError", "expected a list, got " + repr());
    return std::get<List>(v_);
}

const neurons::ImageHandle& Value::as_image() const {
    if (!is_image()) fail("ProgramError", "expected an image, got " + repr());
    return std::get<neurons::ImageHandle>(v_);
}

HostObject* Value::as_host() const {
    if (!is_host()) fail("ProgramError", "expected a host binding, got " + repr());
    return std::get<HostObject*>(v_);
}

namespace {

std::string format_double(double d) {
    if (d == std::floor(d) && std::abs(d) < 1e15) {
        std::ostringstream os;
        os << static_cast<long long>(d) << ".0";
        return os.str();
    }
    std::ostringstream os;
    os.precision(12);
    os << d;
    return os.str();
}

}  // namespace

std::string Value::repr() const {
    if (is_none()) return "None";
    if (is_bool()) return std::get<bool>(v_) ? "True" : "False";
    if (is_int()) return std::to_string(std::get<std::int64_t>(v_));
    if (is_float()) return format_double(std::get<double>(v_));
    if (is_string()) return "'" + std::get<std::string>(v_) + "'";
    if (is_image()) return "<image " + std::get<neurons::ImageHandle>(v_).id() + ">";
    if (is_host()) return "<" + std::get<HostObject*>(v_)->name + ">";
    std::string out = "[";
    const auto& items = *std::get<List>(v_);
    for (size_t i = 0; i < items.size(); ++i) {
        if (i) out += ", ";
        out += items[i].repr();
    }
    return out + "]";
}

bool Value::equals(const Value& other) const {
    if (is_number() && other.is_number()) return as_number() == other.as_number();
    if (is_bool() || other.is_bool()) {
        if (is_bool() && other.is_bool()) return as_bool() == other.as_bool();
        return false;
    }
    if (is_string() && other.is_string()) return as_string() == other.as_string();
    if (is_none() && other.is_none()) return true;
    if (is_list() && other.is_list()) {
        const auto& a = *as_list();
        const auto& b = *other.as_list();
        if (a.size() != b.size()) return false;
        for (size_t i = 0; i < a.size(); ++i)
            if (!a[i].equals(b[i])) return false;
        return true;
    }
    if (is_image() && other.is_image()) return as_image().id() == other.as_image().id();
    if (is_host() && other.is_host()) return as_host() == other.as_host();
    return false;
}

// ===========================================================================
// Tokenizer
// ===========================================================================

namespace {

enum class Tok { name, keyword, number, string, op, newline, indent, dedent, end };

struct Token {
    Tok kind;
    std::string text;
    double number = 0.0;
    bool number_is_int = false;
    int line = 0;
};

const std::set<std::string>& keywords() {
    static const std::set<std::string> kw = {"def",  "return", "for",   "in",    "while", "if",
                                             "elif", "else",   "True",  "False", "None",  "and",
                                             "or",   "not",    "pass",  "break", "continue"};
    return kw;
}

[[noreturn]] void syntax_error(int line, const std::string& message) {
    fail("SyntaxError", "line " + std::to_string(line) + ": " + message);
}

std::vector<Token> tokenize(const std::string& source) {
    std::vector<Token> tokens;
    std::vector<int> indents{0};
    int line_no = 0;
    int bracket_depth = 0;

    std::istringstream stream(source);
    std::string line;
    while (std::getline(stream, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();

        size_t i = 0;
        if (bracket_depth == 0) {
            int indent = 0;
            while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) {
                indent += line[i] == '\t' ? 4 : 1;
                ++i;
            }
            // blank or comment-only lines do not affect indentation
            size_t j = i;
            while (j < line.size() && line[j] == ' ') ++j;
            if (j >= line.size() || line[j] == '#') continue;

            if (indent > indents.back()) {
                indents.push_back(indent);
                tokens.push_back({Tok::indent, "", 0, false, line_no});
            }
            while (indent < indents.back()) {
                indents.pop_back();
                tokens.push_back({Tok::dedent, "", 0, false, line_no});
            }
            if (indent != indents.back()) syntax_error(line_no, "inconsistent indentation");
        }

        bool emitted_any = false;
        while (i < line.size()) {
            const char c = line[i];
            if (c == ' ' || c == '\t') {
                ++i;
                continue;
            }
            if (c == '#') break;
            emitted_any = true;

            if ((c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c == '_') {
                size_t start = i;
                while (i < line.size() && ((line[i] >= 'a' && line[i] <= 'z') ||
                                           (line[i] >= 'A' && line[i] <= 'Z') ||
                                           (line[i] >= '0' && line[i] <= '9') || line[i] == '_'))
                    ++i;
                const std::string word = line.substr(start, i - start);
                tokens.push_back({keywords().count(word) ? Tok::keyword : Tok::name, word, 0,
                                  false, line_no});
                continue;
            }
            if ((c >= '0' && c <= '9') ||
                (c == '.' && i + 1 < line.size() && line[i + 1] >= '0' && line[i + 1] <= '9')) {
                size_t start = i;
                bool is_int = true;
                while (i < line.size() && line[i] >= '0' && line[i] <= '9') ++i;
                if (i < line.size() && line[i] == '.') {
                    is_int = false;
                    ++i;
                    while (i < line.size() && line[i] >= '0' && line[i] <= '9') ++i;
                }
                if (i < line.size() && (line[i] == 'e' || line[i] == 'E')) {
                    is_int = false;
                    ++i;
                    if (i < line.size() && (line[i] == '+' || line[i] == '-')) ++i;
                    while (i < line.size() && line[i] >= '0' && line[i] <= '9') ++i;
                }
                Token t{Tok::number, line.substr(start, i - start), 0, is_int, line_no};
                t.number = std::stod(t.text);
                tokens.push_back(std::move(t));
                continue;
            }
            if (c == '"' || c == '\'') {
                const char quote = c;
                ++i;
                std::string text;
                bool closed = false;
                while (i < line.size()) {
                    if (line[i] == '\\' && i + 1 < line.size()) {
                        const char esc = line[i + 1];
                        if (esc == 'n') text.push_back('\n');
                        else if (esc == 't') text.push_back('\t');
                        else text.push_back(esc);
                        i += 2;
                        continue;
                    }
                    if (line[i] == quote) {
                        closed = true;
                        ++i;
                        break;
                    }
                    text.push_back(line[i]);
                    ++i;
                }
                if (!closed) syntax_error(line_no, "unterminated string literal");
                tokens.push_back({Tok::string, std::move(text), 0, false, line_no});
                continue;
            }
            // operators, longest first
            static const std::vector<std::string> ops = {"==", "!=", "<=", ">=", "//", "->",
                                                         "+",  "-",  "*",  "/",  "%",  "=",
                                                         "<",  ">",  "(",  ")",  "[",  "]",
                                                         ",",  ":",  "."};
            bool matched = false;
            for (const auto& op : ops) {
                if (line.compare(i, op.size(), op) == 0) {
                    if (op == "(" || op == "[") ++bracket_depth;
                    if (op == ")" || op == "]") --bracket_depth;
                    if (op != "->")  // annotations are tolerated and ignored
                        tokens.push_back({Tok::op, op, 0, false, line_no});
                    i += op.size();
                    matched = true;
                    break;
                }
            }
            if (!matched) syntax_error(line_no, std::string("unexpected character '") + c + "'");
        }
        if (emitted_any && bracket_depth == 0)
            tokens.push_back({Tok::newline, "", 0, false, line_no});
    }
    while (indents.back() > 0) {
        indents.pop_back();
        tokens.push_back({Tok::dedent, "", 0, false, line_no});
    }
    tokens.push_back({Tok::end, "", 0, false, line_no});
    return tokens;
}

// ===========================================================================
// AST
// ===========================================================================

struct Expr;
struct Stmt;
using ExprPtr = std::unique_ptr<Expr>;
using StmtPtr = std::unique_ptr<Stmt>;

struct Expr {
    enum class Kind { literal, name, list, tuple, unary, binary, boolop, notop, compare, call,
                      attribute, index } kind;
    int line = 0;
    Value literal;                 // literal
    std::string text;              // name / attribute name / operator text
    std::vector<ExprPtr> items;    // list/tuple elements or call args
    ExprPtr a, b;                  // operands / callee / object
};

struct Stmt {
    enum class Kind { assign, expr, ret, forloop, whileloop, ifelse, pass, brk, cont } kind;
    int line = 0;
    std::vector<std::string> targets;  // assign / for variables
    ExprPtr value;                     // assign rhs, expr, return value, loop iterable, condition
    std::vector<StmtPtr> body;
    std::vector<StmtPtr> orelse;  // if: else branch
};

}  // namespace

struct Module {
    std::vector<StmtPtr> body;  // the function body
};

namespace {

// ===========================================================================
// Parser
// ===========================================================================

class Parser {
public:
    explicit Parser(std::vector<Token> tokens) : tokens_(std::move(tokens)) {}

    FunctionDef parse_module(const std::string& source) {
        skip_newlines();
        if (!at_keyword("def"))
            fail("ProgramShapeError", "the program must be a single function definition");
        FunctionDef def = parse_def();
        def.source = source;
        skip_newlines();
        if (!at(Tok::end))
            fail("ProgramShapeError",
                 "only a single function definition is allowed; found extra code at line " +
                     std::to_string(peek().line));
        return def;
    }

private:
    const Token& peek() const { return tokens_[pos_]; }
    const Token& advance() { return tokens_[pos_++]; }
    bool at(Tok kind) const { return peek().kind == kind; }
    bool at_op(const std::string& op) const { return at(Tok::op) && peek().text == op; }
    bool at_keyword(const std::string& kw) const {
        return at(Tok::keyword) && peek().text == kw;
    }

    void expect_op(const std::string& op) {
        if (!at_op(op)) syntax_error(peek().line, "expected '" + op + "'");
        advance();
    }

    void expect_newline() {
        if (at(Tok::newline)) {
            advance();
            return;
        }
        if (at(Tok::end) || at(Tok::dedent)) return;
        syntax_error(peek().line, "expected end of line near '" + peek().text + "'");
    }

    void skip_newlines() {
        while (at(Tok::newline)) advance();
    }

    FunctionDef parse_def() {
        advance();  // def
        if (!at(Tok::name)) syntax_error(peek().line, "expected a function name");
        FunctionDef def;
        def.name = advance().text;
        expect_op("(");
        while (!at_op(")")) {
            if (!at(Tok::name)) syntax_error(peek().line, "expected a parameter name");
            def.params.push_back(advance().text);
            if (at_op(",")) advance();
        }
        expect_op(")");
        expect_op(":");
        auto module = std::make_shared<Module>();
        module->body = parse_block();
        def.module = std::move(module);
        return def;
    }

    std::vector<StmtPtr> parse_block() {
        expect_newline();
        skip_newlines();
        if (!at(Tok::indent)) syntax_error(peek().line, "expected an indented block");
        advance();
        std::vector<StmtPtr> body;
        skip_newlines();
        while (!at(Tok::dedent) && !at(Tok::end)) {
            body.push_back(parse_stmt());
            skip_newlines();
        }
        if (at(Tok::dedent)) advance();
        return body;
    }

    StmtPtr parse_stmt() {
        const int line = peek().line;
        if (at_keyword("def"))
            fail("ProgramShapeError",
                 "only a single function definition is allowed (nested def at line " +
                     std::to_string(line) + ")");
        if (at_keyword("return")) {
            advance();
            auto stmt = std::make_unique<Stmt>();
            stmt->kind = Stmt::Kind::ret;
            stmt->line = line;
            if (!at(Tok::newline) && !at(Tok::end) && !at(Tok::dedent))
                stmt->value = parse_testlist();
            expect_newline();
            return stmt;
        }
        if (at_keyword("pass") || at_keyword("break") || at_keyword("continue")) {
            const std::string word = advance().text;
            auto stmt = std::make_unique<Stmt>();
            stmt->kind = word == "pass" ? Stmt::Kind::pass
                         : word == "break" ? Stmt::Kind::brk
                                           : Stmt::Kind::cont;
            stmt->line = line;
            expect_newline();
            return stmt;
        }
        if (at_keyword("for")) {
            advance();
            auto stmt = std::make_unique<Stmt>();
            stmt->kind = Stmt::Kind::forloop;
            stmt->line = line;
            while (true) {
                if (!at(Tok::name)) syntax_error(peek().line, "expected a loop variable");
                stmt->targets.push_back(advance().text);
                if (at_op(",")) {
                    advance();
                    continue;
                }
                break;
            }
            if (!at_keyword("in")) syntax_error(peek().line, "expected 'in'");
            advance();
            stmt->value = parse_testlist();
            expect_op(":");
            stmt->body = parse_block();
            return stmt;
        }
        if (at_keyword("while")) {
            advance();
            auto stmt = std::make_unique<Stmt>();
            stmt->kind = Stmt::Kind::whileloop;
            stmt->line = line;
            stmt->value = parse_test();
            expect_op(":");
            stmt->body = parse_block();
            return stmt;
        }
        if (at_keyword("if")) return parse_if();

        // expression or assignment
        ExprPtr first = parse_testlist();
        if (at_op("=")) {
            advance();
            auto stmt = std::make_unique<Stmt>();
            stmt->kind = Stmt::Kind::assign;
            stmt->line = line;
            stmt->targets = targets_from(*first);
            stmt->value = parse_testlist();
            expect_newline();
            return stmt;
        }
        auto stmt = std::make_unique<Stmt>();
        stmt->kind = Stmt::Kind::expr;
        stmt->line = line;
        stmt->value = std::move(first);
        expect_newline();
        return stmt;
    }

    StmtPtr parse_if() {
        const int line = peek().line;
        advance();  // if / elif
        auto stmt = std::make_unique<Stmt>();
        stmt->kind = Stmt::Kind::ifelse;
        stmt->line = line;
        stmt->value = parse_test();
        expect_op(":");
        stmt->body = parse_block();
        skip_newlines();
        if (at_keyword("elif")) {
            stmt->orelse.push_back(parse_if());
        } else if (at_keyword("else")) {
            advance();
            expect_op(":");
            stmt->orelse = parse_block();
        }
        return stmt;
    }

    std::vector<std::string> targets_from(const Expr& expr) {
        std::vector<std::string> names;
        auto add = [&](const Expr& e) {
            if (e.kind != Expr::Kind::name)
                syntax_error(e.line, "assignment targets must be plain names");
            names.push_back(e.text);
        };
        if (expr.kind == Expr::Kind::tuple) {
            for (const auto& item : expr.items) add(*item);
        } else {
            add(expr);
        }
        return names;
    }

    ExprPtr parse_testlist() {
        ExprPtr first = parse_test();
        if (!at_op(",")) return first;
        auto tuple = std::make_unique<Expr>();
        tuple->kind = Expr::Kind::tuple;
        tuple->line = first->line;
        tuple->items.push_back(std::move(first));
        while (at_op(",")) {
            advance();
            if (at(Tok::newline) || at_op(")") || at_op("]") || at_op("=")) break;
            tuple->items.push_back(parse_test());
        }
        return tuple;
    }

    ExprPtr parse_test() { return parse_or(); }

    ExprPtr parse_or() {
        ExprPtr left = parse_and();
        while (at_keyword("or")) {
            advance();
            auto node = std::make_unique<Expr>();
            node->kind = Expr::Kind::boolop;
            node->text = "or";
            node->line = left->line;
            node->a = std::move(left);
            node->b = parse_and();
            left = std::move(node);
        }
        return left;
    }

    ExprPtr parse_and() {
        ExprPtr left = parse_not();
        while (at_keyword("and")) {
            advance();
            auto node = std::make_unique<Expr>();
            node->kind = Expr::Kind::boolop;
            node->text = "and";
            node->line = left->line;
            node->a = std::move(left);
            node->b = parse_not();
            left = std::move(node);
        }
        return left;
    }

    ExprPtr parse_not() {
        if (at_keyword("not")) {
            const int line = advance().line;
            auto node = std::make_unique<Expr>();
            node->kind = Expr::Kind::notop;
            node->line = line;
            node->a = parse_not();
            return node;
        }
        return parse_comparison();
    }

    ExprPtr parse_comparison() {
        ExprPtr left = parse_arith();
        static const std::set<std::string> comp_ops = {"==", "!=", "<", ">", "<=", ">="};
        if (at(Tok::op) && comp_ops.count(peek().text)) {
            auto node = std::make_unique<Expr>();
            node->kind = Expr::Kind::compare;
            node->text = advance().text;
            node->line = left->line;
            node->a = std::move(left);
            node->b = parse_arith();
            return node;
        }
        if (at_keyword("in")) {
            advance();
            auto node = std::make_unique<Expr>();
            node->kind = Expr::Kind::compare;
            node->text = "in";
            node->line = left->line;
            node->a = std::move(left);
            node->b = parse_arith();
            return node;
        }
        if (at_keyword("not")) {
            advance();
            if (!at_keyword("in")) syntax_error(peek().line, "expected 'in' after 'not'");
            advance();
            auto node = std::make_unique<Expr>();
            node->kind = Expr::Kind::compare;
            node->text = "not in";
            node->line = left->line;
            node->a = std::move(left);
            node->b = parse_arith();
            return node;
        }
        return left;
    }

    ExprPtr parse_arith() {
        ExprPtr left = parse_term();
        while (at_op("+") || at_op("-")) {
            auto node = std::make_unique<Expr>();
            node->kind = Expr::Kind::binary;
            node->text = advance().text;
            node->line = left->line;
            node->a = std::move(left);
            node->b = parse_term();
            left = std::move(node);
        }
        return left;
    }

    ExprPtr parse_term() {
        ExprPtr left = parse_factor();
        while (at_op("*") || at_op("/") || at_op("//") || at_op("%")) {
            auto node = std::make_unique<Expr>();
            node->kind = Expr::Kind::binary;
            node->text = advance().text;
            node->line = left->line;
            node->a = std::move(left);
            node->b = parse_factor();
            left = std::move(node);
        }
        return left;
    }

    ExprPtr parse_factor() {
        if (at_op("-") || at_op("+")) {
            auto node = std::make_unique<Expr>();
            node->kind = Expr::Kind::unary;
            node->text = advance().text;
            node->line = peek().line;
            node->a = parse_factor();
            return node;
        }
        return parse_postfix();
    }

    ExprPtr parse_postfix() {
        ExprPtr node = parse_atom();
        while (true) {
            if (at_op("(")) {
                advance();
                auto call = std::make_unique<Expr>();
                call->kind = Expr::Kind::call;
                call->line = node->line;
                call->a = std::move(node);
                while (!at_op(")")) {
                    skip_newlines();
                    call->items.push_back(parse_test());
                    skip_newlines();
                    if (at_op(",")) {
                        advance();
                        skip_newlines();
                    }
                }
                expect_op(")");
                node = std::move(call);
                continue;
            }
            if (at_op("[")) {
                advance();
                auto index = std::make_unique<Expr>();
                index->kind = Expr::Kind::index;
                index->line = node->line;
                index->a = std::move(node);
                index->b = parse_test();
                expect_op("]");
                node = std::move(index);
                continue;
            }
            if (at_op(".")) {
                advance();
                if (!at(Tok::name)) syntax_error(peek().line, "expected an attribute name");
                auto attr = std::make_unique<Expr>();
                attr->kind = Expr::Kind::attribute;
                attr->line = node->line;
                attr->text = advance().text;
                attr->a = std::move(node);
                node = std::move(attr);
                continue;
            }
            break;
        }
        return node;
    }

    ExprPtr parse_atom() {
        const Token& token = peek();
        auto node = std::make_unique<Expr>();
        node->line = token.line;
        switch (token.kind) {
            case Tok::number: {
                advance();
                node->kind = Expr::Kind::literal;
                node->literal = token.number_is_int
                                    ? Value(static_cast<std::int64_t>(token.number))
                                    : Value(token.number);
                return node;
            }
            case Tok::string: {
                advance();
                node->kind = Expr::Kind::literal;
                node->literal = Value(token.text);
                return node;
            }
            case Tok::name: {
                advance();
                node->kind = Expr::Kind::name;
                node->text = token.text;
                return node;
            }
            case Tok::keyword: {
                if (token.text == "True" || token.text == "False") {
                    advance();
                    node->kind = Expr::Kind::literal;
                    node->literal = Value(token.text == "True");
                    return node;
                }
                if (token.text == "None") {
                    advance();
                    node->kind = Expr::Kind::literal;
                    node->literal = Value::none();
                    return node;
                }
                syntax_error(token.line, "unexpected keyword '" + token.text + "'");
            }
            case Tok::op: {
                if (token.text == "[") {
                    advance();
                    node->kind = Expr::Kind::list;
                    skip_newlines();
                    while (!at_op("]")) {
                        node->items.push_back(parse_test());
                        skip_newlines();
                        if (at_op(",")) {
                            advance();
                            skip_newlines();
                        }
                    }
                    expect_op("]");
                    return node;
                }
                if (token.text == "(") {
                    advance();
                    skip_newlines();
                    ExprPtr inner = parse_testlist();
                    skip_newlines();
                    expect_op(")");
                    return inner;
                }
                syntax_error(token.line, "unexpected '" + token.text + "'");
            }
            default:
                syntax_error(token.line, "unexpected end of input");
        }
    }

    std::vector<Token> tokens_;
    size_t pos_ = 0;
};

// ===========================================================================
// Evaluator
// ===========================================================================

struct Env {
    std::map<std::string, Value> vars;
    std::map<std::string, HostObject*> hosts;
    Value return_value;
    std::uint64_t ops = 0;
    std::uint64_t max_ops = 0;
    std::chrono::steady_clock::time_point deadline;
};

enum class Flow { normal, brk, cont, ret };

void tick(Env& env, int line) {
    if (++env.ops > env.max_ops)
        fail("Timeout", "operation budget exhausted at line " + std::to_string(line));
    if ((env.ops & 0x3FF) == 0 && std::chrono::steady_clock::now() > env.deadline)
        fail("Timeout", "wall-clock deadline reached at line " + std::to_string(line));
}

Value eval(const Expr& expr, Env& env);

Value call_builtin(const std::string& name, std::vector<Value>& args, int line) {
    auto arity = [&](size_t lo, size_t hi) {
        if (args.size() < lo || args.size() > hi)
            fail("ProgramError", name + "() got " + std::to_string(args.size()) +
                                     " arguments at line " + std::to_string(line));
    };
    if (name == "len") {
        arity(1, 1);
        if (args[0].is_string())
            return Value(static_cast<std::int64_t>(args[0].as_string().size()));
        return Value(static_cast<std::int64_t>(args[0].as_list()->size()));
    }
    if (name == "str") {
        arity(1, 1);
        if (args[0].is_string()) return args[0];
        return Value(args[0].repr());
    }
    if (name == "range") {
        arity(1, 3);
        std::int64_t start = 0, stop = 0, step = 1;
        if (args.size() == 1) {
            stop = args[0].as_int();
        } else {
            start = args[0].as_int();
            stop = args[1].as_int();
            if (args.size() == 3) step = args[2].as_int();
        }
        if (step == 0) fail("ProgramError", "range() step must not be zero");
        std::vector<Value> items;
        if (step > 0)
            for (std::int64_t v = start; v < stop; v += step) items.push_back(Value(v));
        else
            for (std::int64_t v = start; v > stop; v += step) items.push_back(Value(v));
        if (items.size() > 1000000) fail("ProgramError", "range() result too large");
        return Value::make_list(std::move(items));
    }
    if (name == "min" || name == "max") {
        std::vector<Value> pool;
        if (args.size() == 1 && args[0].is_list())
            pool = *args[0].as_list();
        else
            pool = args;
        if (pool.empty()) fail("ProgramError", name + "() of an empty sequence");
        Value best = pool[0];
        for (const auto& v : pool) {
            const bool better = name == "min" ? v.as_number() < best.as_number()
                                              : v.as_number() > best.as_number();
            if (better) best = v;
        }
        return best;
    }
    if (name == "abs") {
        arity(1, 1);
        if (args[0].is_int()) return Value(std::int64_t{std::abs(args[0].as_int())});
        return Value(std::abs(args[0].as_number()));
    }
    if (name == "round") {
        arity(1, 2);
        const double v = args[0].as_number();
        if (args.size() == 2) {
            const double scale = std::pow(10.0, static_cast<double>(args[1].as_int()));
            return Value(std::round(v * scale) / scale);
        }
        return Value(static_cast<std::int64_t>(std::llround(v)));
    }
    if (name == "sorted") {
        arity(1, 1);
        std::vector<Value> items = *args[0].as_list();
        std::sort(items.begin(), items.end(), [](const Value& a, const Value& b) {
            if (a.is_string() && b.is_string()) return a.as_string() < b.as_string();
            return a.as_number() < b.as_number();
        });
        return Value::make_list(std::move(items));
    }
    if (name == "int") {
        arity(1, 1);
        if (args[0].is_string()) return Value(static_cast<std::int64_t>(std::stoll(args[0].as_string())));
        return Value(static_cast<std::int64_t>(args[0].as_number()));
    }
    if (name == "float") {
        arity(1, 1);
        if (args[0].is_string()) return Value(std::stod(args[0].as_string()));
        return Value(args[0].as_number());
    }
    fail("ProgramError", "name '" + name + "' is not defined (line " + std::to_string(line) + ")");
}

bool is_builtin(const std::string& name) {
    static const std::set<std::string> builtins = {"len", "str",  "range",  "min", "max",
                                                   "abs", "round", "sorted", "int", "float"};
    return builtins.count(name) > 0;
}

Value eval_call(const Expr& call, Env& env) {
    const Expr& callee = *call.a;

    std::vector<Value> args;
    args.reserve(call.items.size());

    // host method or value method
    if (callee.kind == Expr::Kind::attribute) {
        Value object = eval(*callee.a, env);
        // host object method: system.neuron(...), tools.text2image(...)
        if (object.is_host()) {
            HostObject* host = object.as_host();
            auto method = host->methods.find(callee.text);
            if (method == host->methods.end())
                fail("ProgramError", "'" + host->name + "' has no method '" + callee.text +
                                         "' (line " + std::to_string(call.line) + ")");
            for (const auto& item : call.items) args.push_back(eval(*item, env));
            return method->second(args);
        }
        for (const auto& item : call.items) args.push_back(eval(*item, env));
        if (object.is_string() && callee.text == "split") {
            const std::string& s = object.as_string();
            const std::string sep = args.empty() ? " " : args[0].as_string();
            std::vector<Value> parts;
            if (sep.empty()) fail("ProgramError", "empty separator");
            size_t start = 0;
            while (true) {
                const size_t at = s.find(sep, start);
                if (at == std::string::npos) {
                    parts.push_back(Value(s.substr(start)));
                    break;
                }
                parts.push_back(Value(s.substr(start, at - start)));
                start = at + sep.size();
            }
            return Value::make_list(std::move(parts));
        }
        if (object.is_string() && callee.text == "strip") {
            return Value(trim(object.as_string()));
        }
        if (object.is_string() && callee.text == "lower") {
            return Value(to_lower(object.as_string()));
        }
        if (object.is_list() && callee.text == "append") {
            if (args.size() != 1) fail("ProgramError", "append() takes one argument");
            object.as_list()->push_back(args[0]);
            return Value::none();
        }
        fail("ProgramError", "no method '" + callee.text + "' on " + object.repr() + " (line " +
                                 std::to_string(call.line) + ")");
    }

    if (callee.kind == Expr::Kind::name) {
        for (const auto& item : call.items) args.push_back(eval(*item, env));
        if (is_builtin(callee.text)) return call_builtin(callee.text, args, call.line);
        fail("ProgramError",
             "name '" + callee.text + "' is not defined (line " + std::to_string(call.line) + ")");
    }
    fail("ProgramError", "expression is not callable (line " + std::to_string(call.line) + ")");
}

Value eval(const Expr& expr, Env& env) {
    tick(env, expr.line);
    switch (expr.kind) {
        case Expr::Kind::literal:
            return expr.literal;
        case Expr::Kind::name: {
            auto it = env.vars.find(expr.text);
            if (it != env.vars.end()) return it->second;
            auto host = env.hosts.find(expr.text);
            if (host != env.hosts.end()) return Value(host->second);
            fail("ProgramError",
                 "name '" + expr.text + "' is not defined (line " + std::to_string(expr.line) + ")");
        }
        case Expr::Kind::list:
        case Expr::Kind::tuple: {
            std::vector<Value> items;
            items.reserve(expr.items.size());
            for (const auto& item : expr.items) items.push_back(eval(*item, env));
            return Value::make_list(std::move(items));
        }
        case Expr::Kind::unary: {
            Value v = eval(*expr.a, env);
            if (expr.text == "-") {
                if (v.is_int()) return Value(-v.as_int());
                return Value(-v.as_number());
            }
            return v;
        }
        case Expr::Kind::notop:
            return Value(!eval(*expr.a, env).as_bool());
        case Expr::Kind::boolop: {
            Value left = eval(*expr.a, env);
            if (expr.text == "and") return left.as_bool() ? eval(*expr.b, env) : left;
            return left.as_bool() ? left : eval(*expr.b, env);
        }
        case Expr::Kind::compare: {
            Value left = eval(*expr.a, env);
            Value right = eval(*expr.b, env);
            const std::string& op = expr.text;
            if (op == "==") return Value(left.equals(right));
            if (op == "!=") return Value(!left.equals(right));
            if (op == "in" || op == "not in") {
                bool found = false;
                if (right.is_string()) {
                    found = right.as_string().find(left.as_string()) != std::string::npos;
                } else {
                    for (const auto& item : *right.as_list())
                        if (item.equals(left)) {
                            found = true;
                            break;
                        }
                }
                return Value(op == "in" ? found : !found);
            }
            if (left.is_string() && right.is_string()) {
                const auto& a = left.as_string();
                const auto& b = right.as_string();
                if (op == "<") return Value(a < b);
                if (op == ">") return Value(a > b);
                if (op == "<=") return Value(a <= b);
                return Value(a >= b);
            }
            const double a = left.as_number();
            const double b = right.as_number();
            if (op == "<") return Value(a < b);
            if (op == ">") return Value(a > b);
            if (op == "<=") return Value(a <= b);
            return Value(a >= b);
        }
        case Expr::Kind::binary: {
            Value left = eval(*expr.a, env);
            Value right = eval(*expr.b, env);
            const std::string& op = expr.text;
            if (op == "+") {
                if (left.is_string() || right.is_string()) {
                    if (!left.is_string() || !right.is_string())
                        fail("ProgramError", "cannot add " + left.repr() + " and " + right.repr() +
                                                 " (line " + std::to_string(expr.line) + ")");
                    return Value(left.as_string() + right.as_string());
                }
                if (left.is_list() && right.is_list()) {
                    std::vector<Value> items = *left.as_list();
                    const auto& more = *right.as_list();
                    items.insert(items.end(), more.begin(), more.end());
                    return Value::make_list(std::move(items));
                }
                if (left.is_int() && right.is_int()) return Value(left.as_int() + right.as_int());
                return Value(left.as_number() + right.as_number());
            }
            if (op == "-") {
                if (left.is_int() && right.is_int()) return Value(left.as_int() - right.as_int());
                return Value(left.as_number() - right.as_number());
            }
            if (op == "*") {
                if (left.is_int() && right.is_int()) return Value(left.as_int() * right.as_int());
                return Value(left.as_number() * right.as_number());
            }
            if (op == "/") {
                const double denom = right.as_number();
                if (denom == 0.0)
                    fail("ProgramError", "division by zero (line " + std::to_string(expr.line) + ")");
                return Value(left.as_number() / denom);
            }
            if (op == "//") {
                const std::int64_t denom = right.as_int();
                if (denom == 0)
                    fail("ProgramError", "division by zero (line " + std::to_string(expr.line) + ")");
                const std::int64_t a = left.as_int();
                std::int64_t q = a / denom;
                if ((a % denom != 0) && ((a < 0) != (denom < 0))) --q;
                return Value(q);
            }
            if (op == "%") {
                const std::int64_t denom = right.as_int();
                if (denom == 0)
                    fail("ProgramError", "modulo by zero (line " + std::to_string(expr.line) + ")");
                std::int64_t r = left.as_int() % denom;
                if (r != 0 && ((r < 0) != (denom < 0))) r += denom;
                return Value(r);
            }
            fail("ProgramError", "unsupported operator '" + op + "'");
        }
        case Expr::Kind::call:
            return eval_call(expr, env);
        case Expr::Kind::attribute: {
            Value object = eval(*expr.a, env);
            if (object.is_host()) {
                HostObject* host = object.as_host();
                auto attr = host->attributes.find(expr.text);
                if (attr != host->attributes.end()) return attr->second();
                fail("ProgramError", "'" + host->name + "' has no attribute '" + expr.text +
                                         "' (line " + std::to_string(expr.line) + ")");
            }
            fail("ProgramError", "attribute access is only available on the host bindings (line " +
                                     std::to_string(expr.line) + ")");
        }
        case Expr::Kind::index: {
            Value object = eval(*expr.a, env);
            const std::int64_t raw = eval(*expr.b, env).as_int();
            if (object.is_string()) {
                const auto& s = object.as_string();
                std::int64_t i = raw < 0 ? raw + static_cast<std::int64_t>(s.size()) : raw;
                if (i < 0 || i >= static_cast<std::int64_t>(s.size()))
                    fail("ProgramError", "string index out of range (line " +
                                             std::to_string(expr.line) + ")");
                return Value(std::string(1, s[static_cast<size_t>(i)]));
            }
            const auto& items = *object.as_list();
            std::int64_t i = raw < 0 ? raw + static_cast<std::int64_t>(items.size()) : raw;
            if (i < 0 || i >= static_cast<std::int64_t>(items.size()))
                fail("ProgramError",
                     "list index out of range (line " + std::to_string(expr.line) + ")");
            return items[static_cast<size_t>(i)];
        }
    }
    fail("ProgramError", "internal: unknown expression kind");
}

void assign_targets(const std::vector<std::string>& targets, const Value& value, Env& env,
                    int line) {
    if (targets.size() == 1) {
        env.vars[targets[0]] = value;
        return;
    }
    const auto& items = *value.as_list();
    if (items.size() != targets.size())
        fail("ProgramError", "cannot unpack " + std::to_string(items.size()) + " values into " +
                                 std::to_string(targets.size()) + " names (line " +
                                 std::to_string(line) + ")");
    for (size_t i = 0; i < targets.size(); ++i) env.vars[targets[i]] = items[i];
}

Flow exec_block(const std::vector<StmtPtr>& body, Env& env);

Flow exec_stmt(const Stmt& stmt, Env& env) {
    tick(env, stmt.line);
    switch (stmt.kind) {
        case Stmt::Kind::pass:
            return Flow::normal;
        case Stmt::Kind::brk:
            return Flow::brk;
        case Stmt::Kind::cont:
            return Flow::cont;
        case Stmt::Kind::ret:
            env.return_value = stmt.value ? eval(*stmt.value, env) : Value::none();
            return Flow::ret;
        case Stmt::Kind::expr:
            eval(*stmt.value, env);
            return Flow::normal;
        case Stmt::Kind::assign:
            assign_targets(stmt.targets, eval(*stmt.value, env), env, stmt.line);
            return Flow::normal;
        case Stmt::Kind::ifelse: {
            if (eval(*stmt.value, env).as_bool()) return exec_block(stmt.body, env);
            return exec_block(stmt.orelse, env);
        }
        case Stmt::Kind::whileloop: {
            while (eval(*stmt.value, env).as_bool()) {
                const Flow flow = exec_block(stmt.body, env);
                if (flow == Flow::brk) break;
                if (flow == Flow::ret) return Flow::ret;
            }
            return Flow::normal;
        }
        case Stmt::Kind::forloop: {
            const Value iterable = eval(*stmt.value, env);
            const auto items = *iterable.as_list();  // copy: mutation-safe iteration
            for (const auto& item : items) {
                assign_targets(stmt.targets, item, env, stmt.line);
                const Flow flow = exec_block(stmt.body, env);
                if (flow == Flow::brk) break;
                if (flow == Flow::ret) return Flow::ret;
            }
            return Flow::normal;
        }
    }
    return Flow::normal;
}

Flow exec_block(const std::vector<StmtPtr>& body, Env& env) {
    for (const auto& stmt : body) {
        const Flow flow = exec_stmt(*stmt, env);
        if (flow != Flow::normal) return flow;
    }
    return Flow::normal;
}

}  // namespace

// ===========================================================================
// Entry points
// ===========================================================================

FunctionDef parse_program(const std::string& source) {
    Parser parser(tokenize(source));
    return parser.parse_module(source);
}

Value execute_function(const FunctionDef& fn, std::vector<HostObject*> args,
                       const SandboxLimits& limits) {
    if (args.size() != fn.params.size())
        fail("ProgramShapeError", fn.name + "() takes " + std::to_string(fn.params.size()) +
                                      " parameters but " + std::to_string(args.size()) +
                                      " bindings were provided");
    Env env;
    env.max_ops = limits.max_operations;
    env.deadline = std::chrono::steady_clock::now() +
                   std::chrono::microseconds(static_cast<std::int64_t>(limits.timeout_seconds * 1e6));
    for (size_t i = 0; i < args.size(); ++i) env.hosts[fn.params[i]] = args[i];

    const Flow flow = exec_block(fn.module->body, env);
    if (flow == Flow::ret) return env.return_value;
    return Value::none();
}

}  // namespace maialab::interp
