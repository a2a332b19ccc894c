#pragma once

/**
 * @file expr.hpp
 * @brief Scalar expressions over (t, x_1, ..., x_d): parser, printer,
 *        evaluator, symbolic differentiation and a compiled stack program.
 *
 * Grammar (whitespace-insensitive, precedence  ^  >  unary -  >  * /  >  + -):
 *
 *     expr    := term (('+' | '-') term)*
 *     term    := unary (('*' | '/') unary)*
 *     unary   := ('-' | '+') unary | power
 *     power   := primary ('^' integer)?
 *     primary := number | 't' | 'x1'..'xd' | 'pi'
 *              | fn '(' expr ')' | 'abs2' '(' 'x' ')' | '(' expr ')'
 *     fn      := sin | cos | exp | sqrt | abs
 *
 * Exponents are constant integers, so derivatives stay closed-form. `abs2(x)`
 * is expanded at parse time into x1^2 + ... + xd^2. `abs` can be evaluated but
 * not differentiated.
 */

#include "kolmo/error.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace kolmo::expr {

enum class Op : std::uint8_t {
    Const, Time, Coord,
    Neg, Sin, Cos, Exp, Sqrt, Abs,
    Add, Sub, Mul, Div, Pow
};

/// Differentiation / substitution variable: the time t or a spatial coordinate x_{index+1}.
struct Var {
    bool is_time = false;
    int index = 0;

    static constexpr Var time() { return {true, 0}; }
    static constexpr Var x(int i) { return {false, i}; }
    friend constexpr bool operator==(Var, Var) = default;
};

namespace detail {

struct Node {
    Op op = Op::Const;
    double value = 0.0; // Const
    int index = 0;      // Coord
    int exponent = 0;   // Pow
    std::shared_ptr<const Node> a;
    std::shared_ptr<const Node> b;
};
using NodePtr = std::shared_ptr<const Node>;

inline NodePtr make_node(Op op, NodePtr a = nullptr, NodePtr b = nullptr) {
    auto n = std::make_shared<Node>();
    n->op = op;
    n->a = std::move(a);
    n->b = std::move(b);
    return n;
}

inline NodePtr make_const(double v) {
    auto n = std::make_shared<Node>();
    n->op = Op::Const;
    n->value = v;
    return n;
}

inline NodePtr make_coord(int i) {
    auto n = std::make_shared<Node>();
    n->op = Op::Coord;
    n->index = i;
    return n;
}

inline bool is_const(const NodePtr& n, double v) { return n->op == Op::Const && n->value == v; }
inline bool is_const(const NodePtr& n) { return n->op == Op::Const; }

inline double ipow(double base, int n) {
    if (n == 0) return 1.0;
    const bool invert = n < 0;
    unsigned e = invert ? static_cast<unsigned>(-n) : static_cast<unsigned>(n);
    double result = 1.0;
    double p = base;
    while (e != 0) {
        if (e & 1u) result *= p;
        p *= p;
        e >>= 1u;
    }
    return invert ? 1.0 / result : result;
}

// Builders with the light folding needed to keep derivatives readable.
inline NodePtr neg(NodePtr a) {
    if (is_const(a)) return make_const(-a->value);
    if (a->op == Op::Neg) return a->a;
    return make_node(Op::Neg, std::move(a));
}
inline NodePtr add(NodePtr a, NodePtr b) {
    if (is_const(a) && is_const(b)) return make_const(a->value + b->value);
    if (is_const(a, 0.0)) return b;
    if (is_const(b, 0.0)) return a;
    return make_node(Op::Add, std::move(a), std::move(b));
}
inline NodePtr sub(NodePtr a, NodePtr b) {
    if (is_const(a) && is_const(b)) return make_const(a->value - b->value);
    if (is_const(b, 0.0)) return a;
    if (is_const(a, 0.0)) return neg(std::move(b));
    return make_node(Op::Sub, std::move(a), std::move(b));
}
inline NodePtr mul(NodePtr a, NodePtr b) {
    if (is_const(a) && is_const(b)) return make_const(a->value * b->value);
    if (is_const(a, 0.0) || is_const(b, 0.0)) return make_const(0.0);
    if (is_const(a, 1.0)) return b;
    if (is_const(b, 1.0)) return a;
    return make_node(Op::Mul, std::move(a), std::move(b));
}
inline NodePtr div(NodePtr a, NodePtr b) {
    if (is_const(a, 0.0) && !is_const(b, 0.0)) return make_const(0.0);
    if (is_const(b, 1.0)) return a;
    if (is_const(a) && is_const(b) && b->value != 0.0) return make_const(a->value / b->value);
    return make_node(Op::Div, std::move(a), std::move(b));
}
inline NodePtr pow(NodePtr a, int n) {
    if (n == 0) return make_const(1.0);
    if (n == 1) return a;
    if (is_const(a) && (a->value != 0.0 || n > 0)) return make_const(ipow(a->value, n));
    auto node = std::make_shared<Node>();
    node->op = Op::Pow;
    node->a = std::move(a);
    node->exponent = n;
    return node;
}
inline NodePtr unary(Op op, NodePtr a) { return make_node(op, std::move(a)); }

inline int precedence(const Node& n) {
    switch (n.op) {
    case Op::Add:
    case Op::Sub: return 1;
    case Op::Mul:
    case Op::Div: return 2;
    case Op::Neg: return 3;
    case Op::Pow: return 4;
    default: return 5;
    }
}

inline std::string format_number(double v) {
    std::array<char, 64> buf{};
    auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    (void)ec;
    return std::string(buf.data(), end);
}

inline std::string print(const Node& n) {
    auto wrap = [](const Node& child, bool parens) {
        std::string s = print(child);
        return parens ? "(" + s + ")" : s;
    };
    switch (n.op) {
    case Op::Const:
        return n.value < 0.0 || std::signbit(n.value) ? "(-" + format_number(-n.value) + ")"
                                                      : format_number(n.value);
    case Op::Time: return "t";
    case Op::Coord: return "x" + std::to_string(n.index + 1);
    case Op::Neg: return "-" + wrap(*n.a, precedence(*n.a) < 3);
    case Op::Sin: return "sin(" + print(*n.a) + ")";
    case Op::Cos: return "cos(" + print(*n.a) + ")";
    case Op::Exp: return "exp(" + print(*n.a) + ")";
    case Op::Sqrt: return "sqrt(" + print(*n.a) + ")";
    case Op::Abs: return "abs(" + print(*n.a) + ")";
    case Op::Add:
        return wrap(*n.a, precedence(*n.a) < 1) + "+" + wrap(*n.b, precedence(*n.b) <= 1);
    case Op::Sub:
        return wrap(*n.a, precedence(*n.a) < 1) + "-" + wrap(*n.b, precedence(*n.b) <= 1);
    case Op::Mul:
        return wrap(*n.a, precedence(*n.a) < 2) + "*" + wrap(*n.b, precedence(*n.b) <= 2);
    case Op::Div:
        return wrap(*n.a, precedence(*n.a) < 2) + "/" + wrap(*n.b, precedence(*n.b) <= 2);
    case Op::Pow: {
        std::string e = n.exponent < 0 ? "(" + std::to_string(n.exponent) + ")"
                                       : std::to_string(n.exponent);
        return wrap(*n.a, precedence(*n.a) <= 4) + "^" + e;
    }
    }
    return {};
}

[[noreturn]] inline void domain_fail(const char* what, const Node& node, double t) {
    throw DomainError(std::string(what) + " in node '" + print(node) + "' at t=" +
                      format_number(t));
}

inline double eval(const Node& n, double t, std::span<const double> x) {
    switch (n.op) {
    case Op::Const: return n.value;
    case Op::Time: return t;
    case Op::Coord: return x[static_cast<std::size_t>(n.index)];
    case Op::Neg: return -eval(*n.a, t, x);
    case Op::Sin: return std::sin(eval(*n.a, t, x));
    case Op::Cos: return std::cos(eval(*n.a, t, x));
    case Op::Exp: return std::exp(eval(*n.a, t, x));
    case Op::Sqrt: {
        const double v = eval(*n.a, t, x);
        if (v < 0.0) domain_fail("sqrt of negative argument", n, t);
        return std::sqrt(v);
    }
    case Op::Abs: return std::abs(eval(*n.a, t, x));
    case Op::Add: return eval(*n.a, t, x) + eval(*n.b, t, x);
    case Op::Sub: return eval(*n.a, t, x) - eval(*n.b, t, x);
    case Op::Mul: return eval(*n.a, t, x) * eval(*n.b, t, x);
    case Op::Div: {
        const double num = eval(*n.a, t, x);
        const double den = eval(*n.b, t, x);
        if (den == 0.0) domain_fail("division by zero", n, t);
        return num / den;
    }
    case Op::Pow: {
        const double base = eval(*n.a, t, x);
        if (base == 0.0 && n.exponent < 0) domain_fail("zero to a negative power", n, t);
        return ipow(base, n.exponent);
    }
    }
    return 0.0;
}

inline bool depends_on_var(const Node& n, Var v) {
    if (n.op == Op::Time) return v.is_time;
    if (n.op == Op::Coord) return !v.is_time && n.index == v.index;
    return (n.a && depends_on_var(*n.a, v)) || (n.b && depends_on_var(*n.b, v));
}

/// Subtrees free of v differentiate to 0 without recursion, so abs(t) is fine under d/dx.
inline NodePtr differentiate(const NodePtr& n, Var v) {
    if (!depends_on_var(*n, v)) return make_const(0.0);
    switch (n->op) {
    case Op::Const: return make_const(0.0);
    case Op::Time: return make_const(v.is_time ? 1.0 : 0.0);
    case Op::Coord: return make_const(!v.is_time && v.index == n->index ? 1.0 : 0.0);
    case Op::Neg: return neg(differentiate(n->a, v));
    case Op::Sin: return mul(unary(Op::Cos, n->a), differentiate(n->a, v));
    case Op::Cos: return mul(neg(unary(Op::Sin, n->a)), differentiate(n->a, v));
    case Op::Exp: return mul(n, differentiate(n->a, v));
    case Op::Sqrt: return div(differentiate(n->a, v), mul(make_const(2.0), n));
    case Op::Abs:
        throw NotDifferentiable("abs is not differentiable: '" + print(*n) + "'");
    case Op::Add: return add(differentiate(n->a, v), differentiate(n->b, v));
    case Op::Sub: return sub(differentiate(n->a, v), differentiate(n->b, v));
    case Op::Mul:
        return add(mul(differentiate(n->a, v), n->b), mul(n->a, differentiate(n->b, v)));
    case Op::Div:
        return div(sub(mul(differentiate(n->a, v), n->b), mul(n->a, differentiate(n->b, v))),
                   pow(n->b, 2));
    case Op::Pow:
        return mul(mul(make_const(static_cast<double>(n->exponent)), pow(n->a, n->exponent - 1)),
                   differentiate(n->a, v));
    }
    return make_const(0.0);
}

inline NodePtr substitute(const NodePtr& n, Var v, const NodePtr& with) {
    switch (n->op) {
    case Op::Const: return n;
    case Op::Time: return v.is_time ? with : n;
    case Op::Coord: return !v.is_time && v.index == n->index ? with : n;
    default: break;
    }
    auto a = n->a ? substitute(n->a, v, with) : nullptr;
    auto b = n->b ? substitute(n->b, v, with) : nullptr;
    switch (n->op) {
    case Op::Neg: return neg(a);
    case Op::Add: return add(a, b);
    case Op::Sub: return sub(a, b);
    case Op::Mul: return mul(a, b);
    case Op::Div: return div(a, b);
    case Op::Pow: return pow(a, n->exponent);
    default: return unary(n->op, a);
    }
}

inline bool depends_on(const Node& n, bool time) {
    if (n.op == Op::Time) return time;
    if (n.op == Op::Coord) return !time;
    return (n.a && depends_on(*n.a, time)) || (n.b && depends_on(*n.b, time));
}

class Parser {
public:
    Parser(std::string_view text, int dim) : text_(text), dim_(dim) {}

    NodePtr parse() {
        auto n = parse_expr();
        skip_ws();
        if (pos_ != text_.size()) fail("unexpected character '" + std::string(1, text_[pos_]) + "'");
        return n;
    }

private:
    [[noreturn]] void fail(const std::string& what) const { throw ParseError(what, pos_); }

    void skip_ws() {
        while (pos_ < text_.size() && (text_[pos_] == ' ' || text_[pos_] == '\t' ||
                                       text_[pos_] == '\n' || text_[pos_] == '\r'))
            ++pos_;
    }
    bool accept(char c) {
        skip_ws();
        if (pos_ < text_.size() && text_[pos_] == c) {
            ++pos_;
            return true;
        }
        return false;
    }
    void expect(char c) {
        if (!accept(c)) fail(std::string("expected '") + c + "'");
    }

    NodePtr parse_expr() {
        auto lhs = parse_term();
        for (;;) {
            if (accept('+')) lhs = make_node(Op::Add, lhs, parse_term());
            else if (accept('-')) lhs = make_node(Op::Sub, lhs, parse_term());
            else return lhs;
        }
    }
    NodePtr parse_term() {
        auto lhs = parse_unary();
        for (;;) {
            if (accept('*')) lhs = make_node(Op::Mul, lhs, parse_unary());
            else if (accept('/')) lhs = make_node(Op::Div, lhs, parse_unary());
            else return lhs;
        }
    }
    NodePtr parse_unary() {
        if (accept('-')) {
            auto operand = parse_unary();
            if (operand->op == Op::Const) return make_const(-operand->value);
            return make_node(Op::Neg, operand);
        }
        if (accept('+')) return parse_unary();
        return parse_power();
    }
    NodePtr parse_power() {
        auto base = parse_primary();
        if (!accept('^')) return base;
        const bool parens = accept('(');
        skip_ws();
        int sign = 1;
        if (accept('-')) sign = -1;
        else accept('+');
        skip_ws();
        const std::size_t start = pos_;
        while (pos_ < text_.size() && text_[pos_] >= '0' && text_[pos_] <= '9') ++pos_;
        if (start == pos_) fail("exponent must be a constant integer");
        int value = 0;
        auto [ptr, ec] = std::from_chars(text_.data() + start, text_.data() + pos_, value);
        if (ec != std::errc{} || ptr != text_.data() + pos_) fail("exponent out of range");
        if (parens) expect(')');
        auto n = std::make_shared<Node>();
        n->op = Op::Pow;
        n->a = base;
        n->exponent = sign * value;
        return n;
    }

    std::string identifier() {
        const std::size_t start = pos_;
        while (pos_ < text_.size() &&
               (std::isalnum(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '_'))
            ++pos_;
        return std::string(text_.substr(start, pos_ - start));
    }

    NodePtr parse_primary() {
        skip_ws();
        if (pos_ >= text_.size()) fail("unexpected end of input");
        const char c = text_[pos_];
        if (accept('(')) {
            auto inner = parse_expr();
            expect(')');
            return inner;
        }
        if ((c >= '0' && c <= '9') || c == '.') return parse_number();
        if (!std::isalpha(static_cast<unsigned char>(c))) fail(std::string("unexpected character '") + c + "'");

        const std::size_t start = pos_;
        const std::string id = identifier();
        if (id == "t") return make_node(Op::Time);
        if (id == "pi") return make_const(std::numbers::pi);
        if (id.size() > 1 && id[0] == 'x' &&
            id.find_first_not_of("0123456789", 1) == std::string::npos) {
            const int i = std::stoi(id.substr(1));
            if (i < 1 || i > dim_) {
                pos_ = start;
                fail("unknown identifier '" + id + "' (dimension " + std::to_string(dim_) + ")");
            }
            return make_coord(i - 1);
        }
        Op op;
        if (id == "sin") op = Op::Sin;
        else if (id == "cos") op = Op::Cos;
        else if (id == "exp") op = Op::Exp;
        else if (id == "sqrt") op = Op::Sqrt;
        else if (id == "abs") op = Op::Abs;
        else if (id == "abs2") return parse_abs2();
        else {
            pos_ = start;
            fail("unknown identifier '" + id + "'");
        }
        expect('(');
        auto arg = parse_expr();
        if (accept(',')) fail("arity mismatch: '" + id + "' takes one argument");
        expect(')');
        return make_node(op, arg);
    }

    NodePtr parse_abs2() {
        expect('(');
        skip_ws();
        const std::size_t start = pos_;
        if (identifier() != "x") {
            pos_ = start;
            fail("abs2 expects the vector argument 'x'");
        }
        if (accept(',')) fail("arity mismatch: 'abs2' takes one argument");
        expect(')');
        NodePtr sum;
        for (int i = 0; i < dim_; ++i) {
            auto sq = std::make_shared<Node>();
            sq->op = Op::Pow;
            sq->a = make_coord(i);
            sq->exponent = 2;
            sum = sum ? make_node(Op::Add, sum, sq) : NodePtr(sq);
        }
        return sum;
    }

    NodePtr parse_number() {
        const std::size_t start = pos_;
        while (pos_ < text_.size() &&
               ((text_[pos_] >= '0' && text_[pos_] <= '9') || text_[pos_] == '.'))
            ++pos_;
        if (pos_ < text_.size() && (text_[pos_] == 'e' || text_[pos_] == 'E')) {
            std::size_t p = pos_ + 1;
            if (p < text_.size() && (text_[p] == '+' || text_[p] == '-')) ++p;
            if (p < text_.size() && text_[p] >= '0' && text_[p] <= '9') {
                pos_ = p;
                while (pos_ < text_.size() && text_[pos_] >= '0' && text_[pos_] <= '9') ++pos_;
            }
        }
        double v = 0.0;
        auto [ptr, ec] = std::from_chars(text_.data() + start, text_.data() + pos_, v);
        if (ec != std::errc{} || ptr != text_.data() + pos_) {
            pos_ = start;
            fail("malformed number");
        }
        return make_const(v);
    }

    std::string_view text_;
    int dim_;
    std::size_t pos_ = 0;
};

} // namespace detail

/**
 * Immutable scalar expression in (t, x_1..x_d). Cheap to copy (shared tree);
 * safe to evaluate concurrently.
 */
class Expression {
public:
    Expression() : Expression(detail::make_const(0.0), 1) {}
    Expression(detail::NodePtr root, int dim) : root_(std::move(root)), dim_(dim) {}

    static Expression parse(std::string_view text, int dim) {
        if (dim < 1) throw Error("expression dimension must be positive");
        return {detail::Parser(text, dim).parse(), dim};
    }
    static Expression constant(double v, int dim) { return {detail::make_const(v), dim}; }
    static Expression time(int dim) { return {detail::make_node(Op::Time), dim}; }
    static Expression coord(int i, int dim) { return {detail::make_coord(i), dim}; }

    int dim() const noexcept { return dim_; }
    const detail::NodePtr& root() const noexcept { return root_; }

    double eval(double t, std::span<const double> x) const {
        if (static_cast<int>(x.size()) < dim_) throw Error("point has fewer coordinates than expression dimension");
        return detail::eval(*root_, t, x);
    }
    double operator()(double t, std::span<const double> x) const { return eval(t, x); }

    Expression diff(Var v) const { return {detail::differentiate(root_, v), dim_}; }
    Expression diff_x(int i) const { return diff(Var::x(i)); }
    Expression diff_t() const { return diff(Var::time()); }
    Expression substitute(Var v, const Expression& with) const {
        return {detail::substitute(root_, v, with.root_), dim_};
    }

    std::string print() const { return detail::print(*root_); }
    bool depends_on_time() const { return detail::depends_on(*root_, true); }
    bool depends_on_space() const { return detail::depends_on(*root_, false); }
    bool is_constant() const { return root_->op == Op::Const; }
    std::optional<double> constant_value() const {
        if (root_->op == Op::Const) return root_->value;
        return std::nullopt;
    }

    friend Expression operator+(const Expression& a, const Expression& b) { return {detail::add(a.root_, b.root_), check(a, b)}; }
    friend Expression operator-(const Expression& a, const Expression& b) { return {detail::sub(a.root_, b.root_), check(a, b)}; }
    friend Expression operator*(const Expression& a, const Expression& b) { return {detail::mul(a.root_, b.root_), check(a, b)}; }
    friend Expression operator/(const Expression& a, const Expression& b) { return {detail::div(a.root_, b.root_), check(a, b)}; }
    friend Expression operator-(const Expression& a) { return {detail::neg(a.root_), a.dim_}; }
    friend Expression operator*(double c, const Expression& b) { return constant(c, b.dim_) * b; }
    friend Expression operator+(double c, const Expression& b) { return constant(c, b.dim_) + b; }
    friend Expression operator-(double c, const Expression& b) { return constant(c, b.dim_) - b; }
    friend Expression operator/(double c, const Expression& b) { return constant(c, b.dim_) / b; }
    friend Expression operator+(const Expression& a, double c) { return a + constant(c, a.dim_); }
    friend Expression operator-(const Expression& a, double c) { return a - constant(c, a.dim_); }
    friend Expression operator*(const Expression& a, double c) { return a * constant(c, a.dim_); }
    friend Expression operator/(const Expression& a, double c) { return a / constant(c, a.dim_); }

private:
    static int check(const Expression& a, const Expression& b) {
        if (a.dim_ != b.dim_) throw Error("dimension mismatch between expressions");
        return a.dim_;
    }

    detail::NodePtr root_;
    int dim_;
};

inline Expression pow(const Expression& e, int n) { return {detail::pow(e.root(), n), e.dim()}; }
inline Expression sin(const Expression& e) { return {detail::unary(Op::Sin, e.root()), e.dim()}; }
inline Expression cos(const Expression& e) { return {detail::unary(Op::Cos, e.root()), e.dim()}; }
inline Expression exp(const Expression& e) { return {detail::unary(Op::Exp, e.root()), e.dim()}; }
inline Expression sqrt(const Expression& e) { return {detail::unary(Op::Sqrt, e.root()), e.dim()}; }
inline Expression abs(const Expression& e) { return {detail::unary(Op::Abs, e.root()), e.dim()}; }

/// |x|^2 = x1^2 + ... + xd^2.
inline Expression abs2(int dim) {
    Expression sum = pow(Expression::coord(0, dim), 2);
    for (int i = 1; i < dim; ++i) sum = sum + pow(Expression::coord(i, dim), 2);
    return sum;
}

/**
 * Postfix compilation of an Expression for hot loops (operator assembly,
 * particle drifts, lattice scans). Evaluates bitwise identically to the tree.
 */
class Program {
public:
    Program() = default;
    explicit Program(const Expression& e) : root_(e.root()), dim_(e.dim()) {
        emit(*root_);
        std::size_t d = 0;
        for (const auto& ins : code_) {
            d += pushes(ins.op) ? 1 : 0;
            d -= pops(ins.op);
            depth_ = std::max(depth_, d);
        }
    }

    int dim() const noexcept { return dim_; }

    double operator()(double t, std::span<const double> x) const {
        std::array<double, 48> small{};
        std::vector<double> big;
        double* stack = small.data();
        if (depth_ > small.size()) {
            big.resize(depth_);
            stack = big.data();
        }
        std::size_t sp = 0;
        for (const auto& ins : code_) {
            switch (ins.op) {
            case Op::Const: stack[sp++] = ins.value; break;
            case Op::Time: stack[sp++] = t; break;
            case Op::Coord: stack[sp++] = x[static_cast<std::size_t>(ins.index)]; break;
            case Op::Neg: stack[sp - 1] = -stack[sp - 1]; break;
            case Op::Sin: stack[sp - 1] = std::sin(stack[sp - 1]); break;
            case Op::Cos: stack[sp - 1] = std::cos(stack[sp - 1]); break;
            case Op::Exp: stack[sp - 1] = std::exp(stack[sp - 1]); break;
            case Op::Sqrt:
                if (stack[sp - 1] < 0.0) detail::domain_fail("sqrt of negative argument", *ins.node, t);
                stack[sp - 1] = std::sqrt(stack[sp - 1]);
                break;
            case Op::Abs: stack[sp - 1] = std::abs(stack[sp - 1]); break;
            case Op::Pow:
                if (stack[sp - 1] == 0.0 && ins.index < 0) detail::domain_fail("zero to a negative power", *ins.node, t);
                stack[sp - 1] = detail::ipow(stack[sp - 1], ins.index);
                break;
            case Op::Add: --sp; stack[sp - 1] = stack[sp - 1] + stack[sp]; break;
            case Op::Sub: --sp; stack[sp - 1] = stack[sp - 1] - stack[sp]; break;
            case Op::Mul: --sp; stack[sp - 1] = stack[sp - 1] * stack[sp]; break;
            case Op::Div:
                --sp;
                if (stack[sp] == 0.0) detail::domain_fail("division by zero", *ins.node, t);
                stack[sp - 1] = stack[sp - 1] / stack[sp];
                break;
            }
        }
        return stack[0];
    }

    /**
     * Evaluate at n points sharing the time t. `coords[i]` points to the n
     * values of x_{i+1} (structure-of-arrays); results go to out[0..n).
     */
    void eval_batch(double t, std::span<const double* const> coords, std::size_t n,
                    double* out) const {
        std::vector<double> stack(depth_ * n);
        std::size_t sp = 0;
        auto top = [&](std::size_t k) { return stack.data() + (sp - 1 - k) * n; };
        for (const auto& ins : code_) {
            switch (ins.op) {
            case Op::Const: { double* d = stack.data() + sp++ * n; std::fill(d, d + n, ins.value); break; }
            case Op::Time: { double* d = stack.data() + sp++ * n; std::fill(d, d + n, t); break; }
            case Op::Coord: { double* d = stack.data() + sp++ * n; std::copy(coords[static_cast<std::size_t>(ins.index)], coords[static_cast<std::size_t>(ins.index)] + n, d); break; }
            case Op::Neg: { double* d = top(0); for (std::size_t i = 0; i < n; ++i) d[i] = -d[i]; break; }
            case Op::Sin: { double* d = top(0); for (std::size_t i = 0; i < n; ++i) d[i] = std::sin(d[i]); break; }
            case Op::Cos: { double* d = top(0); for (std::size_t i = 0; i < n; ++i) d[i] = std::cos(d[i]); break; }
            case Op::Exp: { double* d = top(0); for (std::size_t i = 0; i < n; ++i) d[i] = std::exp(d[i]); break; }
            case Op::Sqrt: {
                double* d = top(0);
                for (std::size_t i = 0; i < n; ++i) {
                    if (d[i] < 0.0) detail::domain_fail("sqrt of negative argument", *ins.node, t);
                    d[i] = std::sqrt(d[i]);
                }
                break;
            }
            case Op::Abs: { double* d = top(0); for (std::size_t i = 0; i < n; ++i) d[i] = std::abs(d[i]); break; }
            case Op::Pow: {
                double* d = top(0);
                for (std::size_t i = 0; i < n; ++i) {
                    if (d[i] == 0.0 && ins.index < 0) detail::domain_fail("zero to a negative power", *ins.node, t);
                    d[i] = detail::ipow(d[i], ins.index);
                }
                break;
            }
            case Op::Add: { double* b = top(0); double* a = top(1); for (std::size_t i = 0; i < n; ++i) a[i] = a[i] + b[i]; --sp; break; }
            case Op::Sub: { double* b = top(0); double* a = top(1); for (std::size_t i = 0; i < n; ++i) a[i] = a[i] - b[i]; --sp; break; }
            case Op::Mul: { double* b = top(0); double* a = top(1); for (std::size_t i = 0; i < n; ++i) a[i] = a[i] * b[i]; --sp; break; }
            case Op::Div: {
                double* b = top(0); double* a = top(1);
                for (std::size_t i = 0; i < n; ++i) {
                    if (b[i] == 0.0) detail::domain_fail("division by zero", *ins.node, t);
                    a[i] = a[i] / b[i];
                }
                --sp;
                break;
            }
            }
        }
        std::copy(stack.data(), stack.data() + n, out);
    }

private:
    struct Instr {
        Op op;
        double value;
        int index; // coordinate index, or exponent for Pow
        const detail::Node* node;
    };

    static bool pushes(Op op) { return op == Op::Const || op == Op::Time || op == Op::Coord; }
    static std::size_t pops(Op op) {
        return (op == Op::Add || op == Op::Sub || op == Op::Mul || op == Op::Div) ? 1 : 0;
    }

    void emit(const detail::Node& n) {
        if (n.a) emit(*n.a);
        if (n.b) emit(*n.b);
        code_.push_back({n.op, n.value, n.op == Op::Pow ? n.exponent : n.index, &n});
    }

    detail::NodePtr root_;
    int dim_ = 1;
    std::vector<Instr> code_;
    std::size_t depth_ = 1;
};

} // namespace kolmo::expr
