#include "stagehand/expression.hpp"

#include <cctype>
#include <charconv>
#include <optional>

#include "stagehand/error.hpp"

namespace stagehand {
namespace {

enum class Tok { number, name, op, lparen, rparen, lbracket, rbracket, colon, comma, ellipsis, end };

struct Token {
  Tok kind;
  std::string text;
  std::size_t offset;
  double number = 0.0;
  bool integral = false;
};

bool name_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
bool name_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }

std::vector<Token> tokenize(std::string_view text) {
  std::vector<Token> out;
  std::size_t i = 0;
  while (i < text.size()) {
    const char c = text[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
      continue;
    }
    const std::size_t start = i;
    if (text.substr(i, 3) == "...") {
      out.push_back({Tok::ellipsis, "...", start});
      i += 3;
      continue;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) ||
        (c == '.' && i + 1 < text.size() && std::isdigit(static_cast<unsigned char>(text[i + 1])))) {
      bool integral = true;
      while (i < text.size() && std::isdigit(static_cast<unsigned char>(text[i]))) ++i;
      if (i < text.size() && text[i] == '.') {
        integral = false;
        ++i;
        while (i < text.size() && std::isdigit(static_cast<unsigned char>(text[i]))) ++i;
      }
      if (i < text.size() && (text[i] == 'e' || text[i] == 'E')) {
        std::size_t j = i + 1;
        if (j < text.size() && (text[j] == '+' || text[j] == '-')) ++j;
        if (j < text.size() && std::isdigit(static_cast<unsigned char>(text[j]))) {
          integral = false;
          i = j;
          while (i < text.size() && std::isdigit(static_cast<unsigned char>(text[i]))) ++i;
        }
      }
      Token tok{Tok::number, std::string(text.substr(start, i - start)), start};
      tok.integral = integral;
      const auto [ptr, ec] = std::from_chars(tok.text.data(), tok.text.data() + tok.text.size(), tok.number);
      if (ec != std::errc() || ptr != tok.text.data() + tok.text.size()) {
        throw Error(ErrorCode::SyntaxError, "malformed number '" + tok.text + "' at offset " + std::to_string(start));
      }
      out.push_back(std::move(tok));
      continue;
    }
    if (name_start(c)) {
      ++i;
      while (i < text.size()) {
        if (name_char(text[i])) {
          ++i;
        } else if (text[i] == '.' && i + 1 < text.size() && name_start(text[i + 1])) {
          i += 2;
        } else {
          break;
        }
      }
      out.push_back({Tok::name, std::string(text.substr(start, i - start)), start});
      continue;
    }
    const std::string_view two = text.substr(i, 2);
    if (two == "<=" || two == ">=" || two == "==" || two == "!=") {
      out.push_back({Tok::op, std::string(two), start});
      i += 2;
      continue;
    }
    switch (c) {
      case '+': case '-': case '*': case '/': case '<': case '>': case '&': case '|':
        out.push_back({Tok::op, std::string(1, c), start});
        break;
      case '(': out.push_back({Tok::lparen, "(", start}); break;
      case ')': out.push_back({Tok::rparen, ")", start}); break;
      case '[': out.push_back({Tok::lbracket, "[", start}); break;
      case ']': out.push_back({Tok::rbracket, "]", start}); break;
      case ':': out.push_back({Tok::colon, ":", start}); break;
      case ',': out.push_back({Tok::comma, ",", start}); break;
      default:
        throw Error(ErrorCode::UnknownToken,
                    "unknown token '" + std::string(1, c) + "' at offset " + std::to_string(start));
    }
    ++i;
  }
  out.push_back({Tok::end, "", text.size()});
  return out;
}

std::optional<BinaryOp> binary_op(const std::string& text) {
  if (text == "+") return BinaryOp::add;
  if (text == "-") return BinaryOp::sub;
  if (text == "*") return BinaryOp::mul;
  if (text == "/") return BinaryOp::div;
  if (text == "<") return BinaryOp::lt;
  if (text == ">") return BinaryOp::gt;
  if (text == "<=") return BinaryOp::le;
  if (text == ">=") return BinaryOp::ge;
  if (text == "==") return BinaryOp::eq;
  if (text == "!=") return BinaryOp::ne;
  if (text == "&") return BinaryOp::bit_and;
  if (text == "|") return BinaryOp::bit_or;
  return std::nullopt;
}

class Parser {
 public:
  explicit Parser(std::vector<Token> tokens) : tokens_(std::move(tokens)) {}

  ExprPtr parse() {
    ExprPtr root = logical();
    if (peek().kind != Tok::end) fail("unexpected '" + peek().text + "'");
    return root;
  }

 private:
  const Token& peek() const { return tokens_[pos_]; }
  const Token& advance() { return tokens_[pos_++]; }
  bool at_op(std::initializer_list<std::string_view> ops) const {
    if (peek().kind != Tok::op) return false;
    for (auto op : ops) {
      if (peek().text == op) return true;
    }
    return false;
  }
  [[noreturn]] void fail(const std::string& what) const {
    const Token& tok = peek();
    const std::string where = tok.kind == Tok::end ? "end of input" : "offset " + std::to_string(tok.offset);
    throw Error(ErrorCode::SyntaxError, what + " at " + where);
  }
  void expect(Tok kind, const char* what) {
    if (peek().kind != kind) fail(std::string("expected ") + what);
    ++pos_;
  }

  static ExprPtr make_binary(BinaryOp op, ExprPtr lhs, ExprPtr rhs, std::size_t offset) {
    return std::make_shared<const Expr>(Expr{ast::Binary{op, std::move(lhs), std::move(rhs)}, offset});
  }

  ExprPtr logical() {
    ExprPtr lhs = comparison();
    while (at_op({"&", "|"})) {
      const Token& tok = advance();
      lhs = make_binary(*binary_op(tok.text), lhs, comparison(), tok.offset);
    }
    return lhs;
  }

  ExprPtr comparison() {
    ExprPtr lhs = additive();
    if (at_op({"<", ">", "<=", ">=", "==", "!="})) {
      const Token& tok = advance();
      lhs = make_binary(*binary_op(tok.text), lhs, additive(), tok.offset);
      if (at_op({"<", ">", "<=", ">=", "==", "!="})) fail("chained comparison");
    }
    return lhs;
  }

  ExprPtr additive() {
    ExprPtr lhs = term();
    while (at_op({"+", "-"})) {
      const Token& tok = advance();
      lhs = make_binary(*binary_op(tok.text), lhs, term(), tok.offset);
    }
    return lhs;
  }

  ExprPtr term() {
    ExprPtr lhs = unary();
    while (at_op({"*", "/"})) {
      const Token& tok = advance();
      lhs = make_binary(*binary_op(tok.text), lhs, unary(), tok.offset);
    }
    return lhs;
  }

  ExprPtr unary() {
    if (at_op({"-"})) {
      const std::size_t offset = advance().offset;
      return std::make_shared<const Expr>(Expr{ast::Negate{unary()}, offset});
    }
    if (at_op({"+"})) {
      advance();
      return unary();
    }
    return postfix();
  }

  ExprPtr postfix() {
    ExprPtr target = primary();
    while (peek().kind == Tok::lbracket) {
      const std::size_t offset = advance().offset;
      std::vector<IndexItem> items;
      items.push_back(index_item());
      while (peek().kind == Tok::comma) {
        advance();
        items.push_back(index_item());
      }
      expect(Tok::rbracket, "']'");
      target = std::make_shared<const Expr>(Expr{ast::Indexed{target, std::move(items)}, offset});
    }
    return target;
  }

  std::optional<long> signed_integer() {
    bool negative = false;
    std::size_t save = pos_;
    if (at_op({"-"})) {
      negative = true;
      advance();
    }
    if (peek().kind == Tok::number) {
      if (!peek().integral) fail("index must be an integer");
      const long value = static_cast<long>(advance().number);
      return negative ? -value : value;
    }
    pos_ = save;
    if (negative) fail("expected integer after '-'");
    return std::nullopt;
  }

  IndexItem index_item() {
    if (peek().kind == Tok::ellipsis) {
      advance();
      return Ellipsis{};
    }
    std::optional<long> first = signed_integer();
    if (peek().kind == Tok::colon) {
      advance();
      Slice slice{first, std::nullopt};
      if (peek().kind != Tok::comma && peek().kind != Tok::rbracket) {
        slice.stop = signed_integer();
        if (!slice.stop) fail("expected slice bound");
      }
      return slice;
    }
    if (!first) fail("expected index");
    return *first;
  }

  ExprPtr primary() {
    const Token& tok = peek();
    switch (tok.kind) {
      case Tok::number:
        advance();
        return std::make_shared<const Expr>(Expr{ast::Literal{Tensor::scalar(tok.number)}, tok.offset});
      case Tok::name:
        advance();
        if (tok.text == "True" || tok.text == "False") {
          return std::make_shared<const Expr>(Expr{ast::Literal{Tensor::boolean(tok.text == "True")}, tok.offset});
        }
        return std::make_shared<const Expr>(Expr{ast::Variable{tok.text}, tok.offset});
      case Tok::lparen: {
        advance();
        ExprPtr inner = logical();
        expect(Tok::rparen, "')'");
        return inner;
      }
      case Tok::end: fail("unexpected end of expression");
      default: fail("unexpected '" + tok.text + "'");
    }
  }

  std::vector<Token> tokens_;
  std::size_t pos_ = 0;
};

std::string format_number(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return ec == std::errc() ? std::string(buf, ptr) : std::to_string(v);
}

std::string op_name(BinaryOp op) {
  switch (op) {
    case BinaryOp::add: return "Add";
    case BinaryOp::sub: return "Sub";
    case BinaryOp::mul: return "Mul";
    case BinaryOp::div: return "Div";
    case BinaryOp::lt: return "Lt";
    case BinaryOp::gt: return "Gt";
    case BinaryOp::le: return "Le";
    case BinaryOp::ge: return "Ge";
    case BinaryOp::eq: return "Eq";
    case BinaryOp::ne: return "Ne";
    case BinaryOp::bit_and: return "And";
    case BinaryOp::bit_or: return "Or";
  }
  return "Op";
}

std::string item_string(const IndexItem& item) {
  if (const long* i = std::get_if<long>(&item)) return std::to_string(*i);
  if (std::holds_alternative<Ellipsis>(item)) return "...";
  const Slice& s = std::get<Slice>(item);
  return (s.start ? std::to_string(*s.start) : "") + ":" + (s.stop ? std::to_string(*s.stop) : "");
}

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

}  // namespace

ExprPtr parse_expression(std::string_view text) {
  Parser parser(tokenize(text));
  return parser.parse();
}

std::string to_debug_string(const Expr& expr) {
  return std::visit(
      overloaded{
          [](const ast::Literal& lit) -> std::string {
            if (lit.value.is_boolean()) return lit.value.item() != 0.0 ? "True" : "False";
            return format_number(lit.value.item());
          },
          [](const ast::Variable& var) -> std::string { return "Var(" + var.name + ")"; },
          [](const ast::Negate& neg) -> std::string { return "Neg(" + to_debug_string(*neg.operand) + ")"; },
          [](const ast::Binary& bin) -> std::string {
            return op_name(bin.op) + "(" + to_debug_string(*bin.lhs) + ", " + to_debug_string(*bin.rhs) + ")";
          },
          [](const ast::Indexed& idx) -> std::string {
            bool all_slices = true;
            std::string items;
            for (std::size_t i = 0; i < idx.items.size(); ++i) {
              if (std::holds_alternative<long>(idx.items[i])) all_slices = false;
              items += (i ? ", " : "") + item_string(idx.items[i]);
            }
            return std::string(all_slices ? "Slice(" : "Index(") + to_debug_string(*idx.target) + ", [" + items + "])";
          },
      },
      expr.node);
}

void collect_variables(const Expr& expr, std::set<std::string>& out) {
  std::visit(overloaded{
                 [](const ast::Literal&) {},
                 [&](const ast::Variable& var) { out.insert(var.name); },
                 [&](const ast::Negate& neg) { collect_variables(*neg.operand, out); },
                 [&](const ast::Binary& bin) {
                   collect_variables(*bin.lhs, out);
                   collect_variables(*bin.rhs, out);
                 },
                 [&](const ast::Indexed& idx) { collect_variables(*idx.target, out); },
             },
             expr.node);
}

std::set<std::string> variables_of(const Expr& expr) {
  std::set<std::string> out;
  collect_variables(expr, out);
  return out;
}

Tensor evaluate(const Expr& expr, const Lookup& lookup) {
  return std::visit(
      overloaded{
          [](const ast::Literal& lit) { return lit.value; },
          [&](const ast::Variable& var) {
            const Tensor* value = lookup(var.name);
            if (!value) throw Error(ErrorCode::MissingBinding, "variable '" + var.name + "' is not bound");
            return *value;
          },
          [&](const ast::Negate& neg) { return negate(evaluate(*neg.operand, lookup)); },
          [&](const ast::Binary& bin) {
            return elementwise(bin.op, evaluate(*bin.lhs, lookup), evaluate(*bin.rhs, lookup));
          },
          [&](const ast::Indexed& idx) { return index(evaluate(*idx.target, lookup), idx.items); },
      },
      expr.node);
}

}  // namespace stagehand
