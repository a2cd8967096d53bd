#include <algorithm>
#include <initializer_list>
#include <optional>
#include <utility>

#include "tracefind/java_syntax.hpp"

namespace tracefind::java {

std::string ParseFailure::message() const {
    std::string out = "parse error at offset " + std::to_string(offset) + ": expected " + expected;
    out += found.empty() ? std::string(" at end of input") : ", found '" + found + "'";
    return out;
}

namespace {

struct Failure {
    std::size_t token_index;
    std::string expected;
};

const std::vector<std::string_view> kPrimitives = {"boolean", "byte", "char", "short", "int", "long", "float", "double"};
const std::vector<std::string_view> kModifiers = {"public",    "protected", "private",      "static",   "abstract",
                                                  "final",     "native",    "synchronized", "transient", "volatile",
                                                  "strictfp",  "default"};
const std::vector<std::string_view> kAssignOps = {"=",  "+=", "-=", "*=",  "/=",   "%=",
                                                  "&=", "|=", "^=", "<<=", ">>=", ">>>="};

bool contains(const std::vector<std::string_view>& set, std::string_view s) {
    return std::find(set.begin(), set.end(), s) != set.end();
}

int binary_precedence(std::string_view op) {
    if (op == "||") return 1;
    if (op == "&&") return 2;
    if (op == "|") return 3;
    if (op == "^") return 4;
    if (op == "&") return 5;
    if (op == "==" || op == "!=") return 6;
    if (op == "<" || op == ">" || op == "<=" || op == ">=" || op == "instanceof") return 7;
    if (op == "<<" || op == ">>" || op == ">>>") return 8;
    if (op == "+" || op == "-") return 9;
    if (op == "*" || op == "/" || op == "%") return 10;
    return 0;
}

class Parser {
public:
    Parser(std::vector<Token> tokens, std::size_t source_size) : toks_(std::move(tokens)), source_size_(source_size) {}

    SyntaxTree run() {
        nodes_.push_back({"CompilationUnit", {}, 0, 0, {}});
        std::vector<std::size_t> children;
        if (is_kw("package")) children.push_back(package_decl());
        while (is_kw("import")) children.push_back(import_decl());
        while (!eof()) children.push_back(member_decl(false));
        nodes_[0].children = std::move(children);
        nodes_[0].token_end = pos_;
        return SyntaxTree{std::move(nodes_), std::move(toks_)};
    }

    ParseFailure failure_from(const Failure& f) const {
        ParseFailure out;
        out.token_index = f.token_index;
        out.expected = f.expected;
        if (f.token_index < toks_.size()) {
            out.offset = toks_[f.token_index].offset;
            out.found = toks_[f.token_index].text;
        } else {
            out.offset = source_size_;
        }
        return out;
    }

    const Failure& furthest() const { return furthest_; }

private:
    std::vector<Token> toks_;
    std::size_t source_size_;
    std::vector<SyntaxNode> nodes_;
    std::size_t pos_ = 0;
    Failure furthest_{0, "input"};
    bool in_case_label_ = false;  // `case A -> x` is a rule, not a lambda

    // ---- token helpers ----

    bool eof() const { return pos_ >= toks_.size(); }
    const Token* peek(std::size_t ahead = 0) const {
        return pos_ + ahead < toks_.size() ? &toks_[pos_ + ahead] : nullptr;
    }
    bool is(std::string_view text, std::size_t ahead = 0) const {
        const Token* t = peek(ahead);
        return t && t->text == text && t->kind != TokenKind::StringLiteral && t->kind != TokenKind::CharLiteral;
    }
    bool is_kw(std::string_view word, std::size_t ahead = 0) const {
        const Token* t = peek(ahead);
        return t && t->kind == TokenKind::Keyword && t->text == word;
    }
    bool is_ident(std::size_t ahead = 0) const {
        const Token* t = peek(ahead);
        return t && t->kind == TokenKind::Identifier;
    }
    bool is_primitive(std::size_t ahead = 0) const {
        const Token* t = peek(ahead);
        return t && t->kind == TokenKind::Keyword && contains(kPrimitives, t->text);
    }
    // Two tokens with no gap between them in the source.
    bool adjacent(std::size_t a, std::size_t b) const {
        return b < toks_.size() && toks_[a].offset + toks_[a].text.size() == toks_[b].offset;
    }

    [[noreturn]] void fail(std::string expected) {
        Failure f{pos_, std::move(expected)};
        if (f.token_index >= furthest_.token_index) furthest_ = f;
        throw f;
    }

    void expect(std::string_view text) {
        if (!is(text)) fail("'" + std::string(text) + "'");
        ++pos_;
    }
    bool accept(std::string_view text) {
        if (!is(text)) return false;
        ++pos_;
        return true;
    }

    // ---- node helpers ----

    std::size_t make(std::string kind, std::size_t begin, std::vector<std::size_t> children = {}, std::string text = {}) {
        nodes_.push_back({std::move(kind), std::move(children), begin, pos_, std::move(text)});
        return nodes_.size() - 1;
    }

    std::size_t identifier(std::string kind = "Identifier") {
        if (!is_ident()) fail("identifier");
        const std::size_t begin = pos_++;
        return make(std::move(kind), begin, {}, toks_[begin].text);
    }

    // Runs `fn` speculatively; on failure restores the position and node list.
    template <typename Fn>
    std::optional<std::size_t> attempt(Fn&& fn) {
        const std::size_t saved_pos = pos_;
        const std::size_t saved_nodes = nodes_.size();
        const bool saved_label = in_case_label_;
        try {
            return fn();
        } catch (const Failure&) {
            pos_ = saved_pos;
            nodes_.resize(saved_nodes);
            in_case_label_ = saved_label;
            return std::nullopt;
        }
    }

    // ---- declarations ----

    std::size_t qualified_name() {
        const std::size_t begin = pos_;
        std::vector<std::size_t> parts{identifier()};
        while (is(".") && is_ident(1)) {
            ++pos_;
            parts.push_back(identifier());
        }
        return make("QualifiedName", begin, std::move(parts));
    }

    std::size_t package_decl() {
        const std::size_t begin = pos_++;
        std::vector<std::size_t> kids{qualified_name()};
        expect(";");
        return make("PackageDeclaration", begin, std::move(kids));
    }

    std::size_t import_decl() {
        const std::size_t begin = pos_++;
        std::vector<std::size_t> kids;
        if (is_kw("static")) kids.push_back(make_modifier());
        kids.push_back(qualified_name());
        if (accept(".")) expect("*");
        expect(";");
        return make("ImportDeclaration", begin, std::move(kids));
    }

    std::size_t make_modifier() {
        const std::size_t begin = pos_++;
        return make("Modifier", begin, {}, toks_[begin].text);
    }

    std::size_t annotation() {
        const std::size_t begin = pos_;
        expect("@");
        std::vector<std::size_t> kids{qualified_name()};
        if (accept("(")) {
            if (!is(")")) {
                if (is_ident() && is("=", 1)) {
                    do {
                        const std::size_t pair_begin = pos_;
                        std::vector<std::size_t> pair{identifier()};
                        expect("=");
                        pair.push_back(element_value());
                        kids.push_back(make("ElementValuePair", pair_begin, std::move(pair)));
                    } while (accept(","));
                } else {
                    kids.push_back(element_value());
                }
            }
            expect(")");
        }
        return make("Annotation", begin, std::move(kids));
    }

    std::size_t element_value() {
        if (is("@")) return annotation();
        if (is("{")) return array_initializer();
        return expression();
    }

    std::vector<std::size_t> modifiers() {
        std::vector<std::size_t> out;
        while (true) {
            if (is("@") && !is_kw("interface", 1)) {
                out.push_back(annotation());
            } else if (const Token* t = peek(); t && t->kind == TokenKind::Keyword && contains(kModifiers, t->text)) {
                // `default` inside a switch never reaches here.
                out.push_back(make_modifier());
            } else {
                return out;
            }
        }
    }

    std::size_t member_decl(bool in_class) {
        const std::size_t begin = pos_;
        if (accept(";")) return make("EmptyDeclaration", begin);
        if (in_class && is("{")) return make("Initializer", begin, {block()});
        if (in_class && is_kw("static") && is("{", 1)) {
            std::vector<std::size_t> kids{make_modifier()};
            kids.push_back(block());
            return make("Initializer", begin, std::move(kids));
        }
        std::vector<std::size_t> kids = modifiers();
        if (is_kw("class") || is_kw("interface") || is_kw("enum") || (is("@") && is_kw("interface", 1)) ||
            (is_ident() && toks_[pos_].text == "record" && is_ident(1))) {
            return type_decl(begin, std::move(kids));
        }
        if (is("<")) kids.push_back(type_parameters());
        if (is_ident() && is("(", 1)) {
            kids.push_back(identifier());
            kids.push_back(formal_parameters());
            if (is_kw("throws")) kids.push_back(throws_clause());
            kids.push_back(block());
            return make("ConstructorDeclaration", begin, std::move(kids));
        }
        if (is_kw("void")) {
            const std::size_t vb = pos_++;
            kids.push_back(make("VoidType", vb));
        } else {
            kids.push_back(type());
        }
        if (is_ident() && is("(", 1)) {
            kids.push_back(identifier());
            kids.push_back(formal_parameters());
            while (is("[") && is("]", 1)) pos_ += 2;
            if (is_kw("throws")) kids.push_back(throws_clause());
            if (is_kw("default")) {
                ++pos_;
                kids.push_back(element_value());
                expect(";");
            } else if (!accept(";")) {
                kids.push_back(block());
            }
            return make("MethodDeclaration", begin, std::move(kids));
        }
        variable_declarators(kids);
        expect(";");
        return make("FieldDeclaration", begin, std::move(kids));
    }

    std::size_t type_decl(std::size_t begin, std::vector<std::size_t> kids) {
        std::string kind;
        if (is("@")) {
            pos_ += 2;
            kind = "AnnotationTypeDeclaration";
        } else {
            const std::string word = toks_[pos_++].text;
            kind = word == "class" ? "ClassDeclaration"
                 : word == "interface" ? "InterfaceDeclaration"
                 : word == "enum" ? "EnumDeclaration"
                                  : "RecordDeclaration";
        }
        kids.push_back(identifier());
        if (is("<")) kids.push_back(type_parameters());
        if (kind == "RecordDeclaration") kids.push_back(formal_parameters());
        if (is_kw("extends")) {
            const std::size_t eb = pos_++;
            std::vector<std::size_t> types{type()};
            while (accept(",")) types.push_back(type());
            kids.push_back(make("ExtendsClause", eb, std::move(types)));
        }
        if (is_kw("implements")) {
            const std::size_t ib = pos_++;
            std::vector<std::size_t> types{type()};
            while (accept(",")) types.push_back(type());
            kids.push_back(make("ImplementsClause", ib, std::move(types)));
        }
        if (is_ident() && toks_[pos_].text == "permits") {
            ++pos_;
            type();
            while (accept(",")) type();
        }
        kids.push_back(kind == "EnumDeclaration" ? enum_body() : class_body());
        return make(std::move(kind), begin, std::move(kids));
    }

    std::size_t class_body() {
        const std::size_t begin = pos_;
        expect("{");
        std::vector<std::size_t> kids;
        while (!is("}")) {
            if (eof()) fail("'}'");
            kids.push_back(member_decl(true));
        }
        ++pos_;
        return make("ClassBody", begin, std::move(kids));
    }

    std::size_t enum_body() {
        const std::size_t begin = pos_;
        expect("{");
        std::vector<std::size_t> kids;
        while (is_ident() || is("@")) {
            const std::size_t cb = pos_;
            std::vector<std::size_t> constant = modifiers();
            constant.push_back(identifier());
            if (is("(")) constant.push_back(arguments());
            if (is("{")) constant.push_back(class_body());
            kids.push_back(make("EnumConstant", cb, std::move(constant)));
            if (!accept(",")) break;
        }
        if (accept(";")) {
            while (!is("}")) {
                if (eof()) fail("'}'");
                kids.push_back(member_decl(true));
            }
        }
        expect("}");
        return make("EnumBody", begin, std::move(kids));
    }

    std::size_t type_parameters() {
        const std::size_t begin = pos_;
        expect("<");
        std::vector<std::size_t> kids;
        do {
            const std::size_t pb = pos_;
            std::vector<std::size_t> param;
            while (is("@")) param.push_back(annotation());
            param.push_back(identifier());
            if (is_kw("extends")) {
                ++pos_;
                param.push_back(type());
                while (accept("&")) param.push_back(type());
            }
            kids.push_back(make("TypeParameter", pb, std::move(param)));
        } while (accept(","));
        expect(">");
        return make("TypeParameters", begin, std::move(kids));
    }

    std::size_t throws_clause() {
        const std::size_t begin = pos_++;
        std::vector<std::size_t> kids{type()};
        while (accept(",")) kids.push_back(type());
        return make("ThrowsClause", begin, std::move(kids));
    }

    std::size_t formal_parameters() {
        const std::size_t begin = pos_;
        expect("(");
        std::vector<std::size_t> kids;
        if (!is(")")) {
            do {
                const std::size_t pb = pos_;
                std::vector<std::size_t> param = modifiers();
                param.push_back(type());
                const bool varargs = accept("...");
                param.push_back(identifier());
                while (is("[") && is("]", 1)) pos_ += 2;
                kids.push_back(make(varargs ? "VarargsParameter" : "FormalParameter", pb, std::move(param)));
            } while (accept(","));
        }
        expect(")");
        return make("FormalParameters", begin, std::move(kids));
    }

    void variable_declarators(std::vector<std::size_t>& into) {
        do {
            const std::size_t db = pos_;
            std::vector<std::size_t> decl{identifier()};
            while (is("[") && is("]", 1)) pos_ += 2;
            if (accept("=")) decl.push_back(is("{") ? array_initializer() : expression());
            into.push_back(make("VariableDeclarator", db, std::move(decl)));
        } while (accept(","));
    }

    // ---- types ----

    std::size_t type() {
        const std::size_t begin = pos_;
        std::vector<std::size_t> kids;
        while (is("@")) kids.push_back(annotation());
        if (is_primitive()) {
            const std::size_t pb = pos_++;
            kids.push_back(make("PrimitiveType", pb, {}, toks_[pb].text));
        } else {
            kids.push_back(identifier());
            if (is("<")) kids.push_back(type_arguments());
            while (is(".") && is_ident(1)) {
                ++pos_;
                kids.push_back(identifier());
                if (is("<")) kids.push_back(type_arguments());
            }
        }
        std::string kind = "Type";
        while (is("[") && is("]", 1)) {
            pos_ += 2;
            kind = "ArrayType";
        }
        return make(std::move(kind), begin, std::move(kids));
    }

    std::size_t type_arguments() {
        const std::size_t begin = pos_;
        expect("<");
        std::vector<std::size_t> kids;
        if (!is(">")) {
            do {
                if (is("?")) {
                    const std::size_t wb = pos_++;
                    std::vector<std::size_t> bound;
                    if (is_kw("extends") || is_kw("super")) {
                        ++pos_;
                        bound.push_back(type());
                    }
                    kids.push_back(make("Wildcard", wb, std::move(bound)));
                } else {
                    kids.push_back(type());
                }
            } while (accept(","));
        }
        expect(">");
        return make("TypeArguments", begin, std::move(kids));
    }

    // ---- statements ----

    std::size_t block() {
        const std::size_t begin = pos_;
        expect("{");
        std::vector<std::size_t> kids;
        while (!is("}")) {
            if (eof()) fail("'}'");
            kids.push_back(statement());
        }
        ++pos_;
        return make("Block", begin, std::move(kids));
    }

    // `final int x = 1, y;` without the trailing semicolon.
    std::size_t local_variable_head() {
        const std::size_t begin = pos_;
        std::vector<std::size_t> kids = modifiers();
        kids.push_back(type());
        if (!is_ident()) fail("identifier");
        if (!(is("=", 1) || is(";", 1) || is(",", 1) || is("[", 1) || is(":", 1))) fail("declarator");
        variable_declarators(kids);
        return make("LocalVariableDeclaration", begin, std::move(kids));
    }

    bool could_start_declaration() const {
        return is_ident() || is_primitive() || is_kw("final") || is("@");
    }

    std::size_t statement() {
        const std::size_t begin = pos_;
        if (is("{")) return block();
        if (accept(";")) return make("EmptyStatement", begin);
        if (is_kw("class") || is_kw("interface") || is_kw("enum") || (is_kw("abstract") && is_kw("class", 1))) {
            return make("LocalClassDeclaration", begin, {member_decl(true)});
        }
        if (is_ident() && is(":", 1) && !is(":", 2)) {
            std::vector<std::size_t> kids{identifier()};
            ++pos_;
            kids.push_back(statement());
            return make("LabeledStatement", begin, std::move(kids));
        }
        if (is_kw("if")) {
            ++pos_;
            std::vector<std::size_t> kids{par_expression(), statement()};
            if (is_kw("else")) {
                ++pos_;
                kids.push_back(statement());
            }
            return make("IfStatement", begin, std::move(kids));
        }
        if (is_kw("while")) {
            ++pos_;
            std::vector<std::size_t> kids{par_expression(), statement()};
            return make("WhileStatement", begin, std::move(kids));
        }
        if (is_kw("do")) {
            ++pos_;
            std::vector<std::size_t> kids{statement()};
            if (!is_kw("while")) fail("'while'");
            ++pos_;
            kids.push_back(par_expression());
            expect(";");
            return make("DoStatement", begin, std::move(kids));
        }
        if (is_kw("for")) return for_statement();
        if (is_kw("return")) {
            ++pos_;
            std::vector<std::size_t> kids;
            if (!is(";")) kids.push_back(expression());
            expect(";");
            return make("ReturnStatement", begin, std::move(kids));
        }
        if (is_kw("break") || is_kw("continue")) {
            const std::string kind = toks_[pos_++].text == "break" ? "BreakStatement" : "ContinueStatement";
            std::vector<std::size_t> kids;
            if (is_ident()) kids.push_back(identifier());
            expect(";");
            return make(kind, begin, std::move(kids));
        }
        if (is_kw("throw")) {
            ++pos_;
            std::vector<std::size_t> kids{expression()};
            expect(";");
            return make("ThrowStatement", begin, std::move(kids));
        }
        if (is_kw("assert")) {
            ++pos_;
            std::vector<std::size_t> kids{expression()};
            if (accept(":")) kids.push_back(expression());
            expect(";");
            return make("AssertStatement", begin, std::move(kids));
        }
        if (is_kw("synchronized")) {
            ++pos_;
            std::vector<std::size_t> kids{par_expression(), block()};
            return make("SynchronizedStatement", begin, std::move(kids));
        }
        if (is_kw("try")) return try_statement();
        if (is_kw("switch")) return switch_construct("SwitchStatement");
        if (is_ident() && toks_[pos_].text == "yield" && !is("=", 1) && !is("(", 1) && !is(".", 1)) {
            ++pos_;
            std::vector<std::size_t> kids{expression()};
            expect(";");
            return make("YieldStatement", begin, std::move(kids));
        }
        if (could_start_declaration()) {
            if (auto decl = attempt([&] {
                    const std::size_t d = local_variable_head();
                    expect(";");
                    nodes_[d].token_end = pos_;
                    return d;
                })) {
                return *decl;
            }
        }
        std::vector<std::size_t> kids{expression()};
        expect(";");
        return make("ExpressionStatement", begin, std::move(kids));
    }

    std::size_t par_expression() {
        const std::size_t begin = pos_;
        expect("(");
        std::vector<std::size_t> kids{expression()};
        expect(")");
        return make("ParenthesizedExpression", begin, std::move(kids));
    }

    std::size_t for_statement() {
        const std::size_t begin = pos_++;
        expect("(");
        // Enhanced form: `for (T x : xs)`.
        if (auto head = attempt([&] {
                const std::size_t hb = pos_;
                std::vector<std::size_t> kids = modifiers();
                kids.push_back(type());
                kids.push_back(identifier());
                expect(":");
                return make("EnhancedForVariable", hb, std::move(kids));
            })) {
            std::vector<std::size_t> kids{*head, expression()};
            expect(")");
            kids.push_back(statement());
            return make("EnhancedForStatement", begin, std::move(kids));
        }
        std::vector<std::size_t> kids;
        const std::size_t init_begin = pos_;
        std::vector<std::size_t> init;
        if (!is(";")) {
            std::optional<std::size_t> decl;
            if (could_start_declaration()) decl = attempt([&] { return local_variable_head(); });
            if (decl) {
                init.push_back(*decl);
            } else {
                init.push_back(expression());
                while (accept(",")) init.push_back(expression());
            }
        }
        kids.push_back(make("ForInit", init_begin, std::move(init)));
        expect(";");
        const std::size_t cond_begin = pos_;
        std::vector<std::size_t> cond;
        if (!is(";")) cond.push_back(expression());
        kids.push_back(make("ForCondition", cond_begin, std::move(cond)));
        expect(";");
        const std::size_t update_begin = pos_;
        std::vector<std::size_t> update;
        if (!is(")")) {
            update.push_back(expression());
            while (accept(",")) update.push_back(expression());
        }
        kids.push_back(make("ForUpdate", update_begin, std::move(update)));
        expect(")");
        kids.push_back(statement());
        return make("ForStatement", begin, std::move(kids));
    }

    std::size_t try_statement() {
        const std::size_t begin = pos_++;
        std::vector<std::size_t> kids;
        if (is("(")) {
            const std::size_t rb = pos_++;
            std::vector<std::size_t> resources;
            while (!is(")")) {
                const std::size_t res_begin = pos_;
                auto decl = attempt([&] {
                    std::vector<std::size_t> r = modifiers();
                    r.push_back(type());
                    r.push_back(identifier());
                    expect("=");
                    r.push_back(expression());
                    return make("Resource", res_begin, std::move(r));
                });
                resources.push_back(decl ? *decl : make("Resource", res_begin, {expression()}));
                if (!accept(";")) break;
            }
            expect(")");
            kids.push_back(make("ResourceSpecification", rb, std::move(resources)));
        }
        kids.push_back(block());
        bool handled = false;
        while (is_kw("catch")) {
            const std::size_t cb = pos_++;
            expect("(");
            const std::size_t pb = pos_;
            std::vector<std::size_t> param = modifiers();
            param.push_back(type());
            while (accept("|")) param.push_back(type());
            param.push_back(identifier());
            const std::size_t p = make("CatchParameter", pb, std::move(param));
            expect(")");
            std::vector<std::size_t> clause{p, block()};
            kids.push_back(make("CatchClause", cb, std::move(clause)));
            handled = true;
        }
        if (is_kw("finally")) {
            const std::size_t fb = pos_++;
            kids.push_back(make("FinallyClause", fb, {block()}));
            handled = true;
        }
        if (!handled && kids.size() == 1) fail("'catch' or 'finally'");
        return make("TryStatement", begin, std::move(kids));
    }

    std::size_t switch_construct(std::string kind) {
        const std::size_t begin = pos_++;
        std::vector<std::size_t> kids{par_expression()};
        expect("{");
        while (!is("}")) {
            if (eof()) fail("'}'");
            const std::size_t cb = pos_;
            std::vector<std::size_t> label;
            if (is_kw("default")) {
                ++pos_;
            } else if (is_kw("case")) {
                ++pos_;
                in_case_label_ = true;
                label.push_back(ternary());
                while (accept(",")) label.push_back(ternary());
                in_case_label_ = false;
            } else {
                fail("'case' or 'default'");
            }
            std::vector<std::size_t> body;
            std::string case_kind = "SwitchCase";
            if (accept("->")) {
                case_kind = "SwitchRule";
                if (is("{")) {
                    body.push_back(block());
                } else if (is_kw("throw")) {
                    body.push_back(statement());
                } else {
                    const std::size_t eb = pos_;
                    std::vector<std::size_t> e{expression()};
                    expect(";");
                    body.push_back(make("ExpressionStatement", eb, std::move(e)));
                }
            } else {
                expect(":");
                while (!is("}") && !is_kw("case") && !is_kw("default")) {
                    if (eof()) fail("'}'");
                    body.push_back(statement());
                }
            }
            label.insert(label.end(), body.begin(), body.end());
            kids.push_back(make(std::move(case_kind), cb, std::move(label)));
        }
        ++pos_;
        return make(std::move(kind), begin, std::move(kids));
    }

    // ---- expressions ----

    // Reassembles an operator that the split lexer broke at '>'. Returns the
    // operator text and how many tokens it spans.
    std::pair<std::string, std::size_t> peek_operator() const {
        const Token* t = peek();
        if (!t || (t->kind != TokenKind::Operator && t->kind != TokenKind::Keyword)) return {"", 0};
        if (t->text != ">") return {t->text, 1};
        std::string op = ">";
        std::size_t count = 1;
        while (count < 3 && pos_ + count < toks_.size() && toks_[pos_ + count].text == ">" &&
               adjacent(pos_ + count - 1, pos_ + count)) {
            op += ">";
            ++count;
        }
        if (pos_ + count < toks_.size() && adjacent(pos_ + count - 1, pos_ + count) &&
            toks_[pos_ + count].text == "=") {
            op += "=";
            ++count;
        }
        return {op, count};
    }

    std::size_t expression() {
        const std::size_t begin = pos_;
        const std::size_t lhs = ternary();
        auto [op, count] = peek_operator();
        if (count > 0 && contains(kAssignOps, op)) {
            pos_ += count;
            const std::size_t rhs = is("{") ? array_initializer() : expression();
            return make("AssignmentExpression", begin, {lhs, rhs}, op);
        }
        return lhs;
    }

    std::size_t ternary() {
        const std::size_t begin = pos_;
        const std::size_t cond = binary(1);
        if (!accept("?")) return cond;
        const std::size_t a = ternary_branch();
        expect(":");
        const std::size_t b = ternary_branch();
        return make("ConditionalExpression", begin, {cond, a, b});
    }

    std::size_t ternary_branch() {
        if (lambda_ahead()) return lambda();
        return ternary();
    }

    std::size_t binary(int min_prec) {
        const std::size_t begin = pos_;
        std::size_t lhs = unary();
        while (true) {
            auto [op, count] = peek_operator();
            const int prec = count ? binary_precedence(op) : 0;
            if (prec < min_prec || prec == 0) return lhs;
            // `>>=` and friends are assignments, handled by the caller.
            if (contains(kAssignOps, op)) return lhs;
            pos_ += count;
            if (op == "instanceof") {
                std::vector<std::size_t> kids{lhs};
                if (is_kw("final")) kids.push_back(make_modifier());
                kids.push_back(type());
                if (is_ident()) kids.push_back(identifier());
                lhs = make("InstanceOfExpression", begin, std::move(kids));
                continue;
            }
            const std::size_t rhs = binary(prec + 1);
            lhs = make("BinaryExpression", begin, {lhs, rhs}, op);
        }
    }

    std::size_t unary() {
        const std::size_t begin = pos_;
        if (is("+") || is("-") || is("++") || is("--") || is("!") || is("~")) {
            const std::string op = toks_[pos_++].text;
            return make("UnaryExpression", begin, {unary()}, op);
        }
        if (is("(")) {
            if (auto cast = attempt([&] { return cast_expression(); })) return *cast;
        }
        std::size_t e = postfix_chain(primary());
        while (is("++") || is("--")) {
            const std::string op = toks_[pos_++].text;
            e = make("PostfixExpression", begin, {e}, op);
        }
        return e;
    }

    std::size_t cast_expression() {
        const std::size_t begin = pos_;
        expect("(");
        const bool primitive = is_primitive() && (is(")", 1) || is("[", 1));
        std::vector<std::size_t> kids{type()};
        while (accept("&")) kids.push_back(type());
        expect(")");
        if (!primitive) {
            // A reference cast must be followed by something that cannot
            // continue a binary expression.
            const Token* t = peek();
            if (!t) fail("expression");
            const bool ok = t->kind == TokenKind::Identifier || t->kind == TokenKind::IntegerLiteral ||
                            t->kind == TokenKind::FloatLiteral || t->kind == TokenKind::StringLiteral ||
                            t->kind == TokenKind::CharLiteral || t->text == "(" || t->text == "!" || t->text == "~" ||
                            (t->kind == TokenKind::Keyword &&
                             (t->text == "this" || t->text == "super" || t->text == "new" || t->text == "true" ||
                              t->text == "false" || t->text == "null" || contains(kPrimitives, t->text)));
            if (!ok) fail("cast operand");
        }
        kids.push_back(lambda_ahead() ? lambda() : unary());
        return make("CastExpression", begin, std::move(kids));
    }

    bool lambda_ahead() const {
        if (in_case_label_) return false;
        if (is_ident() && is("->", 1)) return true;
        if (!is("(")) return false;
        // Find the matching parenthesis and look for an arrow after it.
        std::size_t depth = 0;
        for (std::size_t i = pos_; i < toks_.size(); ++i) {
            if (toks_[i].kind != TokenKind::Separator) continue;
            if (toks_[i].text == "(") ++depth;
            if (toks_[i].text == ")" && --depth == 0) {
                return i + 1 < toks_.size() && toks_[i + 1].text == "->";
            }
        }
        return false;
    }

    std::size_t lambda() {
        const std::size_t begin = pos_;
        std::vector<std::size_t> kids;
        const std::size_t params_begin = pos_;
        std::vector<std::size_t> params;
        if (is_ident()) {
            params.push_back(identifier());
        } else {
            expect("(");
            if (!is(")")) {
                do {
                    const std::size_t pb = pos_;
                    if (is_ident() && (is(",", 1) || is(")", 1))) {
                        params.push_back(identifier());
                    } else {
                        std::vector<std::size_t> p = modifiers();
                        p.push_back(type());
                        p.push_back(identifier());
                        params.push_back(make("FormalParameter", pb, std::move(p)));
                    }
                } while (accept(","));
            }
            expect(")");
        }
        kids.push_back(make("LambdaParameters", params_begin, std::move(params)));
        expect("->");
        kids.push_back(is("{") ? block() : expression());
        return make("LambdaExpression", begin, std::move(kids));
    }

    std::size_t arguments() {
        const std::size_t begin = pos_;
        expect("(");
        std::vector<std::size_t> kids;
        if (!is(")")) {
            do {
                kids.push_back(lambda_ahead() ? lambda() : expression());
            } while (accept(","));
        }
        expect(")");
        return make("Arguments", begin, std::move(kids));
    }

    std::size_t array_initializer() {
        const std::size_t begin = pos_;
        expect("{");
        std::vector<std::size_t> kids;
        while (!is("}")) {
            kids.push_back(is("{") ? array_initializer() : expression());
            if (!accept(",")) break;
        }
        expect("}");
        return make("ArrayInitializer", begin, std::move(kids));
    }

    std::size_t literal() {
        const std::size_t begin = pos_++;
        const Token& t = toks_[begin];
        std::string kind;
        switch (t.kind) {
            case TokenKind::IntegerLiteral: kind = "IntegerLiteral"; break;
            case TokenKind::FloatLiteral: kind = "FloatLiteral"; break;
            case TokenKind::StringLiteral: kind = "StringLiteral"; break;
            case TokenKind::CharLiteral: kind = "CharLiteral"; break;
            default: kind = t.text == "null" ? "NullLiteral" : "BooleanLiteral"; break;
        }
        return make(std::move(kind), begin, {}, t.text);
    }

    std::size_t primary() {
        const std::size_t begin = pos_;
        const Token* t = peek();
        if (!t) fail("expression");
        switch (t->kind) {
            case TokenKind::IntegerLiteral:
            case TokenKind::FloatLiteral:
            case TokenKind::StringLiteral:
            case TokenKind::CharLiteral: return literal();
            default: break;
        }
        if (lambda_ahead()) return lambda();
        if (is("(")) return par_expression();
        if (is_kw("true") || is_kw("false") || is_kw("null")) return literal();
        if (is_kw("this")) {
            ++pos_;
            if (is("(")) return make("ExplicitConstructorInvocation", begin, {arguments()}, "this");
            return make("ThisExpression", begin);
        }
        if (is_kw("super")) {
            ++pos_;
            if (is("(")) return make("ExplicitConstructorInvocation", begin, {arguments()}, "super");
            return make("SuperExpression", begin);
        }
        if (is_kw("new")) return creator();
        if (is_kw("switch")) return switch_construct("SwitchExpression");
        if (is_primitive() || is_kw("void")) {
            // int.class, int[].class, int[]::new
            std::size_t ty;
            if (is_kw("void")) {
                ++pos_;
                ty = make("VoidType", begin);
            } else {
                ty = type();
            }
            if (accept("::")) {
                if (!is_kw("new")) fail("'new'");
                ++pos_;
                return make("MethodReference", begin, {ty}, "new");
            }
            expect(".");
            if (!is_kw("class")) fail("'class'");
            ++pos_;
            return make("ClassLiteral", begin, {ty});
        }
        if (is_ident()) {
            // Generic type method reference: List<String>::size
            if (is("<", 1)) {
                if (auto ref = attempt([&] {
                        const std::size_t ty = type();
                        expect("::");
                        std::vector<std::size_t> kids{ty};
                        if (is_kw("new")) {
                            ++pos_;
                            return make("MethodReference", begin, std::move(kids), "new");
                        }
                        kids.push_back(identifier());
                        return make("MethodReference", begin, std::move(kids));
                    })) {
                    return *ref;
                }
            }
            // Array type used before ::new or .class
            if (is("[", 1) && is("]", 2)) {
                const std::size_t ty = type();
                if (accept("::")) {
                    if (!is_kw("new")) fail("'new'");
                    ++pos_;
                    return make("MethodReference", begin, {ty}, "new");
                }
                expect(".");
                if (!is_kw("class")) fail("'class'");
                ++pos_;
                return make("ClassLiteral", begin, {ty});
            }
            const std::size_t name = identifier("Name");
            if (is("(")) {
                nodes_[name].kind = "Identifier";
                return make("MethodInvocation", begin, {name, arguments()});
            }
            return name;
        }
        fail("expression");
    }

    std::size_t postfix_chain(std::size_t e) {
        const std::size_t begin = nodes_[e].token_begin;
        while (true) {
            if (is(".")) {
                ++pos_;
                if (is_kw("class")) {
                    ++pos_;
                    e = make("ClassLiteral", begin, {e});
                } else if (is_kw("this")) {
                    ++pos_;
                    e = make("QualifiedThis", begin, {e});
                } else if (is_kw("new")) {
                    e = make("QualifiedCreation", begin, {e, creator()});
                } else if (is_kw("super")) {
                    ++pos_;
                    e = make("QualifiedSuper", begin, {e});
                } else {
                    std::vector<std::size_t> kids{e};
                    if (is("<")) kids.push_back(type_arguments());
                    kids.push_back(identifier());
                    if (is("(")) {
                        kids.push_back(arguments());
                        e = make("MethodInvocation", begin, std::move(kids));
                    } else {
                        e = make("FieldAccess", begin, std::move(kids));
                    }
                }
            } else if (is("[")) {
                ++pos_;
                const std::size_t index = expression();
                expect("]");
                e = make("ArrayAccess", begin, {e, index});
            } else if (is("::")) {
                ++pos_;
                if (is_kw("new")) {
                    ++pos_;
                    e = make("MethodReference", begin, {e}, "new");
                } else {
                    e = make("MethodReference", begin, {e, identifier()});
                }
            } else {
                return e;
            }
        }
    }

    std::size_t creator() {
        const std::size_t begin = pos_++;  // 'new'
        std::vector<std::size_t> kids;
        if (is("<")) kids.push_back(type_arguments());
        // Element/class type without array dimensions.
        const std::size_t tb = pos_;
        std::vector<std::size_t> type_kids;
        while (is("@")) type_kids.push_back(annotation());
        if (is_primitive()) {
            const std::size_t pb = pos_++;
            type_kids.push_back(make("PrimitiveType", pb, {}, toks_[pb].text));
        } else {
            type_kids.push_back(identifier());
            if (is("<")) type_kids.push_back(type_arguments());
            while (is(".") && is_ident(1)) {
                ++pos_;
                type_kids.push_back(identifier());
                if (is("<")) type_kids.push_back(type_arguments());
            }
        }
        kids.push_back(make("Type", tb, std::move(type_kids)));
        if (is("[")) {
            std::vector<std::size_t> dims;
            while (is("[")) {
                const std::size_t db = pos_++;
                if (accept("]")) {
                    dims.push_back(make("Dimension", db));
                } else {
                    std::vector<std::size_t> size{expression()};
                    expect("]");
                    dims.push_back(make("Dimension", db, std::move(size)));
                }
            }
            kids.insert(kids.end(), dims.begin(), dims.end());
            if (is("{")) kids.push_back(array_initializer());
            return make("ArrayCreationExpression", begin, std::move(kids));
        }
        kids.push_back(arguments());
        if (is("{")) kids.push_back(class_body());
        return make("ObjectCreationExpression", begin, std::move(kids));
    }
};

}  // namespace

ParseOutcome parse_java_subset(std::string_view source) {
    std::vector<Token> tokens;
    try {
        tokens = lex(source, LexOptions{.split_angle_brackets = true});
    } catch (const LexError& e) {
        ParseFailure f;
        f.offset = e.offset;
        f.expected = "valid token";
        f.found = e.message;
        return f;
    }
    Parser parser(std::move(tokens), source.size());
    try {
        return parser.run();
    } catch (const Failure&) {
        // Report the deepest point reached across all speculative branches.
        return parser.failure_from(parser.furthest());
    }
}

}  // namespace tracefind::java
