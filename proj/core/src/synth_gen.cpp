#include "tracefind/synth_gen.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <cstdio>
#include <sstream>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "tracefind/error.hpp"
#include "tracefind/hash.hpp"
#include "tracefind/rng.hpp"

namespace tracefind {

namespace {

using ojson = nlohmann::ordered_json;

// Collections a statement needs declared up front.
enum class Need { None, Sb, Out, Counts, Seen, Stack };

struct Template {
    std::string text;  // `{x}` is the current string variable
    Need need;
    std::vector<std::string> calls;
};

// Helper bodies; an entry starting with '@' calls another helper.
struct HelperDef {
    std::string name;
    std::vector<std::string> body;
};

const std::string kStr = "java.lang.String";
const std::string kSb = "java.lang.StringBuilder";

std::string sig(const std::string& owner, const std::string& rest) {
    return owner + "." + rest;
}

const std::vector<Template>& declarations() {
    static const std::vector<Template> table = {
        {"StringBuilder sb = new StringBuilder();", Need::Sb, {sig(kSb, "<init>(): void")}},
        {"List<String> out = new ArrayList<>();", Need::Out, {"java.util.ArrayList.<init>(): void"}},
        {"Map<String, Integer> counts = new HashMap<>();", Need::Counts, {"java.util.HashMap.<init>(): void"}},
        {"Set<String> seen = new HashSet<>();", Need::Seen, {"java.util.HashSet.<init>(): void"}},
        {"Deque<String> stack = new ArrayDeque<>();", Need::Stack, {"java.util.ArrayDeque.<init>(): void"}},
    };
    return table;
}

const std::vector<Template>& atoms() {
    static const std::vector<Template> table = {
        {"sb.append({x});", Need::Sb, {sig(kSb, "append(java.lang.String): java.lang.StringBuilder")}},
        {"sb.append({x}.length());", Need::Sb,
         {sig(kStr, "length(): int"), sig(kSb, "append(int): java.lang.StringBuilder")}},
        {"sb.reverse();", Need::Sb, {sig(kSb, "reverse(): java.lang.StringBuilder")}},
        {"sb.insert(0, {x});", Need::Sb, {sig(kSb, "insert(int, java.lang.String): java.lang.StringBuilder")}},
        {"sb.setLength(0);", Need::Sb, {sig(kSb, "setLength(int): void")}},
        {"out.add({x});", Need::Out, {"java.util.ArrayList.add(java.lang.Object): boolean"}},
        {"out.add({x}.trim());", Need::Out,
         {sig(kStr, "trim(): java.lang.String"), "java.util.ArrayList.add(java.lang.Object): boolean"}},
        {"out.add({x}.toUpperCase());", Need::Out,
         {sig(kStr, "toUpperCase(): java.lang.String"), "java.util.ArrayList.add(java.lang.Object): boolean"}},
        {"out.remove({x});", Need::Out, {"java.util.ArrayList.remove(java.lang.Object): boolean"}},
        {"Collections.sort(out);", Need::Out, {"java.util.Collections.sort(java.util.List): void"}},
        {"Collections.reverse(out);", Need::Out, {"java.util.Collections.reverse(java.util.List): void"}},
        {"counts.put({x}, counts.getOrDefault({x}, 0) + 1);", Need::Counts,
         {"java.lang.Integer.valueOf(int): java.lang.Integer",
          "java.util.HashMap.getOrDefault(java.lang.Object, java.lang.Object): java.lang.Object",
          "java.lang.Integer.intValue(): int", "java.lang.Integer.valueOf(int): java.lang.Integer",
          "java.util.HashMap.put(java.lang.Object, java.lang.Object): java.lang.Object"}},
        {"counts.remove({x});", Need::Counts, {"java.util.HashMap.remove(java.lang.Object): java.lang.Object"}},
        {"seen.add({x});", Need::Seen, {"java.util.HashSet.add(java.lang.Object): boolean"}},
        {"seen.remove({x});", Need::Seen, {"java.util.HashSet.remove(java.lang.Object): boolean"}},
        {"stack.push({x});", Need::Stack, {"java.util.ArrayDeque.push(java.lang.Object): void"}},
        {"stack.pollFirst();", Need::Stack, {"java.util.ArrayDeque.pollFirst(): java.lang.Object"}},
        {"{x} = {x}.trim();", Need::None, {sig(kStr, "trim(): java.lang.String")}},
        {"{x} = {x}.toLowerCase();", Need::None, {sig(kStr, "toLowerCase(): java.lang.String")}},
        {"{x} = {x}.replace('a', 'b');", Need::None, {sig(kStr, "replace(char, char): java.lang.String")}},
        {"{x} = {x}.substring(1);", Need::None, {sig(kStr, "substring(int): java.lang.String")}},
        {"{x} = {x}.concat(\"!\");", Need::None, {sig(kStr, "concat(java.lang.String): java.lang.String")}},
        {"{x} = String.valueOf({x}.hashCode());", Need::None,
         {sig(kStr, "hashCode(): int"), sig(kStr, "valueOf(int): java.lang.String")}},
        {"{x} = Integer.toString({x}.indexOf('x'));", Need::None,
         {sig(kStr, "indexOf(int): int"), "java.lang.Integer.toString(int): java.lang.String"}},
        {"{x} = {x}.repeat(2);", Need::None, {sig(kStr, "repeat(int): java.lang.String")}},
        {"{x} = (String) Objects.requireNonNull({x});", Need::None,
         {"java.util.Objects.requireNonNull(java.lang.Object): java.lang.Object"}},
        {"{x} = Character.toString({x}.charAt(0));", Need::None,
         {sig(kStr, "charAt(int): char"), "java.lang.Character.toString(char): java.lang.String"}},
        {"Arrays.sort({x}.toCharArray());", Need::None,
         {sig(kStr, "toCharArray(): char[]"), "java.util.Arrays.sort(char[]): void"}},
        {"System.out.println({x});", Need::None, {"java.io.PrintStream.println(java.lang.String): void"}},
        {"{x} = {x}.strip();", Need::None, {sig(kStr, "strip(): java.lang.String")}},
        {"{x} = String.format(\"%s;\", {x});", Need::None,
         {sig(kStr, "format(java.lang.String, java.lang.Object[]): java.lang.String")}},
        {"{x} = {x}.intern();", Need::None, {sig(kStr, "intern(): java.lang.String")}},
    };
    return table;
}

const std::vector<Template>& conditions() {
    static const std::vector<Template> table = {
        {"if ({x}.isEmpty()) {", Need::None, {sig(kStr, "isEmpty(): boolean")}},
        {"if ({x}.length() > 3) {", Need::None, {sig(kStr, "length(): int")}},
        {"if ({x}.startsWith(\"a\")) {", Need::None, {sig(kStr, "startsWith(java.lang.String): boolean")}},
        {"if (items.isEmpty()) {", Need::None, {"java.util.ArrayList.isEmpty(): boolean"}},
        {"if (seen.contains({x})) {", Need::Seen, {"java.util.HashSet.contains(java.lang.Object): boolean"}},
        {"if (counts.containsKey({x})) {", Need::Counts, {"java.util.HashMap.containsKey(java.lang.Object): boolean"}},
    };
    return table;
}

const std::vector<Template>& returns() {
    static const std::vector<Template> table = {
        {"return s;", Need::None, {}},
        {"return sb.toString();", Need::Sb, {sig(kSb, "toString(): java.lang.String")}},
        {"return String.join(\",\", out);", Need::Out,
         {sig(kStr, "join(java.lang.CharSequence, java.lang.Iterable): java.lang.String")}},
        {"return String.valueOf(counts.size());", Need::Counts,
         {"java.util.HashMap.size(): int", sig(kStr, "valueOf(int): java.lang.String")}},
        {"return String.valueOf(seen.size());", Need::Seen,
         {"java.util.HashSet.size(): int", sig(kStr, "valueOf(int): java.lang.String")}},
        {"return String.valueOf(stack.size());", Need::Stack,
         {"java.util.ArrayDeque.size(): int", sig(kStr, "valueOf(int): java.lang.String")}},
    };
    return table;
}

const std::vector<HelperDef>& helpers() {
    static const std::vector<HelperDef> table = {
        {"clean", {sig(kStr, "trim(): java.lang.String"), sig(kStr, "toLowerCase(): java.lang.String")}},
        {"quote",
         {sig(kSb, "<init>(): void"), sig(kSb, "append(char): java.lang.StringBuilder"),
          sig(kSb, "append(java.lang.String): java.lang.StringBuilder"), sig(kSb, "append(char): java.lang.StringBuilder"),
          sig(kSb, "toString(): java.lang.String")}},
        {"checksum",
         {sig(kStr, "getBytes(): byte[]"), "java.util.zip.CRC32.<init>(): void", "java.util.zip.CRC32.update(byte[]): void",
          "java.util.zip.CRC32.getValue(): long", "java.lang.Long.toHexString(long): java.lang.String"}},
        {"blankToEmpty", {sig(kStr, "trim(): java.lang.String"), sig(kStr, "isEmpty(): boolean")}},
        {"capitalize",
         {sig(kStr, "charAt(int): char"), "java.lang.Character.toUpperCase(char): char",
          sig(kStr, "substring(int): java.lang.String"), sig(kStr, "valueOf(char): java.lang.String"),
          sig(kStr, "concat(java.lang.String): java.lang.String")}},
        {"pad",
         {sig(kStr, "length(): int"), sig(kStr, "repeat(int): java.lang.String"),
          sig(kStr, "concat(java.lang.String): java.lang.String")}},
        {"normalize", {"@clean", sig(kStr, "replace(char, char): java.lang.String")}},
        {"escape",
         {sig(kStr, "replace(java.lang.CharSequence, java.lang.CharSequence): java.lang.String"),
          sig(kStr, "replace(java.lang.CharSequence, java.lang.CharSequence): java.lang.String")}},
        {"digest", {"@checksum", sig(kStr, "toUpperCase(): java.lang.String")}},
        {"firstWord", {sig(kStr, "indexOf(int): int"), sig(kStr, "substring(int, int): java.lang.String")}},
        {"tidy", {"@normalize", "@pad"}},
        {"joinWords",
         {sig(kStr, "split(java.lang.String): java.lang.String[]"),
          sig(kStr, "join(java.lang.CharSequence, java.lang.CharSequence[]): java.lang.String")}},
    };
    return table;
}

const std::string kForHeader = "for (int i = 0; i < n; i++) {";
const std::string kForeachHeader = "for (String item : items) {";
const std::string kIterator = "java.util.ArrayList.iterator(): java.util.Iterator";
const std::string kHasNext = "java.util.ArrayList$Itr.hasNext(): boolean";
const std::string kNext = "java.util.ArrayList$Itr.next(): java.lang.Object";
constexpr std::size_t kMaxIterations = 5;

std::size_t helper_index(const std::string& name) {
    const auto& hs = helpers();
    for (std::size_t i = 0; i < hs.size(); ++i) {
        if (hs[i].name == name) return i;
    }
    throw std::logic_error("unknown helper " + name);
}

void emit_helper(std::size_t h, std::vector<CallEvent>& out) {
    out.push_back(CallEvent::boundary_enter());
    for (const auto& entry : helpers()[h].body) {
        if (entry.starts_with('@')) {
            emit_helper(helper_index(entry.substr(1)), out);
        } else {
            out.push_back(CallEvent::call(entry));
        }
    }
    out.push_back(CallEvent::boundary_exit());
}

std::string substitute(std::string text, const std::string& var) {
    for (std::size_t at = text.find("{x}"); at != std::string::npos; at = text.find("{x}", at + var.size())) {
        text.replace(at, 3, var);
    }
    return text;
}

// ---- method model ----

struct Stmt {
    enum class Kind { Atom, Helper, For, Foreach, If } kind = Kind::Atom;
    std::size_t index = 0;  // atom, helper or condition
    std::vector<Stmt> body;
    std::vector<Stmt> else_body;
    bool has_else = false;
};

struct Method {
    std::vector<Stmt> stmts;
    std::size_t ret = 0;
};

Need need_of(const Stmt& s) {
    switch (s.kind) {
        case Stmt::Kind::Atom: return atoms()[s.index].need;
        case Stmt::Kind::If: return conditions()[s.index].need;
        default: return Need::None;
    }
}

void collect_needs(const std::vector<Stmt>& stmts, std::vector<Need>& order) {
    for (const auto& s : stmts) {
        const Need n = need_of(s);
        if (n != Need::None && std::find(order.begin(), order.end(), n) == order.end()) order.push_back(n);
        collect_needs(s.body, order);
        collect_needs(s.else_body, order);
    }
}

std::vector<Need> needs(const Method& m) {
    std::vector<Need> order;
    collect_needs(m.stmts, order);
    const Need r = returns()[m.ret].need;
    if (r != Need::None && std::find(order.begin(), order.end(), r) == order.end()) order.push_back(r);
    return order;
}

const Template& declaration_for(Need n) {
    for (const auto& d : declarations()) {
        if (d.need == n) return d;
    }
    throw std::logic_error("no declaration");
}

bool has_kind(const std::vector<Stmt>& stmts, Stmt::Kind kind) {
    return std::any_of(stmts.begin(), stmts.end(), [&](const Stmt& s) {
        return s.kind == kind || has_kind(s.body, kind) || has_kind(s.else_body, kind);
    });
}

std::size_t count_ifs(const std::vector<Stmt>& stmts) {
    std::size_t n = 0;
    for (const auto& s : stmts) n += (s.kind == Stmt::Kind::If ? 1 : 0) + count_ifs(s.body) + count_ifs(s.else_body);
    return n;
}

std::size_t variation_sources(const std::vector<Stmt>& stmts) {
    return (has_kind(stmts, Stmt::Kind::For) ? 1 : 0) + (has_kind(stmts, Stmt::Kind::Foreach) ? 1 : 0) +
           std::min<std::size_t>(count_ifs(stmts), 2);
}

void render_block(const std::vector<Stmt>& stmts, const std::string& var, int depth, std::ostringstream& out) {
    const std::string pad(static_cast<std::size_t>(depth) * 4, ' ');
    for (const auto& s : stmts) {
        switch (s.kind) {
            case Stmt::Kind::Atom: out << pad << substitute(atoms()[s.index].text, var) << "\n"; break;
            case Stmt::Kind::Helper: out << pad << var << " = " << helpers()[s.index].name << "(" << var << ");\n"; break;
            case Stmt::Kind::For:
                out << pad << kForHeader << "\n";
                render_block(s.body, var, depth + 1, out);
                out << pad << "}\n";
                break;
            case Stmt::Kind::Foreach:
                out << pad << kForeachHeader << "\n";
                render_block(s.body, "item", depth + 1, out);
                out << pad << "}\n";
                break;
            case Stmt::Kind::If:
                out << pad << substitute(conditions()[s.index].text, var) << "\n";
                render_block(s.body, var, depth + 1, out);
                if (s.has_else) {
                    out << pad << "} else {\n";
                    render_block(s.else_body, var, depth + 1, out);
                }
                out << pad << "}\n";
                break;
        }
    }
}

std::string render(const Method& m, const std::string& name) {
    std::ostringstream out;
    out << "public static String " << name << "(List<String> items, String s, int n) {\n";
    for (Need n : needs(m)) out << "    " << declaration_for(n).text << "\n";
    render_block(m.stmts, "s", 1, out);
    out << "    " << returns()[m.ret].text << "\n";
    out << "}";
    return out.str();
}

struct EmitState {
    const TraceInputs& inputs;
    std::size_t next_if = 0;  // source-order ordinal of the next `if`
    std::vector<CallEvent> events;
};

void append_calls(const std::vector<std::string>& calls, std::vector<CallEvent>& out) {
    for (const auto& c : calls) out.push_back(CallEvent::call(c));
}

// Ordinals are assigned in source order, so an `if` inside a loop body keeps
// its ordinal on every iteration.
void assign_ordinals(const std::vector<Stmt>& stmts, std::size_t& next, std::map<const Stmt*, std::size_t>& out) {
    for (const auto& s : stmts) {
        if (s.kind == Stmt::Kind::If) out[&s] = next++;
        assign_ordinals(s.body, next, out);
        assign_ordinals(s.else_body, next, out);
    }
}

void emit_block(const std::vector<Stmt>& stmts, const TraceInputs& in, const std::map<const Stmt*, std::size_t>& ordinals,
                std::vector<CallEvent>& out) {
    for (const auto& s : stmts) {
        switch (s.kind) {
            case Stmt::Kind::Atom: append_calls(atoms()[s.index].calls, out); break;
            case Stmt::Kind::Helper: emit_helper(s.index, out); break;
            case Stmt::Kind::For:
                for (std::size_t i = 0; i < in.n; ++i) emit_block(s.body, in, ordinals, out);
                break;
            case Stmt::Kind::Foreach:
                out.push_back(CallEvent::call(kIterator));
                for (std::size_t i = 0; i < in.items; ++i) {
                    out.push_back(CallEvent::call(kHasNext));
                    out.push_back(CallEvent::call(kNext));
                    emit_block(s.body, in, ordinals, out);
                }
                out.push_back(CallEvent::call(kHasNext));
                break;
            case Stmt::Kind::If:
                append_calls(conditions()[s.index].calls, out);
                if (in.flags.at(ordinals.at(&s))) {
                    emit_block(s.body, in, ordinals, out);
                } else if (s.has_else) {
                    emit_block(s.else_body, in, ordinals, out);
                }
                break;
        }
    }
}

std::vector<CallEvent> emit(const Method& m, const TraceInputs& in) {
    std::vector<CallEvent> out;
    for (Need n : needs(m)) append_calls(declaration_for(n).calls, out);
    std::map<const Stmt*, std::size_t> ordinals;
    std::size_t next = 0;
    assign_ordinals(m.stmts, next, ordinals);
    emit_block(m.stmts, in, ordinals, out);
    append_calls(returns()[m.ret].calls, out);
    return out;
}

// ---- random construction ----

class Builder {
public:
    explicit Builder(Rng& rng) : rng_(rng) {}

    Stmt atom() {
        Stmt s;
        s.kind = Stmt::Kind::Atom;
        s.index = rng_.below(atoms().size());
        return s;
    }

    Stmt helper() {
        Stmt s;
        s.kind = Stmt::Kind::Helper;
        s.index = rng_.below(helpers().size());
        return s;
    }

    Stmt leaf() { return rng_.bernoulli(0.8) ? atom() : helper(); }

    Stmt branch(bool nested) {
        Stmt s;
        s.kind = Stmt::Kind::If;
        s.index = rng_.below(conditions().size());
        const auto count = nested ? 1 : static_cast<std::size_t>(rng_.between(1, 2));
        for (std::size_t i = 0; i < count; ++i) s.body.push_back(leaf());
        if (rng_.bernoulli(0.5)) {
            s.has_else = true;
            for (std::size_t i = 0; i < count; ++i) s.else_body.push_back(leaf());
        }
        return s;
    }

    Stmt loop(bool foreach) {
        Stmt s;
        s.kind = foreach ? Stmt::Kind::Foreach : Stmt::Kind::For;
        const auto count = static_cast<std::size_t>(rng_.between(1, 3));
        for (std::size_t i = 0; i < count; ++i) {
            const double r = rng_.uniform();
            s.body.push_back(r < 0.7 ? atom() : r < 0.85 ? helper() : branch(true));
        }
        return s;
    }

    Stmt top_level() {
        const double r = rng_.uniform();
        if (r < 0.45) return atom();
        if (r < 0.6) return helper();
        if (r < 0.75) return loop(false);
        if (r < 0.9) return loop(true);
        return branch(false);
    }

    Method method() {
        Method m;
        const auto count = static_cast<std::size_t>(rng_.between(3, 6));
        for (std::size_t i = 0; i < count; ++i) m.stmts.push_back(top_level());
        // At least two independent input sources, so a method has enough
        // distinct traces: a loop plus a second loop or a branch.
        if (!has_kind(m.stmts, Stmt::Kind::For) && !has_kind(m.stmts, Stmt::Kind::Foreach)) {
            m.stmts[rng_.below(m.stmts.size())] = loop(rng_.bernoulli(0.5));
        }
        while (variation_sources(m.stmts) < 2) {
            const double r = rng_.uniform();
            const Stmt extra = r < 0.4 ? loop(false) : r < 0.8 ? loop(true) : branch(false);
            m.stmts.insert(m.stmts.begin() + static_cast<std::ptrdiff_t>(rng_.below(m.stmts.size() + 1)), extra);
        }
        choose_return(m);
        return m;
    }

    void choose_return(Method& m) {
        std::vector<Need> used;
        collect_needs(m.stmts, used);
        std::vector<std::size_t> options{0};
        for (std::size_t r = 1; r < returns().size(); ++r) {
            if (std::find(used.begin(), used.end(), returns()[r].need) != used.end()) options.push_back(r);
        }
        m.ret = options[rng_.below(options.size())];
    }

    // One or two local edits; returns their descriptions.
    std::vector<std::string> mutate(Method& m) {
        std::vector<std::string> edits;
        const std::size_t count = rng_.bernoulli(0.5) ? 2 : 1;
        while (edits.size() < count) {
            const auto op = rng_.below(4);
            if (op == 0) {
                std::vector<Stmt*> leaves;
                collect_leaves(m.stmts, leaves);
                if (leaves.empty()) continue;
                Stmt* target = leaves[rng_.below(leaves.size())];
                Stmt replacement = leaf();
                if (replacement.kind == target->kind && replacement.index == target->index) continue;
                *target = replacement;
                edits.push_back("replace");
            } else if (op == 1) {
                const auto at = rng_.below(m.stmts.size() + 1);
                m.stmts.insert(m.stmts.begin() + static_cast<std::ptrdiff_t>(at), leaf());
                edits.push_back("insert");
            } else if (op == 2) {
                std::vector<std::size_t> removable;
                for (std::size_t i = 0; i < m.stmts.size(); ++i) {
                    const auto k = m.stmts[i].kind;
                    if (k != Stmt::Kind::For && k != Stmt::Kind::Foreach) removable.push_back(i);
                }
                if (m.stmts.size() <= 2 || removable.empty()) continue;
                m.stmts.erase(m.stmts.begin() + static_cast<std::ptrdiff_t>(removable[rng_.below(removable.size())]));
                edits.push_back("delete");
            } else {
                if (m.stmts.size() < 2) continue;
                const auto at = rng_.below(m.stmts.size() - 1);
                std::swap(m.stmts[at], m.stmts[at + 1]);
                edits.push_back("swap");
            }
        }
        std::vector<Need> used;
        collect_needs(m.stmts, used);
        const Need r = returns()[m.ret].need;
        if (r != Need::None && std::find(used.begin(), used.end(), r) == used.end()) choose_return(m);
        return edits;
    }

private:
    Rng& rng_;

    static void collect_leaves(std::vector<Stmt>& stmts, std::vector<Stmt*>& out) {
        for (auto& s : stmts) {
            if (s.kind == Stmt::Kind::Atom || s.kind == Stmt::Kind::Helper) out.push_back(&s);
            collect_leaves(s.body, out);
            collect_leaves(s.else_body, out);
        }
    }
};

std::size_t poisson(Rng& rng, double lambda) {
    if (lambda <= 0.0) return 0;
    const double limit = std::exp(-lambda);
    double p = 1.0;
    std::size_t k = 0;
    do {
        ++k;
        p *= rng.uniform();
    } while (p > limit);
    return k - 1;
}

const std::vector<std::string> kVerbs = {"merge", "render", "collect", "scan",  "format", "split",
                                         "index", "filter", "build",  "count", "encode", "parse"};
const std::vector<std::string> kNouns = {"Tokens", "Names", "Lines", "Words", "Keys", "Labels", "Fields", "Parts"};
const std::string kParams = "(java.util.List, java.lang.String, int): java.lang.String";

ojson plan_json(const GenPlan& p) {
    ojson j;
    j["n_methods"] = p.n_methods;
    j["traces_per_method_mean"] = p.traces_per_method_mean;
    j["mutation_rate"] = p.mutation_rate;
    j["library_overlap"] = p.library_overlap;
    j["seed"] = p.seed;
    j["projects"] = p.projects;
    return j;
}

std::string md_calls(const std::vector<std::string>& calls) {
    if (calls.empty()) return "(none)";
    std::string out;
    for (std::size_t i = 0; i < calls.size(); ++i) {
        if (i) out += "<br>";
        out += "`" + calls[i] + "`";
    }
    return out;
}

void md_table(std::ostringstream& out, const std::string& title, const std::vector<Template>& rows) {
    out << "### " << title << "\n\n| Statement | Emitted calls |\n|---|---|\n";
    for (const auto& r : rows) out << "| `" << r.text << "` | " << md_calls(r.calls) << " |\n";
    out << "\n";
}

}  // namespace

void GenPlan::validate() const {
    if (n_methods == 0) throw ValidationError("n_methods must be at least 1");
    if (projects == 0) throw ValidationError("projects must be at least 1");
    if (!(traces_per_method_mean >= 1.0)) throw ValidationError("traces_per_method_mean must be at least 1");
    if (!(mutation_rate >= 0.0 && mutation_rate <= 1.0)) throw ValidationError("mutation_rate must lie in [0, 1]");
    if (!(library_overlap >= 0.0 && library_overlap <= 1.0)) throw ValidationError("library_overlap must lie in [0, 1]");
}

const GeneratedMethod* Manifest::find(const std::string& fqn) const {
    for (const auto& m : methods) {
        if (m.fqn == fqn) return &m;
    }
    return nullptr;
}

std::string Manifest::to_json() const {
    ojson j;
    j["plan"] = plan_json(plan);
    j["corpus_hash"] = hex64(corpus_hash);
    std::size_t records = 0;
    std::size_t library = 0;
    std::size_t mutants = 0;
    ojson methods_json = ojson::array();
    for (const auto& m : methods) {
        records += m.traces.size();
        library += m.library ? 1 : 0;
        mutants += m.mutant_of ? 1 : 0;
        ojson mj;
        mj["fqn"] = m.fqn;
        mj["name"] = m.name;
        mj["library"] = m.library;
        mj["projects"] = m.projects;
        mj["mutant_of"] = m.mutant_of ? ojson(*m.mutant_of) : ojson(nullptr);
        mj["edits"] = m.edits;
        mj["source"] = m.source;
        ojson traces = ojson::array();
        for (const auto& t : m.traces) {
            ojson tj;
            tj["record_id"] = t.record_id;
            tj["n"] = t.n;
            tj["items"] = t.items;
            tj["flags"] = t.flags;
            traces.push_back(std::move(tj));
        }
        mj["traces"] = std::move(traces);
        methods_json.push_back(std::move(mj));
    }
    j["counts"] = {{"methods", methods.size()}, {"records", records}, {"library_methods", library},
                   {"mutants", mutants}, {"signatures", signatures.size()}};
    j["methods"] = std::move(methods_json);
    ojson pairs_json = ojson::array();
    for (const auto& p : pairs) pairs_json.push_back({{"mutant", p.mutant}, {"original", p.original}, {"unrelated", p.unrelated}});
    j["pairs"] = std::move(pairs_json);
    j["signatures"] = signatures;
    return j.dump(2) + "\n";
}

Generated generate(const GenPlan& plan) {
    plan.validate();
    Rng rng(derive_seed(plan.seed, "synth"));
    Builder builder(rng);

    Generated out;
    out.manifest.plan = plan;
    std::vector<Method> models;
    std::vector<std::size_t> family;  // index of each method's non-mutant root
    std::unordered_set<std::string> seen_traces;  // joined event lines
    std::vector<std::size_t> project_counter(plan.projects, 0);
    auto project_name = [](std::size_t p) { return "synth-p" + std::to_string(p); };

    for (std::size_t mi = 0; mi < plan.n_methods; ++mi) {
        GeneratedMethod gm;
        Method model;
        std::size_t root = mi;
        if (mi > 0 && rng.bernoulli(plan.mutation_rate)) {
            std::vector<std::size_t> originals;
            for (std::size_t k = 0; k < mi; ++k) {
                if (!out.manifest.methods[k].mutant_of) originals.push_back(k);
            }
            const std::size_t original = originals[rng.below(originals.size())];
            model = models[original];
            gm.edits = builder.mutate(model);
            gm.mutant_of = out.manifest.methods[original].fqn;
            root = family[original];
        } else {
            model = builder.method();
        }

        gm.name = kVerbs[rng.below(kVerbs.size())] + kNouns[rng.below(kNouns.size())] + std::to_string(mi);
        gm.library = plan.projects > 1 && rng.bernoulli(plan.library_overlap);
        std::vector<std::size_t> projects;
        std::string class_name;
        if (gm.library) {
            const auto k = static_cast<std::size_t>(rng.between(2, static_cast<std::int64_t>(plan.projects)));
            projects = rng.sample_without_replacement(plan.projects, k);
            class_name = "org.synth.lib.Lib" + std::to_string(mi % 7);
        } else {
            projects = {rng.below(plan.projects)};
            class_name = "org.synth.p" + std::to_string(projects[0]) + ".Util" + std::to_string(mi % 5);
        }
        gm.fqn = class_name + "." + gm.name + kParams;
        gm.source = render(model, gm.name);

        // Distinct input tuples in random order; keep traces that are new.
        const bool uses_n = has_kind(model.stmts, Stmt::Kind::For);
        const bool uses_items = has_kind(model.stmts, Stmt::Kind::Foreach);
        const std::size_t n_flags = count_ifs(model.stmts);
        std::vector<TraceInputs> tuples;
        const std::size_t flag_combos = std::size_t{1} << std::min<std::size_t>(n_flags, 6);
        for (std::size_t n = 0; n <= (uses_n ? kMaxIterations : 0); ++n) {
            for (std::size_t items = 0; items <= (uses_items ? kMaxIterations : 0); ++items) {
                for (std::size_t f = 0; f < flag_combos; ++f) {
                    TraceInputs t;
                    t.n = n;
                    t.items = items;
                    for (std::size_t b = 0; b < n_flags; ++b) t.flags.push_back(b < 6 && ((f >> b) & 1U));
                    tuples.push_back(std::move(t));
                }
            }
        }
        rng.shuffle(std::span<TraceInputs>(tuples));
        const std::size_t target = 1 + poisson(rng, plan.traces_per_method_mean - 1.0);

        for (auto& inputs : tuples) {
            if (gm.traces.size() >= target) break;
            auto events = emit(model, inputs);
            std::string key;
            for (const auto& e : events) key += e.to_line() + "\n";
            if (!seen_traces.insert(std::move(key)).second) continue;
            const std::size_t j = gm.traces.size();
            const std::size_t p = j < projects.size() ? projects[j] : projects[rng.below(projects.size())];
            TraceRecord r;
            char id[16];
            std::snprintf(id, sizeof id, "%05zu", project_counter[p]++);
            r.record_id = project_name(p) + "/" + id;
            r.project = project_name(p);
            r.test_case = class_name + "Test.test" + gm.name + "_" + std::to_string(j);
            r.method_fqn = gm.fqn;
            r.calls_with_boundaries = std::move(events);
            for (const auto& e : r.calls_with_boundaries) {
                if (!e.is_boundary) r.calls.push_back(e);
            }
            r.source = gm.source;
            r.max_depth = static_cast<std::uint64_t>(boundary_depth(r.calls_with_boundaries));
            inputs.record_id = r.record_id;
            gm.traces.push_back(inputs);
            out.corpus.records.push_back(std::move(r));
        }
        std::set<std::string> names;
        for (const auto& t : gm.traces) names.insert(t.record_id.substr(0, t.record_id.find('/')));
        gm.projects.assign(names.begin(), names.end());

        models.push_back(std::move(model));
        family.push_back(root);
        out.manifest.methods.push_back(std::move(gm));
    }

    // Controls: an unrelated method from a different mutation family.
    for (std::size_t mi = 0; mi < out.manifest.methods.size(); ++mi) {
        const auto& m = out.manifest.methods[mi];
        if (!m.mutant_of) continue;
        std::vector<std::size_t> unrelated;
        for (std::size_t k = 0; k < out.manifest.methods.size(); ++k) {
            if (family[k] != family[mi]) unrelated.push_back(k);
        }
        if (unrelated.empty()) continue;
        out.manifest.pairs.push_back({m.fqn, *m.mutant_of, out.manifest.methods[unrelated[rng.below(unrelated.size())]].fqn});
    }

    std::unordered_set<std::string> known;
    for (const auto& r : out.corpus.records) {
        for (const auto& e : r.calls) {
            if (known.insert(e.signature).second) out.manifest.signatures.push_back(e.signature);
        }
    }
    validate_corpus(out.corpus);
    out.manifest.corpus_hash = corpus_hash(out.corpus);
    return out;
}

std::string emission_table_markdown() {
    std::ostringstream out;
    md_table(out, "Declarations", declarations());
    md_table(out, "Statements", atoms());
    md_table(out, "Conditions", conditions());
    md_table(out, "Returns", returns());
    out << "### Loops\n\n| Statement | Emitted calls |\n|---|---|\n";
    out << "| `" << kForHeader << "` | (none); body repeated `n` times |\n";
    out << "| `" << kForeachHeader << "` | `" << kIterator << "`, then per element `" << kHasNext << "`<br>`" << kNext
        << "`<br>body, then a final `" << kHasNext << "` |\n\n";
    out << "### Helpers\n\nThe statement `{x} = <name>({x});` emits `[CALL]`, the body below, then `[EXIT]`. "
           "A body entry `@<name>` is a nested helper call.\n\n| Helper | Body |\n|---|---|\n";
    for (const auto& h : helpers()) out << "| `" << h.name << "` | " << md_calls(h.body) << " |\n";
    return out.str();
}

}  // namespace tracefind
