#include "tracefind/codebleu.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "tracefind/error.hpp"
#include "tracefind/hash.hpp"

namespace tracefind {

namespace {

using Gram = std::vector<std::string>;

std::map<Gram, std::size_t> count_ngrams(const TokenList& tokens, std::size_t n) {
    std::map<Gram, std::size_t> out;
    if (tokens.size() < n) return out;
    for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
        ++out[Gram(tokens.begin() + static_cast<std::ptrdiff_t>(i), tokens.begin() + static_cast<std::ptrdiff_t>(i + n))];
    }
    return out;
}

double brevity_penalty(std::size_t c, std::size_t r) {
    if (c == 0) return 0.0;
    if (c > r) return 1.0;
    return std::exp(1.0 - static_cast<double>(r) / static_cast<double>(c));
}

// Shared core: weight(gram) scales both the clipped matches and the total.
template <typename WeightFn>
double bleu_core(const TokenList& candidate, const TokenList& reference, std::size_t max_n, WeightFn&& weight) {
    if (candidate.empty() || reference.empty()) return 0.0;
    const std::size_t orders = std::min(max_n, candidate.size());
    double log_sum = 0.0;
    for (std::size_t n = 1; n <= orders; ++n) {
        const auto cand = count_ngrams(candidate, n);
        const auto ref = count_ngrams(reference, n);
        double matched = 0.0;
        double total = 0.0;
        for (const auto& [gram, count] : cand) {
            const double w = weight(gram);
            const auto it = ref.find(gram);
            const std::size_t clip = it == ref.end() ? 0 : std::min(count, it->second);
            matched += w * static_cast<double>(clip);
            total += w * static_cast<double>(count);
        }
        if (matched <= 0.0) return 0.0;
        log_sum += std::log(matched / total);
    }
    return brevity_penalty(candidate.size(), reference.size()) * std::exp(log_sum / static_cast<double>(orders));
}

std::uint64_t mix(std::uint64_t h, std::uint64_t v) {
    return fnv1a64(std::string_view(reinterpret_cast<const char*>(&v), sizeof v), h);
}

// ---- dataflow ----

class DataflowWalker {
public:
    explicit DataflowWalker(const java::SyntaxTree& tree) : tree_(tree) { collect_declared(0); }

    std::vector<std::string> run() {
        walk(0);
        return normalize();
    }

private:
    struct Edge {
        std::string var;
        std::string relation;
        std::vector<std::string> parents;
    };

    const java::SyntaxTree& tree_;
    std::unordered_set<std::string> declared_;
    std::vector<Edge> edges_;

    const java::SyntaxNode& node(std::size_t i) const { return tree_.nodes[i]; }

    // The declared name of a declarator-like node is its last Identifier child.
    std::string declared_name(std::size_t i) const {
        std::string name;
        for (std::size_t c : node(i).children) {
            if (node(c).kind == "Identifier") name = node(c).text;
        }
        return name;
    }

    void collect_declared(std::size_t i) {
        const auto& n = node(i);
        if (n.kind == "VariableDeclarator") {
            declared_.insert(node(n.children.front()).text);
        } else if (n.kind == "FormalParameter" || n.kind == "VarargsParameter" || n.kind == "CatchParameter" ||
                   n.kind == "EnhancedForVariable" || n.kind == "Resource") {
            const std::string name = declared_name(i);
            if (!name.empty()) declared_.insert(name);
        } else if (n.kind == "LambdaParameters") {
            for (std::size_t c : n.children) {
                if (node(c).kind == "Identifier") declared_.insert(node(c).text);
            }
        }
        for (std::size_t c : n.children) collect_declared(c);
    }

    bool is_variable(std::size_t i) const {
        return node(i).kind == "Name" && declared_.count(node(i).text) > 0;
    }

    void uses(std::size_t i, std::vector<std::string>& out) const {
        if (is_variable(i)) {
            if (std::find(out.begin(), out.end(), node(i).text) == out.end()) out.push_back(node(i).text);
            return;
        }
        for (std::size_t c : node(i).children) uses(c, out);
    }

    void emit(std::string var, std::string relation, std::vector<std::string> parents = {}) {
        edges_.push_back({std::move(var), std::move(relation), std::move(parents)});
    }

    void walk(std::size_t i) {
        const auto& n = node(i);
        if (n.kind == "VariableDeclarator") {
            const std::string& var = node(n.children.front()).text;
            if (n.children.size() > 1) {
                walk(n.children[1]);
                std::vector<std::string> from;
                uses(n.children[1], from);
                emit(var, "computedFrom", std::move(from));
            } else {
                emit(var, "declared");
            }
            return;
        }
        if (n.kind == "FormalParameter" || n.kind == "VarargsParameter" || n.kind == "CatchParameter") {
            emit(declared_name(i), "declared");
            return;
        }
        if (n.kind == "LambdaParameters") {
            for (std::size_t c : n.children) {
                if (node(c).kind == "Identifier") {
                    emit(node(c).text, "declared");
                } else {
                    walk(c);
                }
            }
            return;
        }
        if (n.kind == "EnhancedForStatement") {
            walk(n.children[1]);
            std::vector<std::string> from;
            uses(n.children[1], from);
            emit(declared_name(n.children[0]), "computedFrom", std::move(from));
            for (std::size_t k = 2; k < n.children.size(); ++k) walk(n.children[k]);
            return;
        }
        if (n.kind == "Resource" && n.children.size() >= 2 && node(n.children.back()).kind != "Identifier") {
            const std::size_t init = n.children.back();
            walk(init);
            std::vector<std::string> from;
            uses(init, from);
            emit(declared_name(i), "computedFrom", std::move(from));
            return;
        }
        if (n.kind == "AssignmentExpression" && is_variable(n.children[0])) {
            walk(n.children[1]);
            std::vector<std::string> from;
            const std::string& var = node(n.children[0]).text;
            if (n.text != "=") from.push_back(var);
            uses(n.children[1], from);
            emit(var, "computedFrom", std::move(from));
            return;
        }
        if ((n.kind == "PostfixExpression" || (n.kind == "UnaryExpression" && (n.text == "++" || n.text == "--"))) &&
            is_variable(n.children[0])) {
            const std::string& var = node(n.children[0]).text;
            emit(var, "computedFrom", {var});
            return;
        }
        if (is_variable(i)) {
            emit(n.text, "comesFrom", {n.text});
            return;
        }
        for (std::size_t c : n.children) walk(c);
    }

    std::vector<std::string> normalize() const {
        std::unordered_map<std::string, std::size_t> rename;
        auto canon = [&](const std::string& v) {
            auto [it, inserted] = rename.try_emplace(v, rename.size());
            return "v" + std::to_string(it->second);
        };
        std::vector<std::string> out;
        out.reserve(edges_.size());
        for (const auto& e : edges_) {
            std::string s = canon(e.var) + " " + e.relation;
            std::vector<std::string> parents;
            for (const auto& p : e.parents) parents.push_back(canon(p));
            std::sort(parents.begin(), parents.end());
            for (std::size_t k = 0; k < parents.size(); ++k) s += (k == 0 ? " " : ",") + parents[k];
            out.push_back(std::move(s));
        }
        return out;
    }
};

}  // namespace

double ngram_bleu(const TokenList& candidate, const TokenList& reference, std::size_t max_n) {
    return bleu_core(candidate, reference, max_n, [](const Gram&) { return 1.0; });
}

double weighted_ngram_bleu(const TokenList& candidate, const TokenList& reference,
                           const std::function<bool(std::string_view)>& is_keyword, double keyword_weight,
                           std::size_t max_n) {
    return bleu_core(candidate, reference, max_n, [&](const Gram& gram) {
        const bool has_keyword = std::any_of(gram.begin(), gram.end(), [&](const std::string& t) { return is_keyword(t); });
        return has_keyword ? keyword_weight : 1.0;
    });
}

std::vector<std::uint64_t> subtree_hashes(const java::SyntaxTree& tree) {
    std::vector<std::uint64_t> out(tree.nodes.size(), 0);
    std::vector<bool> done(tree.nodes.size(), false);
    std::function<std::uint64_t(std::size_t)> hash = [&](std::size_t i) -> std::uint64_t {
        if (done[i]) return out[i];
        const auto& n = tree.nodes[i];
        std::uint64_t h = fnv1a64(n.kind);
        h = mix(h, n.children.size());
        for (std::size_t c : n.children) h = mix(h, hash(c));
        out[i] = h;
        done[i] = true;
        return h;
    };
    for (std::size_t i = 0; i < tree.nodes.size(); ++i) hash(i);
    return out;
}

double syntax_match(const java::SyntaxTree& candidate, const java::SyntaxTree& reference) {
    const auto cand = subtree_hashes(candidate);
    const std::unordered_set<std::uint64_t> present(cand.begin(), cand.end());
    const auto ref = subtree_hashes(reference);
    if (ref.empty()) return 0.0;
    const auto found = std::count_if(ref.begin(), ref.end(), [&](std::uint64_t h) { return present.count(h) > 0; });
    return static_cast<double>(found) / static_cast<double>(ref.size());
}

std::vector<std::string> dataflow_edges(const java::SyntaxTree& tree) {
    return DataflowWalker(tree).run();
}

double dataflow_match(const std::vector<std::string>& candidate, const std::vector<std::string>& reference) {
    if (reference.empty()) return -1.0;
    std::multiset<std::string> pool(candidate.begin(), candidate.end());
    std::size_t matched = 0;
    for (const auto& edge : reference) {
        if (auto it = pool.find(edge); it != pool.end()) {
            pool.erase(it);
            ++matched;
        }
    }
    return static_cast<double>(matched) / static_cast<double>(reference.size());
}

void CodeBleuWeights::validate() const {
    for (double w : {alpha, beta, gamma, delta}) {
        if (!(w >= 0.0)) throw ValidationError("codebleu weights must be nonnegative");
    }
    if (std::abs(alpha + beta + gamma + delta - 1.0) > 1e-9) {
        throw ValidationError("codebleu weights must sum to 1");
    }
}

CodeBleuWeights CodeBleuWeights::parse(std::string_view text) {
    std::vector<double> values;
    std::stringstream in{std::string(text)};
    std::string part;
    while (std::getline(in, part, ',')) {
        try {
            std::size_t used = 0;
            values.push_back(std::stod(part, &used));
            if (used != part.size()) throw std::invalid_argument(part);
        } catch (const std::exception&) {
            throw ValidationError("invalid weight '" + part + "'");
        }
    }
    if (values.size() != 4) throw ValidationError("expected four comma-separated weights");
    CodeBleuWeights w{values[0], values[1], values[2], values[3]};
    w.validate();
    return w;
}

CodeAnalysis analyze(std::string_view source) {
    CodeAnalysis a;
    a.tokens = java::code_tokens(source);
    auto outcome = java::parse_java_subset(source);
    if (auto* failure = std::get_if<java::ParseFailure>(&outcome)) {
        a.parse_error = failure->message();
        return a;
    }
    const auto& tree = std::get<java::SyntaxTree>(outcome);
    a.parsed = true;
    a.subtrees = subtree_hashes(tree);
    a.subtree_set = a.subtrees;
    std::sort(a.subtree_set.begin(), a.subtree_set.end());
    a.subtree_set.erase(std::unique(a.subtree_set.begin(), a.subtree_set.end()), a.subtree_set.end());
    a.dataflow = dataflow_edges(tree);
    return a;
}

CodeBleuResult codebleu(const CodeAnalysis& candidate, const CodeAnalysis& reference, const CodeBleuWeights& weights) {
    weights.validate();
    CodeBleuResult r;
    r.ngram = ngram_bleu(candidate.tokens, reference.tokens);
    r.weighted_ngram = weighted_ngram_bleu(candidate.tokens, reference.tokens);
    CodeBleuWeights w = weights;

    if (!candidate.parsed || !reference.parsed) {
        r.fallback_used = true;
        const double lexical = w.alpha + w.beta;
        if (lexical > 0.0) {
            w = {w.alpha / lexical, w.beta / lexical, 0.0, 0.0};
        } else {
            w = {0.5, 0.5, 0.0, 0.0};
        }
    } else {
        if (!reference.subtrees.empty()) {
            const auto found = std::count_if(reference.subtrees.begin(), reference.subtrees.end(), [&](std::uint64_t h) {
                return std::binary_search(candidate.subtree_set.begin(), candidate.subtree_set.end(), h);
            });
            r.syntax = static_cast<double>(found) / static_cast<double>(reference.subtrees.size());
        }
        const double df = dataflow_match(candidate.dataflow, reference.dataflow);
        if (df < 0.0) {
            r.dataflow_excluded = true;
            const double rest = w.alpha + w.beta + w.gamma;
            if (rest > 0.0) {
                w = {w.alpha / rest, w.beta / rest, w.gamma / rest, 0.0};
            } else {
                w = {1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, 0.0};
            }
        } else {
            r.dataflow = df;
        }
    }
    r.effective = w;
    r.score = 100.0 * (w.alpha * r.ngram + w.beta * r.weighted_ngram + w.gamma * r.syntax + w.delta * r.dataflow);
    return r;
}

CodeBleuResult codebleu(std::string_view candidate, std::string_view reference, const CodeBleuWeights& weights) {
    weights.validate();
    return codebleu(analyze(candidate), analyze(reference), weights);
}

}  // namespace tracefind
