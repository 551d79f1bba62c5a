#pragma once

#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "bmoe/ops.hpp"
#include "bmoe/rng.hpp"

namespace bmoe {

/// Malformed word-vector file; what() carries "path:line: reason".
class ParseError : public IoError {
public:
    ParseError(const std::string& source, std::size_t line, const std::string& reason)
        : IoError(source + ":" + std::to_string(line) + ": " + reason), line_(line) {}
    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

template <typename S>
Tensor<S> classification_loss(const Tensor<S>& logits, std::size_t label) {
    return cross_entropy(logits, label);
}

/// ||X_q - X_z||^2.
template <typename S>
Tensor<S> embedding_alignment_loss(const Tensor<S>& x_z, const Tensor<S>& x_q) {
    if (x_z.shape() != x_q.shape())
        throw DimensionError("embedding_alignment_loss: " + shape_str(x_z.shape()) + " vs " + shape_str(x_q.shape()));
    return squared_distance(x_q, x_z);
}

inline double combined_loss(double l_cls, double l_emb, double alpha) { return l_cls + alpha * l_emb; }

template <typename S>
Tensor<S> combined_loss(const Tensor<S>& l_cls, const Tensor<S>& l_emb, S alpha) {
    if (l_cls.size() != 1 || l_emb.size() != 1) throw DimensionError("combined_loss: inputs must be scalars");
    return add(l_cls, scale(l_emb, alpha));
}

enum class EmbeddingSource { File, Fallback };

struct LabelEmbeddingTable {
    std::size_t dim = 300;
    std::vector<std::vector<std::string>> words;  // per class
    std::vector<std::vector<double>> vectors;     // per class, mean of word vectors
    /// Per class: File when every word was found in the vector file.
    std::vector<EmbeddingSource> sources;

    template <typename S>
    Tensor<S> tensor(std::size_t c) const {
        return Tensor<S>({dim}, std::vector<S>(vectors.at(c).begin(), vectors.at(c).end()));
    }
};

/// Unit-norm Gaussian direction seeded by (seed, FNV-1a(word)).
inline std::vector<double> fallback_word_vector(const std::string& word, std::size_t dim, std::uint64_t seed) {
    Rng rng(derive_seed(seed, fnv1a(word)));
    std::vector<double> v(dim);
    double n2 = 0.0;
    for (auto& x : v) {
        x = rng.normal();
        n2 += x * x;
    }
    const double n = std::sqrt(n2);
    for (auto& x : v) x /= n;
    return v;
}

using WordVectors = std::map<std::string, std::vector<double>>;

/// Parses "word v1 v2 ... vE" lines. Blank lines are skipped; every other
/// line must have the same dimension.
inline WordVectors parse_word_vectors(std::istream& in, const std::string& source = "word vectors") {
    WordVectors out;
    std::string line;
    std::size_t lineno = 0, dim = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::istringstream ls(line);
        std::string word;
        if (!(ls >> word)) continue;
        std::vector<double> v;
        std::string tok;
        while (ls >> tok) {
            std::size_t used = 0;
            double x = 0.0;
            try {
                x = std::stod(tok, &used);
            } catch (const std::exception&) {
                used = 0;
            }
            if (used != tok.size() || !std::isfinite(x))
                throw ParseError(source, lineno, "\"" + tok + "\" is not a finite decimal");
            v.push_back(x);
        }
        if (v.empty()) throw ParseError(source, lineno, "word \"" + word + "\" has no vector components");
        if (dim == 0) dim = v.size();
        if (v.size() != dim)
            throw ParseError(source, lineno, "expected " + std::to_string(dim) + " components, found " +
                                                 std::to_string(v.size()));
        out[word] = std::move(v);
    }
    return out;
}

inline WordVectors load_word_vectors(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open word-vector file " + path);
    return parse_word_vectors(in, path);
}

/// Per class, the mean vector of its words. Words missing from `vectors`
/// use fallback_word_vector. With a non-empty vector set, its dimension
/// overrides `dim`.
inline LabelEmbeddingTable build_label_embeddings(const std::vector<std::vector<std::string>>& class_words,
                                                  const WordVectors& vectors = {}, std::size_t dim = 300,
                                                  std::uint64_t seed = 0) {
    if (!vectors.empty()) dim = vectors.begin()->second.size();
    if (dim == 0) throw ContractError("build_label_embeddings: dimension must be positive");
    LabelEmbeddingTable t;
    t.dim = dim;
    for (std::size_t c = 0; c < class_words.size(); ++c) {
        const auto& words = class_words[c];
        if (words.empty()) throw ContractError("build_label_embeddings: class " + std::to_string(c) + " has no words");
        std::vector<double> mean(dim, 0.0);
        bool all_found = true;
        for (const auto& w : words) {
            const auto it = vectors.find(w);
            const std::vector<double> v = it != vectors.end() ? it->second : fallback_word_vector(w, dim, seed);
            all_found = all_found && it != vectors.end();
            for (std::size_t i = 0; i < dim; ++i) mean[i] += v[i];
        }
        for (auto& x : mean) x /= static_cast<double>(words.size());
        t.words.push_back(words);
        t.vectors.push_back(std::move(mean));
        t.sources.push_back(all_found && !vectors.empty() ? EmbeddingSource::File : EmbeddingSource::Fallback);
    }
    return t;
}

}  // namespace bmoe
