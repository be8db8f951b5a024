#include "owdet/text.hpp"

#include <algorithm>
#include <set>

#include "owdet/errors.hpp"

namespace owdet {

std::vector<std::string> split_words(const std::string& name) {
    std::vector<std::string> words;
    std::string current;
    for (const char c : name) {
        if (c == ' ' || c == '\t' || c == '.') {
            if (!current.empty()) words.push_back(current);
            current.clear();
        } else {
            current.push_back(c);
        }
    }
    if (!current.empty()) words.push_back(current);
    return words;
}

Vocabulary Vocabulary::from_class_names(const std::vector<std::string>& names) {
    std::set<std::string> words;
    for (const auto& name : names)
        for (auto& w : split_words(name)) words.insert(w);
    std::vector<std::string> tokens;
    tokens.reserve(words.size() + 1);
    tokens.emplace_back(".");
    tokens.insert(tokens.end(), words.begin(), words.end());
    return from_tokens(std::move(tokens));
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
    Vocabulary v;
    v.tokens_ = std::move(tokens);
    for (std::size_t i = 0; i < v.tokens_.size(); ++i) {
        if (!v.index_.emplace(v.tokens_[i], static_cast<int>(i)).second)
            throw InputError("duplicate vocabulary token: " + v.tokens_[i]);
    }
    if (v.tokens_.empty() || v.tokens_[0] != ".")
        throw InputError("vocabulary must start with the '.' separator token");
    return v;
}

int Vocabulary::id(const std::string& token) const {
    const auto it = index_.find(token);
    if (it == index_.end()) throw InputError("token not in vocabulary: '" + token + "'");
    return it->second;
}

const std::string& Vocabulary::token(int id) const {
    if (id < 0 || id >= static_cast<int>(tokens_.size()))
        throw InputError("token id out of range: " + std::to_string(id));
    return tokens_[static_cast<std::size_t>(id)];
}

ClassSentence build_class_sentence(const std::vector<std::string>& names, const Vocabulary& vocab) {
    if (names.empty()) throw InputError("class sentence needs at least one class name");
    std::set<std::string> seen;
    for (const auto& name : names) {
        if (split_words(name).empty()) throw InputError("empty class name in sentence");
        if (!seen.insert(name).second) throw InputError("duplicate class name: '" + name + "'");
    }

    ClassSentence sentence;
    sentence.class_names = names;
    for (std::size_t i = 0; i < names.size(); ++i) {
        if (i) {
            sentence.text += ". ";
            sentence.token_ids.push_back(Vocabulary::kSeparatorId);
        }
        sentence.text += names[i];
        ClassSentence::Span span;
        span.begin = static_cast<std::int64_t>(sentence.token_ids.size());
        for (const auto& word : split_words(names[i])) sentence.token_ids.push_back(vocab.id(word));
        span.end = static_cast<std::int64_t>(sentence.token_ids.size());
        sentence.spans.push_back(span);
    }
    return sentence;
}

}  // namespace owdet
