#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace owdet {

// Word-level token table built from benchmark class names. Token 0 is the
// "." separator used between classes in a class sentence.
class Vocabulary {
public:
    Vocabulary() = default;
    static Vocabulary from_class_names(const std::vector<std::string>& names);
    static Vocabulary from_tokens(std::vector<std::string> tokens);

    int id(const std::string& token) const;
    const std::string& token(int id) const;
    bool contains(const std::string& token) const { return index_.count(token) != 0; }
    std::int64_t size() const { return static_cast<std::int64_t>(tokens_.size()); }
    const std::vector<std::string>& tokens() const { return tokens_; }
    static constexpr int kSeparatorId = 0;

private:
    std::vector<std::string> tokens_;
    std::map<std::string, int> index_;
};

// Class names joined by ". ", tokenized, with a contiguous token span per
// class. Separator tokens belong to no span.
struct ClassSentence {
    struct Span {
        std::int64_t begin = 0;
        std::int64_t end = 0;  // half-open
    };

    std::vector<std::string> class_names;
    std::string text;
    std::vector<int> token_ids;
    std::vector<Span> spans;  // parallel to class_names

    std::int64_t token_count() const { return static_cast<std::int64_t>(token_ids.size()); }
};

std::vector<std::string> split_words(const std::string& name);

ClassSentence build_class_sentence(const std::vector<std::string>& names, const Vocabulary& vocab);

}  // namespace owdet
