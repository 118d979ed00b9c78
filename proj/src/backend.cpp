#include "ttcap/backend.hpp"

#include <cctype>
#include <sstream>

namespace ttcap {

std::pair<std::string, bool> EncoderBackend::truncate_to_limit(const std::string& sentence) const {
    const int limit = text_token_limit();
    std::vector<std::string> tokens;
    std::string cur;
    for (char c : sentence) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            if (!cur.empty()) tokens.push_back(cur), cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    if (!cur.empty()) tokens.push_back(cur);
    if (int(tokens.size()) <= limit) return {sentence, false};
    std::ostringstream out;
    for (int i = 0; i < limit; ++i) {
        if (i > 0) out << ' ';
        out << tokens[size_t(i)];
    }
    return {out.str(), true};
}

}  // namespace ttcap
