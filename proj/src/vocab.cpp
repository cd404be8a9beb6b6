#include "avcap/vocab.hpp"

#include <cctype>

#include "avcap/errors.hpp"

namespace avcap {

Vocabulary::Vocabulary() {
  id_to_token_ = {"<pad>", "<sos>", "<eos>", "<unk>"};
  for (std::size_t i = 0; i < id_to_token_.size(); ++i) token_to_id_[id_to_token_[i]] = static_cast<int>(i);
}

std::vector<std::string> Vocabulary::normalize(const std::string& text) {
  std::vector<std::string> tokens;
  std::string cur;
  for (char ch : text) {
    const unsigned char u = static_cast<unsigned char>(ch);
    if (std::isalnum(u)) {
      cur.push_back(static_cast<char>(std::tolower(u)));
    } else if (std::isspace(u)) {
      if (!cur.empty()) {
        tokens.push_back(cur);
        cur.clear();
      }
    }
    // punctuation dropped
  }
  if (!cur.empty()) tokens.push_back(cur);
  return tokens;
}

void Vocabulary::add_caption(const std::string& text) {
  for (const std::string& tok : normalize(text))
    if (!token_to_id_.count(tok)) {
      token_to_id_[tok] = static_cast<int>(id_to_token_.size());
      id_to_token_.push_back(tok);
    }
}

int Vocabulary::id(const std::string& token) const {
  auto it = token_to_id_.find(token);
  return it == token_to_id_.end() ? kUnkId : it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= id_to_token_.size())
    throw ContractError("vocabulary: id " + std::to_string(id) + " out of range");
  return id_to_token_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocabulary::encode(const std::string& text) const {
  std::vector<int> ids;
  for (const std::string& tok : normalize(text)) ids.push_back(id(tok));
  return ids;
}

std::string Vocabulary::decode(const std::vector<int>& ids) const {
  std::string out;
  for (int id : ids) {
    if (!out.empty()) out.push_back(' ');
    out += token(id);
  }
  return out;
}

}  // namespace avcap
