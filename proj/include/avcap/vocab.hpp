#pragma once

#include <map>
#include <string>
#include <vector>

#include "avcap/model.hpp"

namespace avcap {

// Token table with the four reserved ids up front. Ids are dense and assigned
// by first occurrence, so rebuilding from the same caption stream always
// yields the same mapping.
class Vocabulary {
 public:
  Vocabulary();

  // Lowercase, strip punctuation, split on whitespace.
  static std::vector<std::string> normalize(const std::string& text);

  void add_caption(const std::string& text);

  int id(const std::string& token) const;  // <unk> for unknown tokens
  const std::string& token(int id) const;
  std::size_t size() const { return id_to_token_.size(); }

  std::vector<int> encode(const std::string& text) const;
  std::string decode(const std::vector<int>& ids) const;

 private:
  std::vector<std::string> id_to_token_;
  std::map<std::string, int> token_to_id_;
};

}  // namespace avcap
