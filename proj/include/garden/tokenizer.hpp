#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace garden {

inline constexpr int kPadId = 0;
inline constexpr int kBosId = 1;
inline constexpr int kEosId = 2;
inline constexpr int kUnkId = 3;

/// Word-level vocabulary. Ids 0-3 are <pad>, <bos>, <eos>, <unk>; the
/// rest are corpus words in sorted order.
class Vocabulary {
 public:
  Vocabulary();
  explicit Vocabulary(std::vector<std::string> tokens);

  static Vocabulary build(const std::vector<std::string>& texts);
  static Vocabulary load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  int id(const std::string& word) const;
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  /// FNV-1a over the newline-joined token list.
  std::uint64_t hash() const;

  bool operator==(const Vocabulary& o) const { return tokens_ == o.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::map<std::string, int> index_;
};

/// Lowercases ASCII and splits on anything that is not a letter, digit or
/// a non-ASCII byte.
std::vector<std::string> split_words(const std::string& text);

/// <bos> words... <eos> padded with <pad> to `length`; long inputs are
/// truncated so that <eos> stays the last non-pad id.
std::vector<int> tokenize(const std::string& text, const Vocabulary& vocab, std::size_t length);

}  // namespace garden
