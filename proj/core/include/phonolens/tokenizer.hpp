#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace phonolens {

using TokenId = std::int32_t;

class Tokenizer {
 public:
  virtual ~Tokenizer() = default;

  // Encodes plain text; never emits special tokens.
  virtual std::vector<TokenId> encode(std::string_view text) const = 0;
  // Surface bytes of one token (may be a partial UTF-8 sequence).
  virtual std::string token_text(TokenId id) const = 0;
  virtual std::optional<TokenId> bos() const = 0;
  virtual std::size_t vocab_size() const = 0;

  std::string decode(std::span<const TokenId> ids) const;
  // BOS (when defined) followed by encode(text).
  std::vector<TokenId> encode_prompt(std::string_view text) const;
};

// Greedy longest-match tokenizer over a fixed piece list; used by the tiny
// synthetic models. Characters with no matching piece map to `unk`.
class PieceTokenizer final : public Tokenizer {
 public:
  PieceTokenizer(std::vector<std::string> pieces, TokenId bos, TokenId unk);

  std::vector<TokenId> encode(std::string_view text) const override;
  std::string token_text(TokenId id) const override;
  std::optional<TokenId> bos() const override { return bos_; }
  std::size_t vocab_size() const override { return pieces_.size(); }
  std::optional<TokenId> find(std::string_view piece) const;
  const std::vector<std::string>& pieces() const { return pieces_; }

 private:
  std::vector<std::string> pieces_;
  TokenId bos_;
  TokenId unk_;
  std::unordered_map<std::string, TokenId> lookup_;
  std::size_t max_piece_bytes_ = 1;
};

// Byte-level BPE as stored in a Hugging Face `tokenizer.json` (GPT-2 byte
// alphabet, rank-ordered merges, Llama 3 pre-tokenization).
class BpeTokenizer final : public Tokenizer {
 public:
  static BpeTokenizer load(const std::filesystem::path& tokenizer_json);
  static BpeTokenizer from_json_text(std::string_view text);

  std::vector<TokenId> encode(std::string_view text) const override;
  std::string token_text(TokenId id) const override;
  std::optional<TokenId> bos() const override { return bos_; }
  std::size_t vocab_size() const override { return id_to_token_.size(); }

 private:
  std::vector<TokenId> encode_word(const std::string& byte_symbols) const;

  std::unordered_map<std::string, TokenId> vocab_;
  std::vector<std::string> id_to_token_;  // byte-alphabet form, or raw text for added tokens
  std::vector<bool> is_added_;
  std::map<std::pair<std::string, std::string>, int> merge_rank_;
  std::optional<TokenId> bos_;
  bool ignore_merges_ = false;
};

// Splits text the way the Llama 3 pre-tokenizer regex does.
std::vector<std::string> llama3_pretokenize(std::string_view text);

}  // namespace phonolens
