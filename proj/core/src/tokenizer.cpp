#include "phonolens/tokenizer.hpp"

#include <unicode/uchar.h>
#include <unicode/utf8.h>

#include <algorithm>
#include <fstream>
#include <limits>
#include <sstream>

#include <nlohmann/json.hpp>

#include "phonolens/error.hpp"

namespace phonolens {

using nlohmann::json;

std::string Tokenizer::decode(std::span<const TokenId> ids) const {
  std::string out;
  for (TokenId id : ids) out += token_text(id);
  return out;
}

std::vector<TokenId> Tokenizer::encode_prompt(std::string_view text) const {
  std::vector<TokenId> ids;
  if (auto b = bos()) ids.push_back(*b);
  auto body = encode(text);
  ids.insert(ids.end(), body.begin(), body.end());
  return ids;
}

// ---------------------------------------------------------------------------
// PieceTokenizer

PieceTokenizer::PieceTokenizer(std::vector<std::string> pieces, TokenId bos, TokenId unk)
    : pieces_(std::move(pieces)), bos_(bos), unk_(unk) {
  for (std::size_t i = 0; i < pieces_.size(); ++i) {
    const auto id = static_cast<TokenId>(i);
    if (id == bos_ || id == unk_) continue;
    require(lookup_.emplace(pieces_[i], id).second, ErrorKind::argument,
            "duplicate piece '" + pieces_[i] + "'");
    max_piece_bytes_ = std::max(max_piece_bytes_, pieces_[i].size());
  }
}

std::vector<TokenId> PieceTokenizer::encode(std::string_view text) const {
  std::vector<TokenId> ids;
  std::size_t i = 0;
  while (i < text.size()) {
    std::size_t len = std::min(max_piece_bytes_, text.size() - i);
    bool matched = false;
    for (; len > 0; --len) {
      auto it = lookup_.find(std::string(text.substr(i, len)));
      if (it != lookup_.end()) {
        ids.push_back(it->second);
        i += len;
        matched = true;
        break;
      }
    }
    if (!matched) {
      // skip one UTF-8 code point
      std::size_t step = 1;
      const auto lead = static_cast<unsigned char>(text[i]);
      if (lead >= 0xF0) step = 4;
      else if (lead >= 0xE0) step = 3;
      else if (lead >= 0xC0) step = 2;
      ids.push_back(unk_);
      i += std::min(step, text.size() - i);
    }
  }
  return ids;
}

std::string PieceTokenizer::token_text(TokenId id) const {
  require(id >= 0 && static_cast<std::size_t>(id) < pieces_.size(), ErrorKind::index,
          "token id " + std::to_string(id) + " out of range");
  return pieces_[static_cast<std::size_t>(id)];
}

std::optional<TokenId> PieceTokenizer::find(std::string_view piece) const {
  auto it = lookup_.find(std::string(piece));
  if (it == lookup_.end()) return std::nullopt;
  return it->second;
}

// ---------------------------------------------------------------------------
// pre-tokenization

namespace {

struct CodePoint {
  UChar32 c;
  std::size_t begin;
  std::size_t end;
};

std::vector<CodePoint> code_points(std::string_view text) {
  std::vector<CodePoint> out;
  const auto* s = reinterpret_cast<const uint8_t*>(text.data());
  const auto n = static_cast<int32_t>(text.size());
  int32_t i = 0;
  while (i < n) {
    const int32_t start = i;
    UChar32 c = 0;
    U8_NEXT(s, i, n, c);
    if (c < 0) c = 0xFFFD;
    out.push_back({c, static_cast<std::size_t>(start), static_cast<std::size_t>(i)});
  }
  return out;
}

bool is_letter(UChar32 c) { return (U_GET_GC_MASK(c) & U_GC_L_MASK) != 0; }
bool is_number(UChar32 c) { return (U_GET_GC_MASK(c) & U_GC_N_MASK) != 0; }
bool is_space(UChar32 c) { return u_isUWhiteSpace(c) != 0; }
bool is_newline(UChar32 c) { return c == '\r' || c == '\n'; }

// Length (in code points) of the pre-token starting at `i`.
std::size_t match_at(const std::vector<CodePoint>& cps, std::size_t i) {
  const std::size_t n = cps.size();
  auto at = [&](std::size_t k) -> UChar32 { return k < n ? cps[k].c : -1; };

  // (?i:'s|'t|'re|'ve|'m|'ll|'d)
  if (at(i) == '\'') {
    auto lower = [&](std::size_t k) { return k < n ? u_tolower(at(k)) : -1; };
    const UChar32 a = lower(i + 1);
    const UChar32 b = lower(i + 2);
    if (a == 's' || a == 't' || a == 'm' || a == 'd') return 2;
    if ((a == 'r' && b == 'e') || (a == 'v' && b == 'e') || (a == 'l' && b == 'l')) return 3;
  }
  // [^\r\n\p{L}\p{N}]?\p{L}+
  {
    std::size_t k = i;
    const UChar32 c = at(k);
    if (c >= 0 && !is_newline(c) && !is_letter(c) && !is_number(c) && is_letter(at(k + 1))) ++k;
    if (is_letter(at(k))) {
      while (k < n && is_letter(at(k))) ++k;
      return k - i;
    }
  }
  // \p{N}{1,3}
  if (is_number(at(i))) {
    std::size_t k = i;
    while (k < n && k - i < 3 && is_number(at(k))) ++k;
    return k - i;
  }
  // ' ?[^\s\p{L}\p{N}]+[\r\n]*'
  {
    auto punct = [&](std::size_t k) {
      const UChar32 c = at(k);
      return c >= 0 && !is_space(c) && !is_letter(c) && !is_number(c);
    };
    std::size_t k = i;
    if (at(k) == ' ' && punct(k + 1)) ++k;
    if (punct(k)) {
      while (k < n && punct(k)) ++k;
      while (k < n && is_newline(at(k))) ++k;
      return k - i;
    }
  }
  if (is_space(at(i))) {
    std::size_t run_end = i;
    while (run_end < n && is_space(at(run_end))) ++run_end;
    // \s*[\r\n]+
    for (std::size_t k = run_end; k-- > i;) {
      if (is_newline(at(k))) return k + 1 - i;
    }
    // \s+(?!\S)
    if (run_end == n) return run_end - i;
    if (run_end - i >= 2) return run_end - i - 1;
    // \s+
    return run_end - i;
  }
  return 1;
}

}  // namespace

std::vector<std::string> llama3_pretokenize(std::string_view text) {
  const auto cps = code_points(text);
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < cps.size()) {
    const std::size_t len = std::max<std::size_t>(1, match_at(cps, i));
    const std::size_t b = cps[i].begin;
    const std::size_t e = cps[i + len - 1].end;
    out.emplace_back(text.substr(b, e - b));
    i += len;
  }
  return out;
}

// ---------------------------------------------------------------------------
// BpeTokenizer

namespace {

// GPT-2 byte <-> printable code point mapping.
struct ByteAlphabet {
  std::array<std::string, 256> encode;
  std::unordered_map<UChar32, unsigned char> decode;

  ByteAlphabet() {
    int extra = 0;
    for (int b = 0; b < 256; ++b) {
      const bool direct = (b >= 33 && b <= 126) || (b >= 161 && b <= 172) || (b >= 174 && b <= 255);
      const UChar32 cp = direct ? b : 256 + extra++;
      char buf[4];
      int32_t len = 0;
      UBool err = false;
      U8_APPEND(reinterpret_cast<uint8_t*>(buf), len, 4, cp, err);
      encode[static_cast<std::size_t>(b)] = std::string(buf, static_cast<std::size_t>(len));
      decode[cp] = static_cast<unsigned char>(b);
    }
  }
};

const ByteAlphabet& byte_alphabet() {
  static const ByteAlphabet alphabet;
  return alphabet;
}

std::vector<std::string> split_code_points(const std::string& s) {
  std::vector<std::string> out;
  for (const auto& cp : code_points(s)) out.push_back(s.substr(cp.begin, cp.end - cp.begin));
  return out;
}

}  // namespace

BpeTokenizer BpeTokenizer::load(const std::filesystem::path& tokenizer_json) {
  std::ifstream in(tokenizer_json);
  if (!in) fail(ErrorKind::io, "cannot read " + tokenizer_json.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json_text(ss.str());
}

BpeTokenizer BpeTokenizer::from_json_text(std::string_view text) {
  BpeTokenizer tok;
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    fail(ErrorKind::parse, std::string("tokenizer.json: ") + e.what());
  }
  const auto& model = j.at("model");
  if (model.value("type", "BPE") != "BPE") fail(ErrorKind::parse, "tokenizer model is not BPE");
  tok.ignore_merges_ = model.value("ignore_merges", false);

  std::size_t max_id = 0;
  for (const auto& [piece, id] : model.at("vocab").items()) {
    max_id = std::max(max_id, id.get<std::size_t>());
  }
  if (j.contains("added_tokens")) {
    for (const auto& t : j.at("added_tokens")) max_id = std::max(max_id, t.at("id").get<std::size_t>());
  }
  tok.id_to_token_.assign(max_id + 1, std::string());
  tok.is_added_.assign(max_id + 1, false);
  for (const auto& [piece, id] : model.at("vocab").items()) {
    const auto i = id.get<TokenId>();
    tok.vocab_[piece] = i;
    tok.id_to_token_[static_cast<std::size_t>(i)] = piece;
  }
  if (j.contains("added_tokens")) {
    for (const auto& t : j.at("added_tokens")) {
      const auto i = t.at("id").get<std::size_t>();
      tok.id_to_token_[i] = t.at("content").get<std::string>();
      tok.is_added_[i] = true;
      const auto& content = tok.id_to_token_[i];
      if (content == "<|begin_of_text|>" || content == "<s>") tok.bos_ = static_cast<TokenId>(i);
    }
  }
  int rank = 0;
  for (const auto& m : model.at("merges")) {
    std::string a;
    std::string b;
    if (m.is_string()) {
      const auto s = m.get<std::string>();
      const auto sp = s.find(' ');
      if (sp == std::string::npos) fail(ErrorKind::parse, "malformed merge '" + s + "'");
      a = s.substr(0, sp);
      b = s.substr(sp + 1);
    } else {
      a = m.at(0).get<std::string>();
      b = m.at(1).get<std::string>();
    }
    tok.merge_rank_.emplace(std::make_pair(std::move(a), std::move(b)), rank++);
  }
  return tok;
}

std::vector<TokenId> BpeTokenizer::encode_word(const std::string& byte_symbols) const {
  if (ignore_merges_) {
    if (auto it = vocab_.find(byte_symbols); it != vocab_.end()) return {it->second};
  }
  auto parts = split_code_points(byte_symbols);
  while (parts.size() > 1) {
    int best_rank = std::numeric_limits<int>::max();
    std::size_t best = 0;
    for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
      auto it = merge_rank_.find({parts[i], parts[i + 1]});
      if (it != merge_rank_.end() && it->second < best_rank) {
        best_rank = it->second;
        best = i;
      }
    }
    if (best_rank == std::numeric_limits<int>::max()) break;
    const std::pair<std::string, std::string> pair{parts[best], parts[best + 1]};
    std::vector<std::string> merged;
    merged.reserve(parts.size());
    for (std::size_t i = 0; i < parts.size();) {
      if (i + 1 < parts.size() && parts[i] == pair.first && parts[i + 1] == pair.second) {
        merged.push_back(pair.first + pair.second);
        i += 2;
      } else {
        merged.push_back(parts[i]);
        ++i;
      }
    }
    parts = std::move(merged);
  }
  std::vector<TokenId> ids;
  for (const auto& p : parts) {
    auto it = vocab_.find(p);
    if (it == vocab_.end()) fail(ErrorKind::tokenization, "BPE symbol without vocab entry");
    ids.push_back(it->second);
  }
  return ids;
}

std::vector<TokenId> BpeTokenizer::encode(std::string_view text) const {
  const auto& alphabet = byte_alphabet();
  std::vector<TokenId> ids;
  for (const auto& word : llama3_pretokenize(text)) {
    std::string mapped;
    for (unsigned char b : word) mapped += alphabet.encode[b];
    auto part = encode_word(mapped);
    ids.insert(ids.end(), part.begin(), part.end());
  }
  return ids;
}

std::string BpeTokenizer::token_text(TokenId id) const {
  require(id >= 0 && static_cast<std::size_t>(id) < id_to_token_.size(), ErrorKind::index,
          "token id " + std::to_string(id) + " out of range");
  const auto& piece = id_to_token_[static_cast<std::size_t>(id)];
  if (is_added_[static_cast<std::size_t>(id)]) return piece;
  const auto& alphabet = byte_alphabet();
  std::string bytes;
  for (const auto& cp : code_points(piece)) {
    auto it = alphabet.decode.find(cp.c);
    if (it != alphabet.decode.end()) {
      bytes.push_back(static_cast<char>(it->second));
    } else {
      bytes += piece.substr(cp.begin, cp.end - cp.begin);
    }
  }
  return bytes;
}

}  // namespace phonolens
