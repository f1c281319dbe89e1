#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "phonolens/model.hpp"
#include "phonolens/phonetics.hpp"

namespace phonolens {

std::shared_ptr<const PhonemeInventory> english_us_inventory();

// --- tiny vocabulary -------------------------------------------------------

// 128-piece vocabulary shared by every synthetic model: BOS, UNK, single
// characters, the rhyme-prompt template words and 71 single-token words.
std::shared_ptr<const PieceTokenizer> tiny_tokenizer();

// WikiPron-style TSV covering the tiny vocabulary words plus a few words
// that do not fit in one tiny token.
const std::string& tiny_lexicon_tsv();
PronunciationLexicon tiny_lexicon();

// Rhyme classes of the tiny vocabulary: each class lists words with equal
// rhyme tails; the second word is the class's designated answer token.
const std::vector<std::vector<std::string>>& tiny_rhyme_classes();

// --- models ----------------------------------------------------------------

struct TinyModelOptions {
  int n_layers = 2;
  int n_heads = 4;
  int d_model = 32;
  int d_head = 8;
  int d_mlp = 64;
  float weight_scale = 0.3f;
};

// Deterministic random decoder-only model (tiny vocabulary, RMS norm,
// rotary positions, output-projection bias so per-head decomposition has a
// non-trivial bias term).
ModelHandle make_tiny_model(std::uint64_t seed, const TinyModelOptions& options = {});

// Tiny-sized model whose head `copy_head` attends from the final position to
// the rhyme target word and writes that word's rhyme-class code into a
// subspace the unembedding reads, so the answer is the class's designated
// rhyme. All other weights are small seeded noise.
struct CopyHeadModel {
  ModelHandle model;
  HeadId copy_head;
};
CopyHeadModel make_copy_head_model(std::uint64_t seed, HeadId copy_head = {1, 2},
                                   float noise = 0.02f);

// One-layer model over a 48-dim residual whose first 44 dims are the
// inventory's phoneme axes. Word embeddings are the multi-hot of their first
// pronunciation; one head copies the target word's phoneme axes to the final
// position and the unembedding reads each vowel axis into one designated
// token. Next-token argmax is therefore a linear read-off of the vowel bits.
struct VowelReadoutModel {
  ModelHandle model;
  std::map<std::string, TokenId> vowel_token;  // vowel symbol -> token id
  Matrix phoneme_axes;                          // 44 x d_model, unit rows
};
VowelReadoutModel make_vowel_readout_model();

// Model whose final-position logits are the given values for every prompt
// (unlisted tokens score 0).
ModelHandle make_fixed_logits_model(const std::map<TokenId, float>& logits);

}  // namespace phonolens
