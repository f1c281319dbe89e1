#include "phonolens/error.hpp"

namespace phonolens {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::io: return "io error";
    case ErrorKind::parse: return "parse error";
    case ErrorKind::empty_lexicon: return "empty lexicon";
    case ErrorKind::not_found: return "not found";
    case ErrorKind::no_vowel: return "no vowel";
    case ErrorKind::kind: return "kind error";
    case ErrorKind::address: return "address error";
    case ErrorKind::shape: return "shape error";
    case ErrorKind::length: return "length error";
    case ErrorKind::index: return "index error";
    case ErrorKind::argument: return "argument error";
    case ErrorKind::tokenization: return "tokenization error";
    case ErrorKind::insufficient_data: return "insufficient data";
    case ErrorKind::training: return "training error";
    case ErrorKind::spec: return "spec error";
    case ErrorKind::pair: return "pair error";
    case ErrorKind::degenerate_pair: return "degenerate pair";
    case ErrorKind::degenerate_denominator: return "degenerate denominator";
    case ErrorKind::scan: return "scan error";
    case ErrorKind::insufficient_tokens: return "insufficient tokens";
    case ErrorKind::undefined_cosine: return "undefined cosine";
    case ErrorKind::collection: return "collection error";
    case ErrorKind::rank: return "rank error";
    case ErrorKind::gated_resource: return "gated resource";
    case ErrorKind::usage: return "usage error";
  }
  return "error";
}

}  // namespace phonolens
