#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include <doctest.h>

#include "phonolens/error.hpp"
#include "phonolens/phonetics.hpp"
#include "phonolens/synthetic.hpp"

namespace testutil {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("phonolens-test-" + std::to_string(rd()) + "-" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path write(const std::string& name, const std::string& content) const {
    const auto p = path_ / name;
    std::ofstream(p, std::ios::binary) << content;
    return p;
  }

 private:
  std::filesystem::path path_;
};

inline phonolens::PronunciationLexicon lexicon_from(const std::string& tsv) {
  std::istringstream in(tsv);
  return phonolens::parse_lexicon(in, phonolens::english_us_inventory());
}

inline const phonolens::PronunciationLexicon& tiny_lex() {
  static const phonolens::PronunciationLexicon lex = phonolens::tiny_lexicon();
  return lex;
}

// Runs `f` and checks it raises phonolens::Error of the given kind.
template <typename F>
void check_error(F&& f, phonolens::ErrorKind kind) {
  try {
    f();
    FAIL("expected error " << phonolens::to_string(kind));
  } catch (const phonolens::Error& e) {
    CHECK_MESSAGE(e.kind() == kind, e.what());
  }
}

}  // namespace testutil
