#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "convqa/corpus.hpp"

namespace convqa {

// Lowercase hex SHA-256 of the bytes.
std::string sha256_hex(std::string_view bytes);
std::string file_sha256(const std::filesystem::path& path);

// Content hash of a corpus, independent of JSON formatting.
std::string corpus_fingerprint(const std::vector<Conversation>& convs);
std::string vocab_fingerprint(const Vocab& vocab);

}  // namespace convqa
