#include "convqa/fingerprint.hpp"

#include <fstream>
#include <iomanip>
#include <sstream>

#include <openssl/evp.h>

#include "convqa/errors.hpp"

namespace convqa {

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error("SHA-256 computation failed");
  }
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) {
    os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  }
  return os.str();
}

std::string file_sha256(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return sha256_hex(buf.str());
}

std::string corpus_fingerprint(const std::vector<Conversation>& convs) {
  return sha256_hex(serialize_coqa(convs));
}

std::string vocab_fingerprint(const Vocab& vocab) {
  std::string joined;
  for (const auto& t : vocab.tokens()) {
    joined += t;
    joined.push_back('\n');
  }
  return sha256_hex(joined);
}

}  // namespace convqa
