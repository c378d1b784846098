#pragma once
// Helpers shared by the unit tests and the acceptance binary.

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <unistd.h>
#include <vector>

#include "krutrim/model.hpp"
#include "krutrim/rng.hpp"
#include "krutrim/tokenizer.hpp"

namespace testsupport {

namespace fs = std::filesystem;

class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = fs::temp_directory_path() /
            ("krutrim_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  fs::path path_;
};

inline std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

inline void spit(const fs::path& p, const std::string& s) {
  std::ofstream f(p, std::ios::binary);
  f << s;
}

inline krutrim::ModelConfig tiny_config(int vocab = 40, int layers = 2) {
  krutrim::ModelConfig c;
  c.n_layers = layers;
  c.n_heads = 4;
  c.n_kv_heads = 2;
  c.hidden_dim = 32;
  c.max_seq_len = 32;
  c.vocab_size = vocab;
  return c;
}

inline std::vector<int> random_tokens(krutrim::Pcg32& rng, std::size_t n, int vocab) {
  std::vector<int> t(n);
  for (auto& x : t) x = static_cast<int>(rng.bounded(static_cast<std::uint32_t>(vocab)));
  return t;
}

inline std::vector<double> random_vector(krutrim::Pcg32& rng, std::size_t n, double scale = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal() * scale;
  return v;
}

// Random UTF-8 text mixing ASCII, whitespace, Devanagari, Tamil, Telugu and
// arbitrary scalar values.
inline std::string random_utf8(krutrim::Pcg32& rng, std::size_t max_len) {
  std::u32string s;
  const std::size_t len = rng.bounded(static_cast<std::uint32_t>(max_len + 1));
  for (std::size_t i = 0; i < len; ++i) {
    char32_t cp = 0;
    switch (rng.bounded(7)) {
      case 0: cp = 0x20 + rng.bounded(0x5F); break;
      case 1: cp = U" \t\n 　"[rng.bounded(5)]; break;
      case 2: cp = 0x0900 + rng.bounded(0x80); break;
      case 3: cp = 0x0B80 + rng.bounded(0x80); break;
      case 4: cp = 0x0C00 + rng.bounded(0x80); break;
      case 5: cp = 0x61 + rng.bounded(26); break;
      default:
        do {
          cp = rng.bounded(0x110000);
        } while (cp >= 0xD800 && cp <= 0xDFFF);
    }
    s.push_back(cp);
  }
  std::string out;
  for (char32_t cp : s) {
    if (cp < 0x80) {
      out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
      out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
      out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else if (cp < 0x10000) {
      out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
      out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
      out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else {
      out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
      out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
      out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
      out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    }
  }
  return out;
}

// Reference multi-head attention written directly from the definition:
// softmax(q k^T / sqrt(d) - slope_h * (i - j)) v with causal masking, query i
// sitting at absolute position k_len - q_len + i. Query head h reads KV head
// h / (n_heads / n_kv_heads).
inline std::vector<double> reference_attention(const std::vector<double>& q,
                                               const std::vector<double>& k,
                                               const std::vector<double>& v, int q_len,
                                               int k_len, int n_heads, int n_kv_heads,
                                               int head_dim) {
  std::vector<double> out(static_cast<std::size_t>(q_len) * n_heads * head_dim, 0.0);
  const int group = n_heads / n_kv_heads;
  for (int h = 0; h < n_heads; ++h) {
    const double slope = std::pow(2.0, -8.0 * (h + 1) / n_heads);
    const int kvh = h / group;
    for (int i = 0; i < q_len; ++i) {
      const int pos = k_len - q_len + i;
      std::vector<double> w(k_len, 0.0);
      double mx = -1e300;
      for (int j = 0; j <= pos; ++j) {
        double s = 0.0;
        for (int d = 0; d < head_dim; ++d) {
          s += q[(static_cast<std::size_t>(i) * n_heads + h) * head_dim + d] *
               k[(static_cast<std::size_t>(j) * n_kv_heads + kvh) * head_dim + d];
        }
        w[j] = s / std::sqrt(static_cast<double>(head_dim)) - slope * (pos - j);
        mx = std::max(mx, w[j]);
      }
      double z = 0.0;
      for (int j = 0; j <= pos; ++j) z += (w[j] = std::exp(w[j] - mx));
      for (int j = 0; j <= pos; ++j) {
        for (int d = 0; d < head_dim; ++d) {
          out[(static_cast<std::size_t>(i) * n_heads + h) * head_dim + d] +=
              w[j] / z * v[(static_cast<std::size_t>(j) * n_kv_heads + kvh) * head_dim + d];
        }
      }
    }
  }
  return out;
}

}  // namespace testsupport
