#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace fairdec {

// Deterministic RNG. Wraps mt19937_64 but derives uniform/normal draws itself
// so results do not depend on the standard library's distribution internals.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // [0, 1) with 53 bits of precision
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // [0, n), n > 0
  std::size_t uniform_index(std::size_t n);

  double normal();

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[uniform_index(i)]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// Stable mix of a base seed with stream indices, for paired sampling.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0);

Eigen::VectorXd softmax(const Eigen::VectorXd& logits);

// Inverse-CDF sample from a probability vector.
std::size_t sample_categorical(const Eigen::VectorXd& probs, Rng& rng);

std::uint64_t fnv1a(std::string_view s);
std::string hex64(std::uint64_t v);

// Provenance stamped into every artifact a command writes.
struct ArtifactMeta {
  std::string config_hash;
  std::uint64_t seed = 0;
};

std::string to_lower(std::string_view s);
std::vector<std::string> split_ws(std::string_view line);
std::vector<std::string> split_char(std::string_view line, char sep);
std::string join(const std::vector<std::string>& parts, std::string_view sep);
std::string trim(std::string_view s);

// Shortest decimal form that parses back to the same double.
std::string format_double(double v);

std::vector<std::string> read_lines(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& content);
std::string read_text_file(const std::filesystem::path& path);

void log_warn(const std::string& msg);
void log_info(const std::string& msg);
void set_quiet(bool quiet);

// Runs fn(i) for i in [0, n). jobs <= 1 stays on the calling thread; results
// must be written to slot i only so ordering stays deterministic.
void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn);

}
