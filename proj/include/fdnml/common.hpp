#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace fdnml {

// Error taxonomy. The CLI maps each type to a distinct exit code.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Raised by the pipeline runner; wraps the failing stage name.
struct StageError : std::runtime_error {
  StageError(std::string stage, const std::string& what)
      : std::runtime_error("[" + stage + "] " + what), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

// splitmix64 finalizer. Used to derive independent child seeds from a master
// seed: child(master, i) = splitmix64(master + (i + 1) * 0x9E3779B97F4A7C15).
uint64_t splitmix64(uint64_t x);
uint64_t derive_seed(uint64_t master, uint64_t index);
uint64_t derive_seed(uint64_t master, const std::string& label);

// Number of worker threads used by parallel_for. 0 means hardware concurrency.
void set_thread_count(std::size_t n);
std::size_t thread_count();

// Runs fn(i) for i in [0, n). Work is split in contiguous chunks; results must
// be written to preallocated per-index slots so the outcome does not depend on
// the number of threads. The first exception thrown by any worker is
// rethrown on the calling thread.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace fdnml
