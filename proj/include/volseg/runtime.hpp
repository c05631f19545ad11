#pragma once

#include <cstdint>

namespace volseg {

// Deterministic mode pins every reduction to a fixed order and keeps the BLAS
// backend single-threaded. It starts enabled when VOLSEG_DETERMINISTIC=1.
bool deterministic();
void set_deterministic(bool on);

// Multiply-accumulate tally for the calling thread. Every GEMM and elementwise
// kernel adds its work here; the trainer turns deltas into nominal epoch costs.
std::uint64_t work_counter();
void add_work(std::uint64_t macs);

// Nominal throughput used to convert work_counter() deltas into seconds.
inline constexpr double kNominalMacsPerSecond = 1.0e9;

}  // namespace volseg
