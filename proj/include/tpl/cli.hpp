#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>

#include <json.hpp>

#include "tpl/data.hpp"
#include "tpl/evaluation.hpp"
#include "tpl/run.hpp"
#include "tpl/run_io.hpp"

namespace tpl::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitRuntime = 3;

// Entry point of the `tpl` binary. Never throws; failures are reported on
// `err` and mapped to the exit codes above.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

// NCL prefixes cached under `cache_dir`; the cache is discarded when its
// config copy differs from `config`.
NclReference load_or_train_ncl(const std::filesystem::path& cache_dir, const RunConfig& config,
                               const TaskStream& stream);

// Rows for every task-id score: per-task AUC, mean AUC and CIL Last ACC.
nlohmann::json ood_bench_report(const RunArtifacts& run, const TaskStream& stream);
std::string ood_bench_csv(const nlohmann::json& report);

nlohmann::json theory_report(const std::string& which, std::size_t samples, std::uint64_t seed);

// row,label,raw_f*,norm_f* for one task's split, under that task's gates.
std::string dump_features_csv(const RunArtifacts& run, const TaskStream& stream,
                              std::size_t task_index, bool test_split);

}  // namespace tpl::cli
