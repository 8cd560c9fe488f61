#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

namespace mfe {

// Exit codes shared by the command layer and the CLI:
//   0 success, all emitted verdicts pass
//   1 a verdict in the output is false
//   2 configuration or validation error
//   3 resolution guard violation
//   4 solver non-convergence (report still emitted)
struct CommandResult {
  int exit_code = 0;
  nlohmann::ordered_json output;
};

CommandResult cmd_mesh_info(const nlohmann::json& config, std::uint64_t seed);
CommandResult cmd_verify_asymptotics(const nlohmann::json& config, std::uint64_t seed);
CommandResult cmd_solve(const nlohmann::json& config, std::uint64_t seed);
CommandResult cmd_mt_suite(const nlohmann::json& config, std::uint64_t seed);
CommandResult cmd_blowup(const nlohmann::json& config, std::uint64_t seed);

// Dispatch by command name; seed_override takes precedence over the config's
// "seed" entry. Unknown names return exit 2.
CommandResult run_command(const std::string& name, const nlohmann::json& config,
                          std::optional<std::uint64_t> seed_override = std::nullopt);

}  // namespace mfe
