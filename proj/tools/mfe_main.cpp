#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "mfe/commands.hpp"

namespace {

int emit(const mfe::CommandResult& result, const std::string& out_path) {
  const std::string text = result.output.dump(2);
  if (out_path.empty()) {
    std::cout << text << "\n";
  } else {
    std::ofstream out(out_path);
    if (!out) {
      std::cerr << "cannot open output path: " << out_path << "\n";
      return 2;
    }
    out << text << "\n";
  }
  return result.exit_code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mean field equation laboratory"};
  app.require_subcommand(1);

  std::string config_path, out_path;
  std::uint64_t seed_value = 0;
  bool seed_given = false;

  const char* names[] = {"mesh_info", "verify_asymptotics", "solve", "mt_suite", "blowup"};
  const char* descs[] = {"mesh summary and first Laplace eigenvalue",
                         "bubble sweep slope verification",
                         "solve the mean field equation in the configured regime",
                         "Trudinger-type inequality sweep",
                         "blow-up family classification"};
  for (int i = 0; i < 5; ++i) {
    CLI::App* sub = app.add_subcommand(names[i], descs[i]);
    sub->add_option("--config", config_path, "JSON configuration file")->required();
    sub->add_option("--seed", seed_value, "override the config seed")
        ->each([&seed_given](const std::string&) { seed_given = true; });
    sub->add_option("--out", out_path, "write the JSON report here instead of stdout");
  }

  CLI11_PARSE(app, argc, argv);

  nlohmann::json config;
  {
    std::ifstream in(config_path);
    if (!in) {
      std::cerr << "cannot open config: " << config_path << "\n";
      return 2;
    }
    try {
      config = nlohmann::json::parse(in);
    } catch (const std::exception& e) {
      std::cerr << "config parse error: " << e.what() << "\n";
      return 2;
    }
  }

  std::optional<std::uint64_t> seed_override;
  if (seed_given) seed_override = seed_value;

  const std::string name = app.get_subcommands().front()->get_name();
  mfe::CommandResult result = mfe::run_command(name, config, seed_override);
  return emit(result, out_path);
}
